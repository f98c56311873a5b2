// Vitest environment backed by the locally installed happy-dom build.
// The stock "happy-dom" environment name resolves the package relative
// to the vitest installation, which breaks when vitest is globally
// installed and happy-dom is project-local; loading happy-dom from this
// file pins resolution to the project tree.
import { populateGlobal } from "vitest/runtime";
import { Window } from "happy-dom";

export default {
  name: "local-happy-dom",
  viteEnvironment: "client",
  setup(global: any) {
    const win = new Window({ url: "http://localhost/" });
    const { keys, originals } = populateGlobal(global, win, {
      bindFunctions: true,
    });
    return {
      teardown(g: any) {
        win.happyDOM.abort();
        keys.forEach((k) => delete g[k]);
        originals.forEach((v: any, k: any) => {
          g[k] = v;
        });
      },
    };
  },
};
