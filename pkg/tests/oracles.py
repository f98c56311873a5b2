"""Independent oracles the test suite checks the implementation against.

Everything here is written the naive way, on purpose: plain recursion
and brute-force scans with no shared machinery from attestkit's
evaluator, registry, or policy engine beyond their public data types.
If an oracle and the implementation agree, they agree for independent
reasons.
"""

from __future__ import annotations

import fnmatch
import hashlib
import os


# --- recursive filesystem walk (measurement-spec oracle) -------------------

def walk_expectation(root: str) -> set[tuple[str, str, bytes]]:
    """What evaluating the recursive-hash program over ``root`` must yield.

    Returns a set of (asp_feature, address, evidence) triples:
    a dirlist entry for every directory reached without passing through
    a symlink, a sha1 entry for every regular file in those directories,
    and a bare success entry for anything else (symlinks included, which
    are never followed).
    """
    expected: set[tuple[str, str, bytes]] = set()

    def visit(path: str) -> None:
        if os.path.islink(path):
            expected.add(("success", path, b""))
            return
        if os.path.isfile(path):
            digest = hashlib.sha1()
            with open(path, "rb") as handle:
                digest.update(handle.read())
            expected.add(("sha1sum", path, digest.digest()))
            return
        if os.path.isdir(path):
            names = sorted(os.listdir(path))
            listing = "\n".join(names).encode("utf-8")
            expected.add(("dirlist", path, listing))
            for name in names:
                visit(os.path.join(path, name))
            return
        expected.add(("success", path, b""))

    visit(root)
    return expected


# --- registry reachability (invalidation-closure oracle) -------------------

def dependent_closure(edges: dict[str, set[str]], start: str) -> set[str]:
    """All nodes that can reach ``start`` through dependency edges.

    ``edges`` maps component -> the components it depends on. Plain
    fixed-point iteration, no reverse index.
    """
    closure: set[str] = set()
    changed = True
    while changed:
        changed = False
        for node, deps in edges.items():
            if node in closure:
                continue
            if start in deps or deps & closure:
                closure.add(node)
                changed = True
    return closure


# --- policy first-match (selection oracle) ---------------------------------

def naive_policy_action(rules, role, peer, strength, resource):
    """First-match scan re-done from scratch against raw rule tuples.

    ``rules`` rows are (role|None, peer_glob|None, min_strength|None,
    resource_glob|None, action); returns the first action whose
    non-None matchers all hold.
    """
    for r_role, r_peer, r_strength, r_resource, action in rules:
        if r_role is not None and role != r_role:
            continue
        if r_peer is not None and not fnmatch.fnmatchcase(peer, r_peer):
            continue
        if r_strength is not None and strength < r_strength:
            continue
        if r_resource is not None and not fnmatch.fnmatchcase(resource, r_resource):
            continue
        return action
    raise AssertionError("rule list had no catch-all")


def negotiation_expectation(appraiser_permitted, attester_permitted):
    """The agreed option two honest parties must land on.

    ``appraiser_permitted`` is the appraiser's ranked permitted list
    (already intersected with its registry); ``attester_permitted`` the
    attester's. Returns the appraiser's best-ranked common option, or
    None when the intersection is empty.
    """
    attester_set = set(attester_permitted)
    for option in appraiser_permitted:
        if option in attester_set:
            return option
    return None
