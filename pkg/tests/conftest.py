import sys
from pathlib import Path

# Make the sibling oracle module importable from every test file.
sys.path.insert(0, str(Path(__file__).parent))

import pytest

from attestkit.registry import (
    ComponentKind,
    ComponentMetadata,
    PrivilegeManifest,
    Registry,
    register,
)


def make_meta(
    uuid,
    kind=ComponentKind.ASP,
    name=None,
    executable="/bin/true",
    asp_dependencies=(),
    supported_specs=(),
    feature_tags=(),
    manifest=None,
):
    """Terse metadata factory for registry-shaped tests."""
    if kind is ComponentKind.MEASUREMENT_SPEC:
        executable = None
    return ComponentMetadata(
        uuid=uuid,
        kind=kind,
        name=name or f"component-{uuid[:8]}",
        version="1.0",
        executable=executable,
        asp_dependencies=frozenset(asp_dependencies),
        supported_specs=frozenset(supported_specs),
        feature_tags=frozenset(feature_tags),
        privilege_manifest=manifest or PrivilegeManifest(),
    )


@pytest.fixture
def uuids():
    """A deterministic pool of canonical UUIDs."""
    return [f"{i:08x}-0000-4000-8000-{i:012x}" for i in range(64)]


@pytest.fixture
def small_registry(uuids):
    """Two ASPs, one spec, one APB depending on all of them."""
    reg = Registry()
    reg = register(reg, make_meta(uuids[0]))
    reg = register(reg, make_meta(uuids[1]))
    reg = register(reg, make_meta(uuids[2], kind=ComponentKind.MEASUREMENT_SPEC))
    reg = register(
        reg,
        make_meta(
            uuids[3],
            kind=ComponentKind.APB,
            asp_dependencies={uuids[0], uuids[1]},
            supported_specs={uuids[2]},
        ),
    )
    return reg
