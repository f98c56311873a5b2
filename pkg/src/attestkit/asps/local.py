"""In-process execution of specs against the local filesystem.

The LocalExecutor runs the same provider functions the child
executables use, minus the process boundary — the library surface for
"evaluate this spec right here", and the fast path for tests. The
guard predicates answer about the link itself (lstat semantics), which
is precisely why evaluation never follows symlinks.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Callable

from ..errors import UnknownAspFeatureError, UnknownPredicateError
from ..mspec import AspOutcome, MeasurementVariable
from .builtins import PROVIDERS

PREDICATES: dict[str, Callable[[MeasurementVariable], bool]] = {
    # lstat-based on purpose: a symlink is never "a regular file" or
    # "a directory" here, whatever it points at.
    "is_reg": lambda v: os.path.isfile(v.address) and not os.path.islink(v.address),
    "is_dir": lambda v: os.path.isdir(v.address) and not os.path.islink(v.address),
    "is_link": lambda v: os.path.islink(v.address),
    "exists": lambda v: os.path.lexists(v.address),
}


class LocalExecutor:
    """Feature dispatch straight into the builtin providers."""

    def __init__(self, workspace: str | Path = ".", features: dict | None = None):
        self.workspace = Path(workspace)
        self.features = dict(PROVIDERS if features is None else features)

    def predicate(self, name: str, variable: MeasurementVariable) -> bool:
        try:
            pred = PREDICATES[name]
        except KeyError:
            raise UnknownPredicateError(name) from None
        return pred(variable)

    def invoke(self, feature: str, variable: MeasurementVariable) -> AspOutcome:
        try:
            provider = self.features[feature]
        except KeyError:
            raise UnknownAspFeatureError(feature) from None
        return provider(variable, self.workspace)
