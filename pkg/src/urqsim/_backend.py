"""Kernel backend selection.

``URQSIM_BACKEND`` picks the implementation at import time:

* ``auto`` (default): compiled kernels if the extension is importable, else numpy
* ``compiled``: require the extension
* ``python``: always use the numpy fallback
"""
from __future__ import annotations

import importlib
import os
from types import ModuleType

_MODULES = {"compiled": "urqsim._kernels", "python": "urqsim._kernels_py"}


def load(name: str) -> ModuleType:
    if name not in _MODULES:
        raise ValueError(f"unknown backend {name!r}; expected one of {sorted(_MODULES)}")
    return importlib.import_module(_MODULES[name])


def available() -> list[str]:
    names = []
    for name in _MODULES:
        try:
            load(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select() -> ModuleType:
    choice = os.environ.get("URQSIM_BACKEND", "auto").strip().lower()
    if choice == "auto":
        try:
            return load("compiled")
        except ImportError:
            return load("python")
    return load(choice)


kernels = _select()
