"""Ragged-array kernels with a compiled backend and a numpy fallback.

The compiled extension (`corefx.kernels._cops`) implements the hot loops:
span head attention, segment softmax, the marginal antecedent loss, pair
feature assembly, and row scatter-adds.  `pyops` is a pure numpy port with
identical signatures.  The active backend is chosen once at import from
the COREFX_KERNELS environment variable ("c", "py", or unset for auto)
and can be switched at runtime with `use()`.

Both backends consume C-contiguous float64 / int64 arrays and produce
bitwise-identical results on the same inputs up to floating point
associativity; tests pin the two against each other.
"""

from __future__ import annotations

import os

from . import pyops

_BACKENDS: dict[str, object] = {"py": pyops}
try:  # pragma: no cover - exercised only when the extension is built
    from . import _cops

    _BACKENDS["c"] = _cops
except ImportError:
    _cops = None

_FUNCTIONS = (
    "attention_forward",
    "attention_backward",
    "segment_softmax",
    "marginal_log_loss",
    "pair_features",
    "pair_features_backward",
    "scatter_add_rows",
)


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def _pick_default() -> str:
    choice = os.environ.get("COREFX_KERNELS", "").strip().lower()
    if choice:
        if choice not in _BACKENDS:
            raise RuntimeError(
                f"COREFX_KERNELS={choice!r} is not available; "
                f"built backends: {', '.join(available_backends())}"
            )
        return choice
    return "c" if "c" in _BACKENDS else "py"


_active = _pick_default()


def use(name: str) -> None:
    """Switch the active backend ("c" or "py")."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown backend {name!r}; built backends: {', '.join(available_backends())}"
        )
    _active = name


def active() -> str:
    return _active


def get(name: str | None = None):
    """Return the backend module (active one by default)."""
    return _BACKENDS[_active if name is None else name]


def __getattr__(attr: str):
    if attr in _FUNCTIONS:
        return getattr(_BACKENDS[_active], attr)
    raise AttributeError(f"module {__name__!r} has no attribute {attr!r}")
