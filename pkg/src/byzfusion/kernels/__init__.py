"""Hot Monte Carlo loops.

Two interchangeable backends: numba-compiled loops (default) and a numpy
path that vectorises over verifiers / walks.  ``BYZFUSION_DISABLE_NUMBA=1``
selects the numpy path for the whole process; the ``backend`` argument
overrides it per call.  Both consume the random stream identically, so
results are bit-identical across backends.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy
from ._common import (
    CELL_NAMES, EVENT_NAMES, VERIFY_MODES,
)

try:  # pragma: no cover - exercised implicitly
    from . import _numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _numba = None
    HAVE_NUMBA = False

_DISABLED = os.environ.get("BYZFUSION_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
DEFAULT_BACKEND = "numba" if HAVE_NUMBA and not _DISABLED else "numpy"

MAX_KERNEL_CHUNK_BITS = 40


def _impl(backend: str | None):
    name = backend or DEFAULT_BACKEND
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return _numba
    if name == "numpy":
        return _numpy
    raise ValueError(f"unknown backend {name!r}")


def session_ideal(rng, chunks, false_chunks, lie_levels, *, half_split, space, j, k,
                  eps1, eps2, beta, offset, verify_mode, max_attempts, backend=None):
    """Run one ideal-code session; returns ``(error, attempts, aborted, counts)``.

    ``counts`` is a 4 x 6 table indexed by (cell, event) with the layouts
    named in ``CELL_NAMES`` and ``EVENT_NAMES``.
    """
    counts = np.zeros((len(CELL_NAMES), len(EVENT_NAMES)), dtype=np.int64)
    impl = _impl(backend)
    err, attempts, aborted = impl.session_ideal(
        rng,
        np.ascontiguousarray(chunks, dtype=np.int64),
        np.ascontiguousarray(false_chunks, dtype=np.int64),
        np.ascontiguousarray(lie_levels, dtype=np.int8),
        bool(half_split), int(space), int(j), int(k),
        float(eps1), float(eps2), float(beta), int(offset),
        int(verify_mode), int(max_attempts), counts,
    )
    return int(err), int(attempts), int(aborted), counts


def mdp_cuts(p1: float, p2: float, p3: float, beta: float, length_mode: bool):
    """Partitions of [0, 1) for one MDP transition.

    Honest (or truthful) transmitter, error mode: [0, c0) error, [c0, c1)
    decline to a Byzantine sensor, [c1, c2) decline to an honest one, rest
    advance.  Length mode: [0, c0) advance, [c0, c1) Byzantine, rest honest.
    Lying transmitter: [0, d0) false chunk accepted, [d0, d1) Byzantine
    again, rest honest.
    """
    if length_mode:
        honest = np.array([1.0 - p1, 1.0 - p1 + p1 * beta, 1.0])
    else:
        honest = np.array([p3, p3 + p1 * beta, p3 + p1])
    lie = np.array([p2, p2 + (1.0 - p2) * beta])
    return honest, lie


def mdp_walks(rng, mdp_params, policy, *, length_mode: bool, start: str, n_walks: int,
              max_rounds: int = 10_000_000, backend=None):
    """Forward Monte Carlo of the error or length MDP under a fixed policy.

    ``start`` is ``"honest"``, ``"byzantine"`` or ``"random"`` (Byzantine with
    probability beta).  Returns ``(error_flags, steps, unfinished)``.
    """
    m = mdp_params
    honest, lie = mdp_cuts(m.p1, m.p2, m.p3, m.beta, length_mode)
    code = {"honest": 0, "byzantine": 1, "random": 2}[start]
    impl = _impl(backend)
    err, steps, unfinished = impl.mdp_walks(
        rng, honest, lie, bool(length_mode), np.ascontiguousarray(policy, dtype=np.int8),
        int(m.v), code, float(m.beta), int(n_walks), int(max_rounds),
    )
    return np.asarray(err), np.asarray(steps), int(unfinished)


__all__ = [
    "CELL_NAMES", "EVENT_NAMES", "VERIFY_MODES", "DEFAULT_BACKEND", "HAVE_NUMBA",
    "MAX_KERNEL_CHUNK_BITS", "session_ideal", "mdp_walks", "mdp_cuts",
]
