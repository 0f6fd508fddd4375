"""19-core multicore fiber: hexagonal layout, opposite-core pairing, impairments."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import LayoutError, RangeError
from .hilbert import DensityOperator, LocalOperator, POLS, TwoPhotonState, apply_local, apply_local_state, check_unitary

CENTER = "C"

# Axial hex coordinates.  Inner-ring pairs 1, 2, 5 and outer-ring pairs
# 3, 4, 6, 7, 8, 9 sit at increasing angle; primes are the point reflections.
_HALF_LAYOUT = {
    "1": (1, 0), "2": (0, 1), "5": (-1, 1),
    "3": (2, 0), "4": (1, 1), "6": (0, 2), "7": (-1, 2), "8": (-2, 2), "9": (-2, 1),
}


def _build_layout():
    layout = {CENTER: (0, 0)}
    for name, (q, r) in _HALF_LAYOUT.items():
        layout[name] = (q, r)
        layout[name + "'"] = (-q, -r)
    return layout


LAYOUT: Mapping[str, tuple[int, int]] = MappingProxyType(_build_layout())
_BY_COORD = {xy: name for name, xy in LAYOUT.items()}


def ring(core: str) -> int:
    """0 for the center core, 1 for the inner ring, 2 for the outer ring."""
    q, r = _coords(core)
    return max(abs(q), abs(r), abs(q + r))


def cartesian(core: str, pitch: float = 1.0) -> tuple[float, float]:
    q, r = _coords(core)
    return (pitch * (q + r / 2), pitch * r * np.sqrt(3) / 2)


def neighbours(core: str) -> list[str]:
    q, r = _coords(core)
    steps = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))
    return [_BY_COORD[(q + dq, r + dr)] for dq, dr in steps if (q + dq, r + dr) in _BY_COORD]


def _coords(core) -> tuple[int, int]:
    try:
        return LAYOUT[str(core)]
    except KeyError:
        raise LayoutError(f"core {core!r} is not part of the 19-core layout") from None


def opposite_core(core: str) -> str:
    """Diametrically opposite core (point reflection through the center)."""
    q, r = _coords(core)
    return _BY_COORD[(-q, -r)]


def core_pairing() -> dict[str, str]:
    return {c: opposite_core(c) for c in LAYOUT}


@dataclass(frozen=True)
class FiberSpec:
    """Fiber impairments.  Cores absent from a mapping are ideal.

    ``crosstalk`` is an amplitude-coupling matrix indexed by ``core_ids``
    (column = input core, row = output core); ``None`` means identity.
    """

    length: float = 411.0
    loss_db: Mapping[str, float] = field(default_factory=dict)
    phase: Mapping[str, float] = field(default_factory=dict)
    pol_drift: Mapping[str, np.ndarray] = field(default_factory=dict)
    crosstalk: np.ndarray | None = None

    core_ids = tuple(LAYOUT)

    def __post_init__(self):
        for mapping in (self.loss_db, self.phase, self.pol_drift):
            for core in mapping:
                _coords(core)
        for core, U in self.pol_drift.items():
            check_unitary(U)
        for core, db in self.loss_db.items():
            if db < 0:
                raise RangeError(f"loss on core {core} must be >= 0 dB (passive fiber)")
        if self.crosstalk is not None:
            X = np.asarray(self.crosstalk, dtype=complex)
            n = len(self.core_ids)
            if X.shape != (n, n):
                raise RangeError(f"crosstalk matrix must be {n}x{n}")
            col_power = np.sum(np.abs(X) ** 2, axis=0)
            if np.any(col_power > 1 + 1e-12):
                raise RangeError("crosstalk columns must satisfy sum |c|^2 <= 1")
            # passivity needs X^dagger X <= 1, which column norms alone do not imply
            if np.linalg.norm(X, 2) > 1 + 1e-12:
                raise RangeError("crosstalk matrix amplifies some input superposition (largest singular value > 1)")
            object.__setattr__(self, "crosstalk", X)

    def amplitude(self, core: str) -> complex:
        return 10 ** (-self.loss_db.get(core, 0.0) / 20) * np.exp(1j * self.phase.get(core, 0.0))

    def local_operator(self) -> LocalOperator:
        index = {c: i for i, c in enumerate(self.core_ids)}
        X = self.crosstalk

        def act(lab):
            _coords(lab.core)
            a = self.amplitude(lab.core)
            U = self.pol_drift.get(lab.core)
            if U is None:
                pol_terms = [(lab.pol, 1.0)]
            else:
                col = POLS.index(lab.pol)
                pol_terms = [(p, U[row, col]) for row, p in enumerate(POLS) if U[row, col] != 0]
            if X is None:
                cores = [(lab.core, 1.0)]
            else:
                j = index[lab.core]
                cores = [(c, X[i, j]) for c, i in index.items() if X[i, j] != 0]
            return [(lab.replace(core=c, pol=p), a * cc * cp) for c, cc in cores for p, cp in pol_terms]

        return LocalOperator(act, None, "fiber")


def neighbour_crosstalk(kappa: float) -> np.ndarray:
    """Unitary coupled-mode crosstalk between hex neighbours.

    ``X = exp(-i sqrt(kappa) A)`` with ``A`` the adjacency matrix, so each
    neighbour receives a power fraction close to ``kappa`` for small
    ``kappa`` while the total power is conserved.  Independent real
    couplings per column would not be passive: their coherent sum can
    exceed unity.
    """
    if kappa < 0:
        raise RangeError("kappa must be non-negative")
    ids = FiberSpec.core_ids
    index = {c: i for i, c in enumerate(ids)}
    A = np.zeros((len(ids), len(ids)))
    for c in ids:
        for n in neighbours(c):
            A[index[n], index[c]] = 1.0
    lam, V = np.linalg.eigh(A)
    return (V * np.exp(-1j * np.sqrt(kappa) * lam)) @ V.T


def transmit(state, fiber: FiberSpec):
    """Propagate both photons through their cores.

    Loss and phase act first, then the per-core polarization drift, then
    crosstalk.  Trace never increases.
    """
    op = fiber.local_operator()
    if isinstance(state, TwoPhotonState):
        return apply_local_state(state, op, op)
    if not isinstance(state, DensityOperator):
        raise TypeError("transmit expects a TwoPhotonState or DensityOperator")
    for a, b in state.basis:
        _coords(a.core)
        _coords(b.core)
    return apply_local(state, op, op)
