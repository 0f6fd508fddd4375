"""Exact two-photon state algebra over discrete mode labels.

A photon mode is labelled by the fiber core it occupies, its polarization and,
after an unbalanced interferometer, the arm (short or long) it took.  Pure
states are stored sparsely as ``(label_A, label_B) -> amplitude``; density
operators are dense matrices over an explicit tuple of label pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import BasisError, RangeError, UnitarityError, ZeroState

POLS = ("H", "V")
TIMEBINS = ("S", "L")

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-12
EIGEN_TOL = 1e-10


@dataclass(frozen=True)
class ModeLabel:
    """Single-photon mode: core identifier, polarization and optional time bin."""

    core: str
    pol: str = "H"
    timebin: str | None = None

    def __post_init__(self):
        if not isinstance(self.core, str):
            object.__setattr__(self, "core", str(self.core))
        if self.pol not in POLS:
            raise BasisError(f"polarization must be one of {POLS}, got {self.pol!r}")
        if self.timebin is not None and self.timebin not in TIMEBINS:
            raise BasisError(f"time bin must be None or one of {TIMEBINS}, got {self.timebin!r}")

    def replace(self, **changes) -> "ModeLabel":
        fields = {"core": self.core, "pol": self.pol, "timebin": self.timebin}
        fields.update(changes)
        return ModeLabel(**fields)

    def sort_key(self):
        return (self.core, self.pol, self.timebin or "")

    def __str__(self):
        tb = "" if self.timebin is None else f",{self.timebin}"
        return f"|{self.core}{self.pol}{tb}>"


Pair = tuple[ModeLabel, ModeLabel]


def pair_key(pair: Pair):
    return (pair[0].sort_key(), pair[1].sort_key())


def _structure(labels: Iterable[ModeLabel]) -> bool | None:
    """Return whether the labels carry time bins; reject a mix of both kinds."""
    kinds = {lab.timebin is not None for lab in labels}
    if len(kinds) > 1:
        raise BasisError("labels with and without time bins cannot share one state")
    return kinds.pop() if kinds else None


def _check_pairs(pairs: Iterable[Pair]) -> bool | None:
    labels = []
    for pair in pairs:
        if len(pair) != 2 or not all(isinstance(lab, ModeLabel) for lab in pair):
            raise BasisError(f"expected a pair of ModeLabel, got {pair!r}")
        labels.extend(pair)
    return _structure(labels)


def _compatible(s1: bool | None, s2: bool | None) -> bool:
    return s1 is None or s2 is None or s1 == s2


class TwoPhotonState:
    """Sparse, possibly sub-normalized two-photon pure state.

    Exact zero amplitudes are dropped on construction.  Instances are
    immutable; ``amplitudes`` is a read-only view.
    """

    __slots__ = ("_amps", "_timebinned")

    def __init__(self, amplitudes: Mapping[Pair, complex]):
        amps = {}
        for pair, amp in amplitudes.items():
            amp = complex(amp)
            if amp != 0:
                amps[tuple(pair)] = amps.get(tuple(pair), 0) + amp
        self._timebinned = _check_pairs(amps)
        self._amps = MappingProxyType(dict(sorted(amps.items(), key=lambda kv: pair_key(kv[0]))))

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[ModeLabel, ModeLabel, complex]]) -> "TwoPhotonState":
        acc: dict[Pair, complex] = {}
        for a, b, amp in terms:
            acc[(a, b)] = acc.get((a, b), 0) + amp
        return cls(acc)

    @property
    def amplitudes(self) -> Mapping[Pair, complex]:
        return self._amps

    @property
    def norm(self) -> float:
        return float(sum(abs(a) ** 2 for a in self._amps.values()))

    @property
    def timebinned(self) -> bool | None:
        return self._timebinned

    @property
    def support(self) -> tuple[Pair, ...]:
        return tuple(self._amps)

    def __getitem__(self, pair: Pair) -> complex:
        return self._amps.get(tuple(pair), 0j)

    def __len__(self):
        return len(self._amps)

    def scaled(self, factor: complex) -> "TwoPhotonState":
        return TwoPhotonState({k: v * factor for k, v in self._amps.items()})

    def vector(self, basis: Sequence[Pair]) -> np.ndarray:
        return np.array([self[p] for p in basis], dtype=complex)

    def __repr__(self):
        terms = " + ".join(f"({v:.4g}){a}{b}" for (a, b), v in self._amps.items())
        return f"TwoPhotonState({terms or '0'})"


def normalize(state: TwoPhotonState) -> TwoPhotonState:
    n = state.norm
    if n <= 0:
        raise ZeroState("cannot normalize a zero-norm state")
    return state.scaled(1.0 / np.sqrt(n))


class DensityOperator:
    """Hermitian, positive semidefinite operator on an explicit pair basis.

    ``et_coherence`` holds the coherence block between the short-short and
    long-long emission alternatives that an unbalanced interferometer pair
    would post-select.  The energy-time degree of freedom is never stored as
    an explicit qubit at the source; ``None`` means fully coherent, i.e. the
    block equals ``matrix``.
    """

    __slots__ = ("_basis", "_matrix", "_et", "_index", "_timebinned")

    def __init__(self, basis: Sequence[Pair], matrix, et_coherence=None, *, check: bool = True):
        basis = tuple(tuple(p) for p in basis)
        if len(set(basis)) != len(basis):
            raise BasisError("duplicate label pairs in basis")
        self._timebinned = _check_pairs(basis)
        m = np.array(matrix, dtype=complex)
        if m.shape != (len(basis), len(basis)):
            raise BasisError(f"matrix shape {m.shape} does not match basis of size {len(basis)}")
        et = None
        if et_coherence is not None:
            et = np.array(et_coherence, dtype=complex)
            if et.shape != m.shape:
                raise BasisError("coherence block must match the matrix shape")
        if check:
            _validate_density(m)
            if et is not None and np.max(np.abs(et - et.conj().T), initial=0.0) > HERMITIAN_TOL * max(1.0, np.abs(et).max(initial=0)):
                raise RangeError("energy-time coherence block must be Hermitian")
        m.flags.writeable = False
        if et is not None:
            et.flags.writeable = False
        self._basis = basis
        self._matrix = m
        self._et = et
        self._index = {p: i for i, p in enumerate(basis)}

    @classmethod
    def from_pure(cls, state: TwoPhotonState, basis: Sequence[Pair] | None = None) -> "DensityOperator":
        if basis is None:
            basis = state.support
        else:
            missing = set(state.support) - set(map(tuple, basis))
            if missing:
                raise BasisError(f"state has support outside the given basis: {sorted(map(str, missing))[:4]}")
        v = state.vector(basis)
        return cls(basis, np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, basis: Sequence[Pair]) -> "DensityOperator":
        d = len(basis)
        return cls(basis, np.eye(d) / d)

    @property
    def basis(self) -> tuple[Pair, ...]:
        return self._basis

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def et_coherence(self) -> np.ndarray:
        return self._matrix if self._et is None else self._et

    @property
    def has_et_dephasing(self) -> bool:
        return self._et is not None

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self._matrix)))

    @property
    def dim(self) -> int:
        return len(self._basis)

    @property
    def timebinned(self) -> bool | None:
        return self._timebinned

    def index(self, pair: Pair) -> int:
        try:
            return self._index[tuple(pair)]
        except KeyError:
            raise BasisError(f"{pair[0]}{pair[1]} not in basis") from None

    def element(self, row: Pair, col: Pair) -> complex:
        i, j = self._index.get(tuple(row)), self._index.get(tuple(col))
        if i is None or j is None:
            return 0j
        return complex(self._matrix[i, j])

    def embed(self, basis: Sequence[Pair]) -> "DensityOperator":
        """Re-express on a larger (or reordered) basis, padding with zeros."""
        basis = tuple(tuple(p) for p in basis)
        missing = set(self._basis) - set(basis)
        if missing:
            raise BasisError("target basis does not contain the current basis")
        idx = np.array([basis.index(p) for p in self._basis], dtype=int)
        m = np.zeros((len(basis), len(basis)), dtype=complex)
        m[np.ix_(idx, idx)] = self._matrix
        et = None
        if self._et is not None:
            et = np.zeros_like(m)
            et[np.ix_(idx, idx)] = self._et
        return DensityOperator(basis, m, et, check=False)

    def expectation(self, proj: "Projector") -> float:
        if not _compatible(self._timebinned, proj.timebinned):
            raise BasisError("projector and density operator use different label structures")
        V = np.zeros((self.dim, proj.rank), dtype=complex)
        for row, pair in enumerate(proj.basis):
            i = self._index.get(pair)
            if i is not None:
                V[i] = proj.vectors[row]
        return float(np.real(np.trace(V.conj().T @ self._matrix @ V)))

    def __repr__(self):
        return f"DensityOperator(dim={self.dim}, trace={self.trace:.6g})"


def _validate_density(m: np.ndarray):
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if m.size and np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL * scale:
        raise RangeError("density matrix is not Hermitian")
    if m.size:
        evals = np.linalg.eigvalsh((m + m.conj().T) / 2)
        if evals[0] < -EIGEN_TOL:
            raise RangeError(f"density matrix has negative eigenvalue {evals[0]:.3g}")
    tr = float(np.real(np.trace(m)))
    if tr < -EIGEN_TOL or tr > 1 + EIGEN_TOL:
        raise RangeError(f"trace {tr:.12g} outside [0, 1]")


class Projector:
    """Orthogonal projector onto the span of a set of kets."""

    def __init__(self, kets: Sequence[TwoPhotonState], tol: float = 1e-12):
        if not kets:
            raise BasisError("a projector needs at least one ket")
        support = set()
        for k in kets:
            support.update(k.support)
        basis = tuple(sorted(support, key=pair_key))
        self.timebinned = _check_pairs(basis)
        A = np.array([k.vector(basis) for k in kets], dtype=complex).T
        u, s, _ = np.linalg.svd(A, full_matrices=False)
        rank = int(np.sum(s > tol * max(1.0, s[0])))
        if rank == 0:
            raise ZeroState("projector kets are all zero")
        self.basis = basis
        self.vectors = u[:, :rank]
        self.rank = rank

    @classmethod
    def onto(cls, *pairs: Pair) -> "Projector":
        return cls([TwoPhotonState({p: 1.0}) for p in pairs])

    @property
    def matrix(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T


def probability(state: TwoPhotonState, proj: Projector) -> float:
    """Born-rule weight ``||P psi||^2`` of a (sub-normalized) pure state."""
    if not _compatible(state.timebinned, proj.timebinned):
        raise BasisError("state and projector use different label structures")
    psi = state.vector(proj.basis)
    return float(np.sum(np.abs(proj.vectors.conj().T @ psi) ** 2))


def fidelity_with_pure(rho: DensityOperator, target: TwoPhotonState) -> float:
    """Overlap <target|rho|target> for a normalized pure target."""
    if abs(target.norm - 1) > 1e-9:
        raise RangeError(f"target must be normalized (norm={target.norm:.12g})")
    if not _compatible(rho.timebinned, target.timebinned):
        raise BasisError("target and density operator use different label structures")
    outside = [p for p in target.support if p not in rho._index]
    if outside:
        raise BasisError(f"target has {len(outside)} terms outside the density-operator basis")
    v = target.vector(rho.basis)
    return float(np.real(v.conj() @ rho.matrix @ v))


def mix(rho: DensityOperator, sigma: DensityOperator, weight: float) -> DensityOperator:
    """Convex combination ``weight*rho + (1-weight)*sigma``."""
    if not 0.0 <= weight <= 1.0:
        raise RangeError(f"mixing weight {weight} outside [0, 1]")
    if not _compatible(rho.timebinned, sigma.timebinned):
        raise BasisError("cannot mix operators with different label structures")
    if rho.basis != sigma.basis:
        basis = tuple(sorted(set(rho.basis) | set(sigma.basis), key=pair_key))
        rho, sigma = rho.embed(basis), sigma.embed(basis)
    m = weight * rho.matrix + (1 - weight) * sigma.matrix
    et = None
    if rho.has_et_dephasing or sigma.has_et_dephasing:
        et = weight * rho.et_coherence + (1 - weight) * sigma.et_coherence
    return DensityOperator(rho.basis, m, et, check=False)


# --- local (single-photon) linear maps -------------------------------------

Action = Callable[[ModeLabel], Sequence[tuple[ModeLabel, complex]]]


@dataclass(frozen=True)
class LocalOperator:
    """Linear map on one photon's modes, given label by label.

    ``action(label)`` returns the output expansion.  A label mapped to an
    empty list is absorbed (lost).  ``matrix`` keeps the defining matrix of
    operators built from one, for unitarity checks.
    """

    action: Action
    matrix: np.ndarray | None = field(default=None, compare=False)
    name: str = ""

    def __call__(self, label: ModeLabel):
        return self.action(label)

    @classmethod
    def identity(cls) -> "LocalOperator":
        return cls(lambda lab: [(lab, 1.0)], np.eye(1), "identity")

    @classmethod
    def on_pol(cls, jones, cores: Iterable[str] | None = None) -> "LocalOperator":
        """Apply a 2x2 Jones matrix to the polarization of (selected) cores."""
        J = np.asarray(jones, dtype=complex)
        if J.shape != (2, 2):
            raise BasisError("Jones matrix must be 2x2")
        sel = None if cores is None else frozenset(map(str, cores))

        def act(lab):
            if sel is not None and lab.core not in sel:
                return [(lab, 1.0)]
            col = POLS.index(lab.pol)
            return [(lab.replace(pol=p), J[row, col]) for row, p in enumerate(POLS) if J[row, col] != 0]

        return cls(act, J, "jones")

    @classmethod
    def on_subspace(cls, matrix, labels: Sequence[ModeLabel]) -> "LocalOperator":
        """Matrix acting on the span of ``labels``; identity on everything else."""
        U = np.asarray(matrix, dtype=complex)
        labels = tuple(labels)
        if U.shape != (len(labels), len(labels)):
            raise BasisError("matrix size does not match the label list")
        pos = {lab: i for i, lab in enumerate(labels)}

        def act(lab):
            j = pos.get(lab)
            if j is None:
                return [(lab, 1.0)]
            return [(labels[i], U[i, j]) for i in range(len(labels)) if U[i, j] != 0]

        return cls(act, U, "subspace")

    def then(self, other: "LocalOperator") -> "LocalOperator":
        """Composite map: apply ``self`` first, then ``other``."""

        def act(lab):
            out: dict[ModeLabel, complex] = {}
            for mid, c1 in self.action(lab):
                for fin, c2 in other.action(mid):
                    out[fin] = out.get(fin, 0) + c1 * c2
            return [(k, v) for k, v in out.items() if v != 0]

        return LocalOperator(act, None, f"{self.name}>{other.name}")


IDENTITY = LocalOperator.identity()


def check_unitary(U, tol: float = UNITARY_TOL) -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise UnitarityError(f"not a square matrix: shape {U.shape}")
    err = np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0])))
    if err > tol:
        raise UnitarityError(f"U^dagger U deviates from identity by {err:.3g}")
    return U


def _photon_ops(which_photon, op: LocalOperator) -> tuple[LocalOperator, LocalOperator]:
    if which_photon in ("A", 0):
        return op, IDENTITY
    if which_photon in ("B", 1):
        return IDENTITY, op
    raise BasisError(f"photon must be 'A' or 'B', got {which_photon!r}")


def apply_local_state(state: TwoPhotonState, op_a: LocalOperator, op_b: LocalOperator) -> TwoPhotonState:
    out: dict[Pair, complex] = {}
    for (a, b), amp in state.amplitudes.items():
        for a2, ca in op_a(a):
            for b2, cb in op_b(b):
                out[(a2, b2)] = out.get((a2, b2), 0) + amp * ca * cb
    return TwoPhotonState(out)


def transfer_matrix(basis_in: Sequence[Pair], op_a: LocalOperator, op_b: LocalOperator,
                    out_basis: Sequence[Pair] | None = None):
    """Matrix of ``op_a (x) op_b`` from ``basis_in`` to an output pair basis."""
    cols = []
    for a, b in basis_in:
        col: dict[Pair, complex] = {}
        for a2, ca in op_a(a):
            for b2, cb in op_b(b):
                col[(a2, b2)] = col.get((a2, b2), 0) + ca * cb
        cols.append(col)
    if out_basis is None:
        keys = {k for col in cols for k, v in col.items() if v != 0}
        out_basis = tuple(sorted(keys, key=pair_key))
    index = {p: i for i, p in enumerate(out_basis)}
    T = np.zeros((len(out_basis), len(basis_in)), dtype=complex)
    for j, col in enumerate(cols):
        for k, v in col.items():
            if v != 0:
                T[index[k], j] += v
    return tuple(out_basis), T


def apply_local(rho: DensityOperator, op_a: LocalOperator, op_b: LocalOperator) -> DensityOperator:
    """Apply ``op_a (x) op_b`` to a density operator (no trace renormalization)."""
    out_basis, T = transfer_matrix(rho.basis, op_a, op_b)
    m = T @ rho.matrix @ T.conj().T
    et = T @ rho.et_coherence @ T.conj().T if rho.has_et_dephasing else None
    return DensityOperator(out_basis, m, et, check=False)


def apply_local_unitary(state, which_photon, op):
    """Apply a single-photon unitary to photon ``'A'`` or ``'B'``.

    ``op`` is a :class:`LocalOperator` built from a matrix, or a bare 2x2
    Jones matrix acting on polarization.  Works on pure states and density
    operators alike.
    """
    if not isinstance(op, LocalOperator):
        op = LocalOperator.on_pol(op)
    if op.matrix is None:
        raise UnitarityError("operator carries no defining matrix; cannot verify unitarity")
    check_unitary(op.matrix)
    op_a, op_b = _photon_ops(which_photon, op)
    if isinstance(state, DensityOperator):
        return apply_local(state, op_a, op_b)
    return apply_local_state(state, op_a, op_b)
