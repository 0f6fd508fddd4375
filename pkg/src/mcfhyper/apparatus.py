"""Measurement stations: Franson interferometer pair, polarization analyzers
and the two-beamsplitter path station.

Every station is a pair of local linear maps followed by a detector readout.
Beamsplitters use the symmetric convention: transmission ``t``, reflection
``i r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .errors import BasisError, RangeError
from .hilbert import (
    DensityOperator,
    IDENTITY,
    LocalOperator,
    ModeLabel,
    POLS,
    TwoPhotonState,
    apply_local,
    pair_key,
    transfer_matrix,
)

TAGS = ("central", "early-side", "late-side", "n/a")

#: Detector names for the monitored outputs, as labelled in the lab:
#: Alice's PBS gives D1 (H) and D2 (V), Bob's gives D3 (H) and D4 (V).
POL_DETECTORS = {("A", "H"): "D1", ("A", "V"): "D2", ("B", "H"): "D3", ("B", "V"): "D4"}
PATH_DETECTORS = {("A", 0): "D1", ("A", 1): "D2", ("B", 0): "D3", ("B", 1): "D4"}
PAIR_NAMES_POL = {"HH": ("D1", "D3"), "VV": ("D2", "D4"), "HV": ("D1", "D4"), "VH": ("D2", "D3")}
PATH_PAIRS = (("D1", "D3"), ("D2", "D4"), ("D1", "D4"), ("D2", "D3"))


def hwp_jones(angle: float) -> np.ndarray:
    """Jones matrix of a half-wave plate with fast axis at ``angle`` (radians)."""
    c, s = np.cos(2 * angle), np.sin(2 * angle)
    return np.array([[c, s], [s, -c]], dtype=complex)


def coherence_envelope(delay: float, tau_cc: float) -> float:
    """Two-photon coherence left after a relative delay (Gaussian envelope)."""
    if tau_cc <= 0:
        raise RangeError("coherence time must be positive")
    return float(np.exp(-((delay / tau_cc) ** 2)))


def _check_ratio(ratio):
    if not 0.0 < ratio < 1.0:
        raise RangeError(f"beamsplitter ratio {ratio} outside (0, 1)")


@dataclass(frozen=True)
class FransonInterferometer:
    """One unbalanced Mach-Zehnder: BS transmission feeds the short arm."""

    delay: float = 1.2e-9
    phase: float = 0.0
    bs_ratio: float = 0.5
    monitored_output: int = 0

    def __post_init__(self):
        if not self.delay > 0:
            raise RangeError("interferometer delay must be positive")
        _check_ratio(self.bs_ratio)
        if self.monitored_output not in (0, 1):
            raise RangeError("monitored_output must be 0 or 1")

    def arm_amplitudes(self, port: int) -> tuple[complex, complex]:
        """(short, long) amplitudes from the input to output ``port``."""
        t, ir = np.sqrt(self.bs_ratio), 1j * np.sqrt(1 - self.bs_ratio)
        long_phase = np.exp(1j * self.phase)
        if port == 0:
            return t * t, ir * ir * long_phase
        return t * ir, ir * t * long_phase


@dataclass(frozen=True)
class PolarizationAnalyzer:
    hwp_angle: float = 0.0
    pbs_extinction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.pbs_extinction < 1.0:
            raise RangeError("PBS extinction must lie in [0, 1)")

    def response(self, pol: str) -> list[tuple[str, float]]:
        """Output ports reached by a photon leaving the HWP with ``pol``."""
        eps = self.pbs_extinction
        other = "V" if pol == "H" else "H"
        out = [(pol, 1.0 - eps)]
        if eps > 0:
            out.append((other, eps))
        return out


HV_BASIS = PolarizationAnalyzer(0.0)
DA_BASIS = PolarizationAnalyzer(np.pi / 8)


@dataclass(frozen=True)
class PathStation:
    """Cores ``cores_a`` interfere on Alice's BS, ``cores_b`` on Bob's.

    ``theta`` is the piezo phase on Alice's second core; ``pair_offset`` is
    the fixed extra phase of that input (default pi, giving the relative
    minus sign between the two core pairs).  ``basis_phase`` is a fixed
    phase on Bob's second core selecting the measurement setting.
    """

    theta: float = 0.0
    cores_a: tuple[str, str] = ("3", "4")
    cores_b: tuple[str, str] = ("3'", "4'")
    pair_offset: float = np.pi
    basis_phase: float = 0.0
    length_offsets: Mapping[str, float] = field(default_factory=dict)
    bs_ratio_a: float = 0.5
    bs_ratio_b: float = 0.5
    pbs_prefilter: bool = True
    prefilter_angle: float = 0.0

    def __post_init__(self):
        _check_ratio(self.bs_ratio_a)
        _check_ratio(self.bs_ratio_b)
        for core in self.length_offsets:
            if core not in self.cores_a + self.cores_b:
                raise BasisError(f"length offset given for core {core!r} which is not a station input")

    def signature(self, pair) -> float:
        a, b = pair
        return self.length_offsets.get(a.core, 0.0) - self.length_offsets.get(b.core, 0.0)


class OutcomeDistribution:
    """Detection probabilities per emitted pair.

    ``probs`` maps ``(detector_A, detector_B, tag)`` to a coincidence
    probability; ``singles_a``/``singles_b`` map each side's detectors to
    their single-photon detection probability regardless of the partner.
    """

    def __init__(self, probs: Mapping, singles_a: Mapping, singles_b: Mapping):
        self.probs = {k: float(v) for k, v in sorted(probs.items())}
        self.singles_a = {k: float(v) for k, v in sorted(singles_a.items())}
        self.singles_b = {k: float(v) for k, v in sorted(singles_b.items())}

    @property
    def singles(self) -> dict:
        return {**self.singles_a, **self.singles_b}

    def coincidence(self, det_a: str, det_b: str, tag: str | None = None) -> float:
        return sum(p for (a, b, t), p in self.probs.items()
                   if a == det_a and b == det_b and (tag is None or t == tag))

    def central(self, det_a: str, det_b: str) -> float:
        return self.coincidence(det_a, det_b, "central")

    def total(self, tag: str | None = None) -> float:
        return sum(p for (_, _, t), p in self.probs.items() if tag is None or t == tag)

    def detector_pairs(self):
        return sorted({(a, b) for a, b, _ in self.probs})

    def __repr__(self):
        body = ", ".join(f"{a}/{b}[{t}]={p:.4g}" for (a, b, t), p in self.probs.items())
        return f"OutcomeDistribution({body})"


# --- readout ----------------------------------------------------------------

def _as_density(rho) -> DensityOperator:
    if isinstance(rho, TwoPhotonState):
        return DensityOperator.from_pure(rho)
    return rho


def _time_tag(ta, tb):
    if ta is None:
        return "n/a"
    if ta == tb:
        return "central"
    return "early-side" if ta == "S" else "late-side"


def readout(rho: DensityOperator, response_a, response_b) -> dict:
    """Coincidence probabilities for detectors given per-label responses.

    ``response_x(label)`` returns ``[(detector, weight), ...]`` for a label
    with its time bin stripped.  Short-short and long-long alternatives of
    otherwise identical labels are indistinguishable in the central bin and
    add coherently; everything else adds incoherently.
    """
    m = rho.matrix
    groups: dict = {}
    for i, (a, b) in enumerate(rho.basis):
        key = (a.replace(timebin=None), b.replace(timebin=None))
        groups.setdefault(key, {})[(a.timebin, b.timebin)] = i
    probs: dict = {}
    for (a0, b0), idx in groups.items():
        values = {}
        for (ta, tb), i in idx.items():
            tag = _time_tag(ta, tb)
            values[tag] = values.get(tag, 0.0) + float(np.real(m[i, i]))
        if ("S", "S") in idx and ("L", "L") in idx:
            values["central"] += 2.0 * float(np.real(m[idx[("S", "S")], idx[("L", "L")]]))
        ra, rb = response_a(a0), response_b(b0)
        for tag, v in values.items():
            for da, wa in ra:
                for db, wb in rb:
                    k = (da, db, tag)
                    probs[k] = probs.get(k, 0.0) + wa * wb * v
    return probs


def _singles(rho: DensityOperator, op, response, side: str) -> dict:
    """Single-photon detection probabilities on one side (partner ignored)."""
    op_a, op_b = (op, IDENTITY) if side == "A" else (IDENTITY, op)
    out_basis, T = transfer_matrix(rho.basis, op_a, op_b)
    diag = np.real(np.einsum("ij,jk,ik->i", T, rho.matrix, T.conj()))
    singles: dict = {}
    for (a, b), p in zip(out_basis, diag):
        lab = (a if side == "A" else b).replace(timebin=None)
        for det, w in response(lab):
            singles[det] = singles.get(det, 0.0) + w * p
    return singles


# --- Franson ------------------------------------------------------------------

_PORT_SEP = "/"


def port_core(core: str, port: int) -> str:
    return f"{core}{_PORT_SEP}{port}"


def split_port(core: str) -> tuple[str, int]:
    base, _, port = core.rpartition(_PORT_SEP)
    return base, int(port)


def franson_arm_operator(ifo: FransonInterferometer, core: str, arm: str,
                         both_ports: bool = False) -> LocalOperator:
    """Map a photon in ``core`` through one arm to the monitored port(s)."""
    ports = (0, 1) if both_ports else (ifo.monitored_output,)
    amps = {p: ifo.arm_amplitudes(p)[0 if arm == "S" else 1] for p in ports}

    def act(lab):
        if lab.core != core:
            return []
        return [(lab.replace(core=port_core(core, p), timebin=arm), c) for p, c in amps.items()]

    return LocalOperator(act, None, f"franson-{arm}")


def franson_output_state(rho, iA: FransonInterferometer, iB: FransonInterferometer,
                         core_a: str = "1", core_b: str = "1'", tau_cc: float = 1.5e-12,
                         both_ports: bool = False) -> DensityOperator:
    """Post-interferometer density operator with explicit time-bin labels.

    The short-short/long-long block carries the source's energy-time
    coherence times the delay-mismatch envelope; other arm combinations
    are mutually incoherent because the emission time is continuous.
    """
    rho = _as_density(rho)
    if rho.timebinned:
        raise BasisError("Franson input must not carry time-bin labels")
    for ifo in (iA, iB):
        if ifo.delay <= tau_cc:
            raise RangeError("interferometer delay must exceed the coherence time to resolve time bins")
    ops_a = {arm: franson_arm_operator(iA, core_a, arm, both_ports) for arm in "SL"}
    ops_b = {arm: franson_arm_operator(iB, core_b, arm, both_ports) for arm in "SL"}
    combos = [(x, y) for x in "SL" for y in "SL"]
    keys = set()
    for x, y in combos:
        keys.update(transfer_matrix(rho.basis, ops_a[x], ops_b[y])[0])
    out_basis = tuple(sorted(keys, key=pair_key))
    T = {c: transfer_matrix(rho.basis, ops_a[c[0]], ops_b[c[1]], out_basis)[1] for c in combos}
    m = sum(T[c] @ rho.matrix @ T[c].conj().T for c in combos)
    env = coherence_envelope(abs(iA.delay - iB.delay), tau_cc)
    X = rho.et_coherence
    cross = T["S", "S"] @ X @ T["L", "L"].conj().T
    m = m + env * (cross + cross.conj().T)
    return DensityOperator(out_basis, m, check=False)


def _franson_response(side: str, analyzer: PolarizationAnalyzer | None, monitored: int):
    def response(lab):
        _, port = split_port(lab.core)
        if analyzer is None:
            return [(f"{side}{port}", 1.0)]
        out = []
        for pol, w in analyzer.response(lab.pol):
            det = POL_DETECTORS[(side, pol)] if port == monitored else f"{side}{port}{pol}"
            out.append((det, w))
        return out

    return response


def franson_pair_distribution(rho, iA: FransonInterferometer, iB: FransonInterferometer,
                              analyzer_a: PolarizationAnalyzer | None = None,
                              analyzer_b: PolarizationAnalyzer | None = None,
                              core_a: str = "1", core_b: str = "1'", tau_cc: float = 1.5e-12,
                              both_ports: bool = False) -> OutcomeDistribution:
    """Coincidence distribution behind two unbalanced interferometers.

    Without analyzers the detectors are named ``A<port>``/``B<port>``; with
    analyzers the monitored outputs are D1..D4 and any extra port is named
    ``<side><port><pol>``.
    """
    rho = _as_density(rho)
    out = franson_output_state(rho, iA, iB, core_a, core_b, tau_cc, both_ports)
    hwp_a = LocalOperator.on_pol(hwp_jones(analyzer_a.hwp_angle)) if analyzer_a else IDENTITY
    hwp_b = LocalOperator.on_pol(hwp_jones(analyzer_b.hwp_angle)) if analyzer_b else IDENTITY
    if analyzer_a or analyzer_b:
        out = apply_local(out, hwp_a, hwp_b)
    resp_a = _franson_response("A", analyzer_a, iA.monitored_output)
    resp_b = _franson_response("B", analyzer_b, iB.monitored_output)
    probs = readout(out, resp_a, resp_b)

    ports_a = (0, 1) if both_ports else (iA.monitored_output,)
    ports_b = (0, 1) if both_ports else (iB.monitored_output,)
    singles = []
    for side, ifo, core, ports, hwp, resp in (("A", iA, core_a, ports_a, hwp_a, resp_a),
                                              ("B", iB, core_b, ports_b, hwp_b, resp_b)):
        op = _franson_singles_operator(ifo, core, ports).then(hwp)
        singles.append(_singles(rho, op, resp, side))
    return OutcomeDistribution(probs, *singles)


def _franson_singles_operator(ifo, core, ports):
    # Time bins are resolved for single photons; label them to keep S and L incoherent.
    def act(lab):
        if lab.core != core:
            return []
        out = []
        for p in ports:
            s, l = ifo.arm_amplitudes(p)
            out.append((lab.replace(core=port_core(core, p), timebin="S"), s))
            out.append((lab.replace(core=port_core(core, p), timebin="L"), l))
        return out

    return LocalOperator(act, None, "franson-singles")


# --- polarization analysis ------------------------------------------------------

class PolProbs(NamedTuple):
    hh: float
    hv: float
    vh: float
    vv: float


def polarization_coincidence_probs(rho, analyzer_a: PolarizationAnalyzer,
                                   analyzer_b: PolarizationAnalyzer) -> PolProbs:
    """Probabilities of the four PBS output pairings, summed over cores and time bins."""
    rho = _as_density(rho)
    out = apply_local(rho, LocalOperator.on_pol(hwp_jones(analyzer_a.hwp_angle)),
                      LocalOperator.on_pol(hwp_jones(analyzer_b.hwp_angle)))
    probs = readout(out, lambda lab: analyzer_a.response(lab.pol), lambda lab: analyzer_b.response(lab.pol))
    tot = {}
    for (pa, pb, _), p in probs.items():
        tot[pa + pb] = tot.get(pa + pb, 0.0) + p
    return PolProbs(*(tot.get(k, 0.0) for k in ("HH", "HV", "VH", "VV")))


# --- path station ------------------------------------------------------------------

def _bs_operator(cores: tuple[str, str], ratio: float, side: str, input_phases: Mapping[str, float],
                 prefilter: np.ndarray | None) -> LocalOperator:
    t, ir = np.sqrt(ratio), 1j * np.sqrt(1 - ratio)
    # column: input core index, row: output port
    bs = {cores[0]: {0: t, 1: ir}, cores[1]: {0: ir, 1: t}}

    def act(lab):
        ports = bs.get(lab.core)
        if ports is None:
            return []
        phase = np.exp(1j * input_phases.get(lab.core, 0.0))
        if prefilter is None:
            pols = [(lab.pol, 1.0)]
        else:
            col = POLS.index(lab.pol)
            pols = [(p, prefilter[row, col]) for row, p in enumerate(POLS) if prefilter[row, col] != 0]
        return [(ModeLabel(f"BS{side}{_PORT_SEP}{port}", pol), phase * c * cp)
                for port, c in ports.items() for pol, cp in pols]

    return LocalOperator(act, None, f"bs-{side}")


def _path_response(side):
    def response(lab):
        _, port = split_port(lab.core)
        return [(PATH_DETECTORS[(side, port)], 1.0)]

    return response


def path_station_operators(station: PathStation) -> tuple[LocalOperator, LocalOperator]:
    prefilter = None
    if station.pbs_prefilter:
        a = station.prefilter_angle
        # rotate the chosen axis onto H, then keep H
        prefilter = np.array([[np.cos(a), np.sin(a)], [0.0, 0.0]], dtype=complex)
    op_a = _bs_operator(station.cores_a, station.bs_ratio_a, "A",
                        {station.cores_a[1]: station.theta + station.pair_offset}, prefilter)
    op_b = _bs_operator(station.cores_b, station.bs_ratio_b, "B",
                        {station.cores_b[1]: station.basis_phase}, prefilter)
    return op_a, op_b


def path_station_distribution(rho, station: PathStation, tau_cc: float = 1.5e-12) -> OutcomeDistribution:
    """Coincidences behind the two path beamsplitters.

    Length offsets of the inputs dephase alternatives whose relative
    arrival times differ, with the Gaussian coherence envelope.
    """
    rho = _as_density(rho)
    if rho.timebinned:
        raise BasisError("path station expects states without time-bin labels")
    if station.length_offsets:
        sig = np.array([station.signature(p) for p in rho.basis])
        kernel = np.exp(-(((sig[:, None] - sig[None, :]) / tau_cc) ** 2))
        rho = DensityOperator(rho.basis, rho.matrix * kernel, check=False)
    op_a, op_b = path_station_operators(station)
    out_basis, T = transfer_matrix(rho.basis, op_a, op_b)
    out = DensityOperator(out_basis, T @ rho.matrix @ T.conj().T, check=False)
    probs = readout(out, _path_response("A"), _path_response("B"))
    return OutcomeDistribution(probs, _singles(rho, op_a, _path_response("A"), "A"),
                               _singles(rho, op_b, _path_response("B"), "B"))


def core_coincidence_distribution(rho, cores_a, cores_b) -> OutcomeDistribution:
    """Direct core-resolved coincidences (no interference), for path populations."""
    rho = _as_density(rho)
    sel_a, sel_b = set(cores_a), set(cores_b)

    def keep(sel):
        return LocalOperator(lambda lab: [(lab.replace(timebin=None), 1.0)] if lab.core in sel else [], None)

    op_a, op_b = keep(sel_a), keep(sel_b)
    out_basis, T = transfer_matrix(rho.basis, op_a, op_b)
    out = DensityOperator(out_basis, T @ rho.matrix @ T.conj().T, check=False)
    probs = readout(out, lambda lab: [(lab.core, 1.0)], lambda lab: [(lab.core, 1.0)])
    return OutcomeDistribution(probs, _singles(rho, op_a, lambda lab: [(lab.core, 1.0)], "A"),
                               _singles(rho, op_b, lambda lab: [(lab.core, 1.0)], "B"))
