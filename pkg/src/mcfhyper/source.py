"""Hyper-entangled SPDC source: ideal state plus configurable imperfections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError
from .hilbert import DensityOperator, ModeLabel, TwoPhotonState, mix

#: Opposite-core pairs fed by the source, in the order they are populated.
CORE_PAIRS = (("1", "1'"), ("2", "2'"), ("3", "3'"), ("4", "4'"))


def _unit_interval(name, value):
    if not 0.0 <= value <= 1.0:
        raise RangeError(f"{name}={value} outside [0, 1]")


@dataclass(frozen=True)
class SourceConfig:
    """Source parameters.

    ``pair_rate`` is the rate of generated pairs entering the fiber; the
    poor coupling into the cores is accounted for as arm transmission in the
    counting layer.  ``coherence_time`` only matters relative to the
    interferometer delay and to core-length mismatches.
    """

    n_core_pairs: int = 4
    pair_rate: float = 4.2e8
    coherence_time: float = 1.5e-12
    pol_phase: float = 0.0
    p_path: float = 0.0
    p_time: float = 0.0
    p_pol: float = 0.0
    white_noise: float = 0.0
    center_wavelength: float = 1560.48e-9

    def __post_init__(self):
        if not 1 <= self.n_core_pairs <= len(CORE_PAIRS):
            raise RangeError(f"n_core_pairs={self.n_core_pairs} outside 1..{len(CORE_PAIRS)}")
        if not self.pair_rate > 0:
            raise RangeError("pair_rate must be positive")
        if not self.coherence_time > 0:
            raise RangeError("coherence_time must be positive")
        for name in ("p_path", "p_time", "p_pol", "white_noise"):
            _unit_interval(name, getattr(self, name))


@dataclass(frozen=True)
class HyperState:
    pure: TwoPhotonState
    rho: DensityOperator
    emission_time_model: str = "cw-uniform"


def build_target_state(n_core_pairs: int, pol_phase: float = 0.0,
                       core_pairs=CORE_PAIRS) -> TwoPhotonState:
    """Equal superposition of ``n`` opposite-core pairs times ``|HH> + e^{i pol_phase}|VV>``.

    The energy-time factor is not part of the returned state; the Franson
    apparatus adds the short-short and long-long alternatives coherently.
    """
    if not 1 <= n_core_pairs <= len(core_pairs):
        raise RangeError(f"n_core_pairs={n_core_pairs} outside 1..{len(core_pairs)}")
    amp = 1.0 / np.sqrt(2 * n_core_pairs)
    terms = {}
    for ca, cb in core_pairs[:n_core_pairs]:
        terms[(ModeLabel(ca, "H"), ModeLabel(cb, "H"))] = amp
        terms[(ModeLabel(ca, "V"), ModeLabel(cb, "V"))] = amp * np.exp(1j * pol_phase)
    return TwoPhotonState(terms)


def _dephasing_mask(basis, p_path: float, p_pol: float) -> np.ndarray:
    paths = [(a.core, b.core) for a, b in basis]
    pols = [(a.pol, b.pol) for a, b in basis]
    d = len(basis)
    mask = np.ones((d, d))
    for i in range(d):
        for j in range(d):
            if paths[i] != paths[j]:
                mask[i, j] *= 1 - p_path
            if pols[i] != pols[j]:
                mask[i, j] *= 1 - p_pol
    return mask


def apply_isotropic_noise(state, p_path: float = 0.0, p_time: float = 0.0,
                          p_pol: float = 0.0) -> DensityOperator:
    """Per-degree-of-freedom dephasing.

    Coherences between terms that differ in core pair are scaled by
    ``1 - p_path``, those differing in polarization by ``1 - p_pol``;
    populations are untouched.  ``p_time`` scales the short-short/long-long
    coherence carried for the Franson stage.
    """
    for name, p in (("p_path", p_path), ("p_time", p_time), ("p_pol", p_pol)):
        _unit_interval(name, p)
    rho = state if isinstance(state, DensityOperator) else DensityOperator.from_pure(state)
    mask = _dephasing_mask(rho.basis, p_path, p_pol)
    m = rho.matrix * mask
    et = None
    if rho.has_et_dephasing or p_time > 0:
        et = (1 - p_time) * (rho.et_coherence * mask)
    return DensityOperator(rho.basis, m, et, check=False)


def apply_white_noise(rho: DensityOperator, weight: float, basis=None) -> DensityOperator:
    """Admix ``weight`` of the maximally mixed state (Werner-type noise).

    By default the noise fills the full product of the single-photon labels
    present in ``rho``.  The admixed part has no energy-time coherence.
    """
    _unit_interval("weight", weight)
    if basis is None:
        labels_a = sorted({a for a, _ in rho.basis}, key=ModeLabel.sort_key)
        labels_b = sorted({b for _, b in rho.basis}, key=ModeLabel.sort_key)
        basis = [(a, b) for a in labels_a for b in labels_b]
    d = len(basis)
    noise = DensityOperator(basis, np.eye(d) / d * rho.trace, np.zeros((d, d)), check=False)
    return mix(rho, noise, 1 - weight)


def prepare_source(config: SourceConfig) -> HyperState:
    pure = build_target_state(config.n_core_pairs, config.pol_phase)
    rho = apply_isotropic_noise(pure, config.p_path, config.p_time, config.p_pol)
    if config.white_noise > 0:
        rho = apply_white_noise(rho, config.white_noise)
    return HyperState(pure, rho)


def emission_pair_stream(config, duration: float, seed) -> int:
    """Number of pairs emitted during ``duration`` seconds (Poisson)."""
    rate = config.pair_rate if isinstance(config, SourceConfig) else float(config)
    if not duration > 0:
        raise RangeError("duration must be positive")
    if rate < 0:
        raise RangeError("rate must be non-negative")
    rng = np.random.default_rng(seed)
    return int(rng.poisson(rate * duration))
