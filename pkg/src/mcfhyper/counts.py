"""From outcome probabilities to detected counts.

Rates follow ``singles = R * eta * marginal + dark`` and
``coincidences = R * eta_A * eta_B * P``.  Uncorrelated background
coincidences are injected at the physical rate ``s_A * s_B * tau`` and
later estimated from the *sampled* singles, as one would in the lab.
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .apparatus import OutcomeDistribution
from .errors import RangeError

COINCIDENT_TAGS = ("central", "n/a")


@dataclass(frozen=True)
class DetectorSpec:
    label: str
    efficiency: float = 0.80
    dark_rate: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise RangeError(f"{self.label}: efficiency {self.efficiency} outside [0, 1]")
        if self.dark_rate < 0:
            raise RangeError(f"{self.label}: dark rate must be >= 0")


@dataclass(frozen=True)
class CoincidenceConfig:
    window: float = 320e-12
    integration_time: float = 30.0
    subtract_accidentals: bool = True
    inject_accidentals: bool = True

    def __post_init__(self):
        if not self.window > 0:
            raise RangeError("coincidence window must be positive")
        if not self.integration_time > 0:
            raise RangeError("integration time must be positive")


@dataclass(frozen=True)
class ExpectedRates:
    """Rates in Hz.  ``accidentals`` is the true uncorrelated background."""

    singles: Mapping[str, float]
    coincidences: Mapping[tuple[str, str], float]
    accidentals: Mapping[tuple[str, str], float]
    window: float


@dataclass(frozen=True)
class CountRecord:
    """Counts for one scan point.

    Before subtraction ``net == raw`` and ``sigma == sqrt(raw)``; after
    :func:`subtract_accidentals`, ``net = max(raw - accidental, 0)`` and
    ``sigma = sqrt(raw + accidental)``.
    """

    singles: Mapping[str, float]
    raw: Mapping[tuple[str, str], float]
    accidental: Mapping[tuple[str, str], float]
    net: Mapping[tuple[str, str], float]
    sigma: Mapping[tuple[str, str], float]
    integration_time: float
    subtracted: bool = False
    clamped: Mapping[tuple[str, str], bool] = field(default_factory=dict)

    @property
    def pairs(self):
        return tuple(self.raw)


def accidental_rate(s1: float, s2: float, tau: float) -> float:
    if s1 < 0 or s2 < 0 or tau < 0:
        raise RangeError("singles rates and window must be non-negative")
    return s1 * s2 * tau


def _eta(eta, det):
    value = eta.get(det, 0.0) if isinstance(eta, Mapping) else eta
    if not 0.0 <= value <= 1.0:
        raise RangeError(f"efficiency {value} for {det} outside [0, 1]")
    return value


def expected_rates(dist: OutcomeDistribution, pair_rate: float, eta_a, eta_b,
                   detectors: Mapping[str, DetectorSpec] | None = None,
                   window: float = 320e-12, tags=COINCIDENT_TAGS, pairs=()) -> ExpectedRates:
    """Singles and coincidence rates for one station setting.

    ``eta_a``/``eta_b`` are whole-arm efficiencies (transmission times
    detector efficiency), either one number per side or a mapping from
    detector label to efficiency.  Only outcomes whose tag lies in ``tags``
    fall inside the coincidence window.  ``pairs`` lists detector pairs to
    report even when they have zero probability.
    """
    if pair_rate < 0:
        raise RangeError("pair rate must be non-negative")
    detectors = detectors or {}
    singles = {}
    for side, eta in ((dist.singles_a, eta_a), (dist.singles_b, eta_b)):
        for det, p in side.items():
            dark = detectors[det].dark_rate if det in detectors else 0.0
            singles[det] = pair_rate * _eta(eta, det) * p + dark
    wanted = list(dist.detector_pairs()) + [tuple(p) for p in pairs]
    for pair in wanted:
        for det in pair:
            singles.setdefault(det, detectors[det].dark_rate if det in detectors else 0.0)
    coinc = {}
    for (a, b, tag), p in dist.probs.items():
        if tag not in tags:
            continue
        coinc[(a, b)] = coinc.get((a, b), 0.0) + pair_rate * _eta(eta_a, a) * _eta(eta_b, b) * p
    for pair in wanted:
        coinc.setdefault(pair, 0.0)
    acc = {pair: accidental_rate(singles[pair[0]], singles[pair[1]], window) for pair in coinc}
    return ExpectedRates(dict(sorted(singles.items())), dict(sorted(coinc.items())),
                         dict(sorted(acc.items())), window)


def stream(seed: int, scan_index: int, key: str) -> np.random.Generator:
    """Counter-based generator keyed by (seed, scan point, stream name).

    The stream depends only on its key, so scan points can be sampled in
    any order or in parallel with identical results.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(scan_index), zlib.crc32(key.encode())])
    return np.random.Generator(np.random.Philox(ss))


def _estimate_accidentals(singles, pairs, window, T):
    return {p: accidental_rate(singles[p[0]] / T, singles[p[1]] / T, window) * T for p in pairs}


def sample_counts(rates: ExpectedRates, T: float, seed: int, scan_index: int = 0,
                  inject_accidentals: bool = True, stream_tag: str = "") -> CountRecord:
    """Poisson-sample one scan point.

    ``stream_tag`` separates independent measurements that share scan
    indices (e.g. two analyzer bases).
    """
    if not T > 0:
        raise RangeError("integration time must be positive")
    singles = {d: float(stream(seed, scan_index, f"{stream_tag}single:{d}").poisson(r * T))
               for d, r in rates.singles.items()}
    raw = {}
    for pair, r in rates.coincidences.items():
        mean = r + (rates.accidentals[pair] if inject_accidentals else 0.0)
        raw[pair] = float(stream(seed, scan_index, f"{stream_tag}pair:{pair[0]}/{pair[1]}").poisson(mean * T))
    acc = _estimate_accidentals(singles, raw, rates.window, T)
    return CountRecord(singles, raw, acc, dict(raw), {p: float(np.sqrt(v)) for p, v in raw.items()}, T)


def expected_counts(rates: ExpectedRates, T: float, inject_accidentals: bool = True) -> CountRecord:
    """Noise-free counterpart of :func:`sample_counts` (expectation values)."""
    if not T > 0:
        raise RangeError("integration time must be positive")
    singles = {d: r * T for d, r in rates.singles.items()}
    raw = {p: (r + (rates.accidentals[p] if inject_accidentals else 0.0)) * T
           for p, r in rates.coincidences.items()}
    acc = _estimate_accidentals(singles, raw, rates.window, T)
    return CountRecord(singles, raw, acc, dict(raw), {p: float(np.sqrt(v)) for p, v in raw.items()}, T)


def subtract_accidentals(record: CountRecord) -> CountRecord:
    net, sigma, clamped = {}, {}, {}
    for p, raw in record.raw.items():
        acc = record.accidental.get(p, 0.0)
        diff = raw - acc
        clamped[p] = diff < 0
        net[p] = max(diff, 0.0)
        sigma[p] = float(np.sqrt(raw + acc))
    return replace(record, net=net, sigma=sigma, clamped=clamped, subtracted=True)


# --- CSV -------------------------------------------------------------------

CSV_HEADER = ("scan_value", "pair", "raw", "accidental", "net", "sigma")


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def csv_rows(record: CountRecord, scan_value: float) -> list[tuple]:
    return [(scan_value, f"{a}/{b}", record.raw[(a, b)], record.accidental.get((a, b), 0.0),
             record.net[(a, b)], record.sigma[(a, b)]) for a, b in record.pairs]


def write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(rows))


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for scan, pair, raw, acc, net, sig in rows:
        w.writerow((_fmt(scan), pair, _fmt(raw), _fmt(acc), _fmt(net), _fmt(sig)))
    return buf.getvalue()


def read_csv(path) -> list[tuple]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(float(s), pair, float(r), float(a), float(n), float(g)) for s, pair, r, a, n, g in reader]
