"""End-to-end scans: source -> fiber -> stations -> counts -> fits -> report.

Each scan point is evaluated independently with its own RNG streams, so
the results do not depend on how points are scheduled across threads.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (FringeDataset, FidelityReport, VisibilityResult, certification_chain,
                       fit_sine, phasor_mean, polarization_visibility, qkd_threshold_check,
                       visibility_from_fit)
from .apparatus import (PAIR_NAMES_POL, PATH_PAIRS, POL_DETECTORS, coherence_envelope,
                        core_coincidence_distribution,
                        franson_pair_distribution, path_station_distribution)
from .channel import transmit
from .config import RunConfig, canonical_json, dumps
from .counts import (csv_rows, expected_counts, expected_rates, format_csv, read_csv, sample_counts,
                     subtract_accidentals)
from .errors import FitError, InsufficientCounts
from .oracle import franson_oracle, path_oracle, pure_components, scalar_time_coherence
from .source import CORE_PAIRS, prepare_source

# analyzer-basis names of the four polarization detector pairings
BASIS_PAIR_NAMES = {
    "HV": {"HH": "HH", "VV": "VV", "HV": "HV", "VH": "VH"},
    "DA": {"HH": "DD", "VV": "AA", "HV": "DA", "VH": "AD"},
}
CORRELATED = ("HH", "VV")


@dataclass
class FringeFit:
    pair: str
    name: str
    fit: object
    visibility: VisibilityResult | None
    error: str = ""


@dataclass
class BasisScan:
    basis: str
    x: np.ndarray
    records: list
    fits: dict                 # pair name -> FringeFit
    pol_steps: list            # per step: (VisibilityResult | None, flagged)
    pol_pooled: VisibilityResult | None
    csv: str
    oracle_diff: float | None = None


@dataclass
class EnergyTimeResult:
    core_pair: tuple[str, str]
    bases: dict
    qkd: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


@dataclass
class PathSetting:
    basis_phase: float
    x: np.ndarray
    records: list
    fits: dict                 # "D1/D3" -> FringeFit
    visibility: VisibilityResult | None
    csv: str
    oracle_diff: float | None = None


@dataclass
class PathResult:
    settings: list
    diagonals: tuple
    diag_csv: str
    point: FidelityReport | None
    bound: FidelityReport | None
    warnings: list = field(default_factory=list)


# --- helpers ---------------------------------------------------------------------

def channel_state(cfg: RunConfig):
    """Source state after propagation through the fiber."""
    return transmit(prepare_source(cfg.source).rho, cfg.fiber.build())


def _count(cfg, rates, T, scan_index, tag):
    if cfg.run.mode == "analytic":
        rec = expected_counts(rates, T, cfg.coincidence.inject_accidentals)
    else:
        rec = sample_counts(rates, T, cfg.run.seed, scan_index, cfg.coincidence.inject_accidentals, tag)
    return subtract_accidentals(rec) if cfg.coincidence.subtract_accidentals else rec


def _map(cfg, fn, items):
    items = list(items)
    if cfg.run.threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=cfg.run.threads) as pool:
        return list(pool.map(fn, items))


def _scan_points(scan):
    return np.linspace(scan.start, scan.stop, scan.steps)


def _fit(x, records, pair, name, scan, caught):
    y = np.array([r.net[pair] for r in records])
    s = np.array([r.sigma[pair] for r in records])
    ds = FringeDataset(x * scan.radians_per_unit, y, s, label=name)
    return _fit_dataset(ds, f"{pair[0]}/{pair[1]}", name, scan, caught)


def _fit_dataset(ds, label, name, scan, caught):
    try:
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            fit = fit_sine(ds, 1.0 if scan.lock_omega else None, counts=True)
            vis = visibility_from_fit(fit)
        caught.extend(f"{name}: {m.message}" for m in w)
        return FringeFit(label, name, fit, vis)
    except FitError as exc:
        caught.append(f"{name}: {exc}")
        return FringeFit(label, name, None, None, str(exc))


def _setting_visibility(fits, x):
    # D1/D3 and D2/D4 run in phase, D1/D4 and D2/D3 in anti-phase
    ok = [(ff.fit, 1 if ff.pair in ("D1/D3", "D2/D4") else -1) for ff in fits.values() if ff.fit is not None]
    if not ok:
        return None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return phasor_mean([f for f, _ in ok], [s for _, s in ok], float(np.mean(x)))
    except InsufficientCounts:
        return None


# --- energy-time / polarization ----------------------------------------------------

def _franson_oracle_diff(rho, cfg, core_a, core_b, iA, iB, an_a, an_b, dist):
    c = scalar_time_coherence(rho)
    if c is None or cfg.polarization.pbs_extinction > 0:
        return None
    c *= coherence_envelope(abs(iA.delay - iB.delay), cfg.source.coherence_time)
    ref = {}
    for terms in pure_components(rho):
        got = franson_oracle(terms, iA.phase, iB.phase, core_a, core_b, cfg.franson.bs_ratio,
                             (cfg.franson.monitored_output,), an_a.hwp_angle, an_b.hwp_angle, c)
        for (qa, oa, qb, ob, tag), p in got.items():
            k = (POL_DETECTORS[("A", oa)], POL_DETECTORS[("B", ob)], tag)
            ref[k] = ref.get(k, 0.0) + p
    keys = set(ref) | set(dist.probs)
    return max((abs(ref.get(k, 0.0) - dist.probs.get(k, 0.0)) for k in keys), default=0.0)


def run_energy_time_scan(cfg: RunConfig, oracle: bool = False) -> EnergyTimeResult:
    """Scan Bob's interferometer phase for one core pair in each configured basis."""
    scan = cfg.energy_time_scan
    core_a = scan.core_pair
    core_b = dict(CORE_PAIRS)[core_a]
    rho = channel_state(cfg)
    x = _scan_points(scan)
    eta = cfg.detectors.arm_efficiency
    dets = cfg.detectors.specs(POL_DETECTORS.values())
    caught: list[str] = []
    bases = {}
    for basis in scan.bases:
        an = cfg.polarization.analyzer(basis)

        def point(i, basis=basis, an=an):
            iA, iB = cfg.franson.interferometers(x[i] * scan.radians_per_unit)
            dist = franson_pair_distribution(rho, iA, iB, an, an, core_a, core_b, cfg.source.coherence_time)
            rates = expected_rates(dist, cfg.source.pair_rate, eta, eta, dets, cfg.coincidence.window,
                                   pairs=PAIR_NAMES_POL.values())
            rec = _count(cfg, rates, scan.integration_time, i, f"et:{basis}:")
            diff = _franson_oracle_diff(rho, cfg, core_a, core_b, iA, iB, an, an, dist) if oracle else None
            return rec, diff

        out = _map(cfg, point, range(scan.steps))
        records = [r for r, _ in out]
        names = BASIS_PAIR_NAMES[basis]
        fits = {names[k]: _fit(x, records, PAIR_NAMES_POL[k], names[k], scan, caught) for k in CORRELATED}

        totals = [sum(r.net[PAIR_NAMES_POL[k]] for k in PAIR_NAMES_POL) for r in records]
        floor = cfg.certify.pol_count_floor * max(totals)
        steps, pooled = [], np.zeros(4)
        pooled_var = np.zeros(4)
        order = ("HH", "VV", "HV", "VH")
        for r, tot in zip(records, totals):
            counts = [r.net[PAIR_NAMES_POL[k]] for k in order]
            sig = [r.sigma[PAIR_NAMES_POL[k]] for k in order]
            flagged = tot < floor
            try:
                vis = polarization_visibility(*counts, sigmas=sig)
            except InsufficientCounts:
                vis, flagged = None, True
            steps.append((vis, flagged))
            if not flagged:
                # pool raw - accidental unclamped; clamping each step biases the sum
                pooled += [r.raw[PAIR_NAMES_POL[k]] - (r.accidental[PAIR_NAMES_POL[k]] if r.subtracted else 0.0)
                           for k in order]
                pooled_var += np.square(sig)
        try:
            pol = polarization_visibility(*np.clip(pooled, 0, None), sigmas=np.sqrt(pooled_var))
        except InsufficientCounts:
            pol = None
        rows = [row for xi, r in zip(x, records) for row in csv_rows(r, float(xi))]
        diffs = [d for _, d in out if d is not None]
        bases[basis] = BasisScan(basis, x, records, fits, steps, pol, format_csv(rows),
                                 max(diffs) if diffs else None)

    res = EnergyTimeResult((core_a, core_b), bases, warnings=caught)
    thr = cfg.certify.qkd_threshold
    for b in bases.values():
        for name, ff in b.fits.items():
            if ff.visibility is not None:
                res.qkd[f"time.{name}"] = qkd_threshold_check(ff.visibility, thr)
        if b.pol_pooled is not None:
            res.qkd[f"pol.{b.basis}"] = qkd_threshold_check(b.pol_pooled, thr)
    return res


# --- path ----------------------------------------------------------------------

def _path_oracle_diff(rho, station, dist):
    if station.length_offsets or (station.pbs_prefilter and station.prefilter_angle != 0.0):
        return None
    ref = {}
    for terms in pure_components(rho):
        got = path_oracle(terms, station.theta, station.cores_a, station.cores_b, station.pair_offset,
                          station.basis_phase, station.bs_ratio_a, station.bs_ratio_b, station.pbs_prefilter)
        for (qa, qb), p in got.items():
            k = (f"D{1 + qa}", f"D{3 + qb}")
            ref[k] = ref.get(k, 0.0) + p
    return max(abs(ref.get(k, 0.0) - dist.coincidence(*k)) for k in PATH_PAIRS)


def source_cores(cfg: RunConfig):
    pairs = CORE_PAIRS[: cfg.source.n_core_pairs]
    return tuple(a for a, _ in pairs), tuple(b for _, b in pairs)


def measure_diagonals(cfg: RunConfig, rho=None):
    """Core-resolved coincidence populations ``p_i`` of the source pairs ``ii'``."""
    rho = channel_state(cfg) if rho is None else rho
    cores_a, cores_b = source_cores(cfg)
    dist = core_coincidence_distribution(rho, cores_a, cores_b)
    eta = cfg.detectors.arm_efficiency
    dets = cfg.detectors.specs(cores_a + cores_b)
    rates = expected_rates(dist, cfg.source.pair_rate, eta, eta, dets, cfg.coincidence.window,
                           pairs=[(a, b) for a in cores_a for b in cores_b])
    rec = _count(cfg, rates, cfg.path_scan.diag_integration_time, 0, "diag:")
    total = sum(rec.net.values())
    if total <= 0:
        raise InsufficientCounts("no core-resolved coincidences for the path populations")
    diag = tuple(rec.net.get((a, b), 0.0) / total for a, b in CORE_PAIRS[: cfg.source.n_core_pairs])
    return diag, rec


def run_path_scan(cfg: RunConfig, oracle: bool = False) -> PathResult:
    """Scan the piezo phase for each basis setting and certify path entanglement."""
    scan = cfg.path_scan
    rho = channel_state(cfg)
    x = _scan_points(scan)
    eta = cfg.detectors.arm_efficiency
    dets = cfg.detectors.specs(["D1", "D2", "D3", "D4"])
    caught: list[str] = []
    settings = []
    for k, bp in enumerate(cfg.path.basis_phases):
        def point(i, bp=bp, k=k):
            station = cfg.path.station(x[i] * scan.radians_per_unit, bp)
            dist = path_station_distribution(rho, station, cfg.source.coherence_time)
            rates = expected_rates(dist, cfg.source.pair_rate, eta, eta, dets, cfg.coincidence.window,
                                   pairs=PATH_PAIRS)
            rec = _count(cfg, rates, scan.integration_time, i, f"path:{k}:")
            return rec, (_path_oracle_diff(rho, station, dist) if oracle else None)

        out = _map(cfg, point, range(scan.steps))
        records = [r for r, _ in out]
        fits = {}
        for pair in PATH_PAIRS:
            ff = _fit(x, records, pair, f"setting{k}:{pair[0]}/{pair[1]}", scan, caught)
            fits[ff.pair] = ff
        vis = _setting_visibility(fits, x * scan.radians_per_unit)
        rows = [row for xi, r in zip(x, records) for row in csv_rows(r, float(xi))]
        diffs = [d for _, d in out if d is not None]
        settings.append(PathSetting(bp, x, records, fits, vis, format_csv(rows), max(diffs) if diffs else None))

    diag, diag_rec = measure_diagonals(cfg, rho)
    return _certify(cfg, settings, diag, format_csv(csv_rows(diag_rec, 0.0)), caught)


def certify_from_dir(cfg: RunConfig, directory) -> PathResult:
    """Re-run the path analysis from the CSVs of an earlier run."""
    directory = Path(directory)
    scan = cfg.path_scan
    files = sorted(directory.glob("path_setting*.csv"), key=lambda f: int(f.stem.removeprefix("path_setting")))
    if not files:
        raise FileNotFoundError(f"no path_setting*.csv in {directory}")
    caught: list[str] = []
    settings = []
    for k, f in enumerate(files):
        rows = read_csv(f)
        fits = {}
        for a, b in PATH_PAIRS:
            label = f"{a}/{b}"
            ds = FringeDataset.from_csv_rows(rows, label)
            ds = FringeDataset(ds.x * scan.radians_per_unit, ds.y, ds.sigma, label=label)
            fits[label] = _fit_dataset(ds, label, f"setting{k}:{label}", scan, caught)
        x = np.unique([r[0] for r in rows])
        bp = cfg.path.basis_phases[k] if k < len(cfg.path.basis_phases) else float("nan")
        vis = _setting_visibility(fits, x * scan.radians_per_unit)
        settings.append(PathSetting(bp, x, [], fits, vis, f.read_text()))
    diag_file = directory / "path_diagonals.csv"
    rows = read_csv(diag_file)
    net = {pair: n for _, pair, _, _, n, _ in rows}
    total = sum(net.values())
    if total <= 0:
        raise InsufficientCounts(f"{diag_file}: no coincidences")
    diag = tuple(net.get(f"{a}/{b}", 0.0) / total for a, b in CORE_PAIRS[: cfg.source.n_core_pairs])
    return _certify(cfg, settings, diag, diag_file.read_text(), caught)


def _certify(cfg, settings, diag, diag_csv, caught) -> PathResult:
    cores_a, _ = source_cores(cfg)
    pair = (cores_a.index(cfg.path.cores_a[0]), cores_a.index(cfg.path.cores_a[1]))
    vis = [s.visibility for s in settings if s.visibility is not None]
    point_rep = bound_rep = None
    if vis:
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            point_rep = certification_chain(vis, diag, pair, cfg.certify.combine, 0.0)
            bound_rep = certification_chain(vis, diag, pair, cfg.certify.combine, cfg.certify.n_sigma)
        caught.extend(str(m.message) for m in w)
    return PathResult(settings, diag, diag_csv, point_rep, bound_rep, caught)


# --- report ---------------------------------------------------------------------------

def _vis(v: VisibilityResult | None) -> str:
    return "nan nan" if v is None else f"{v.value:.6f} {v.sigma:.6f}"


def _table_row(name, v, verdict):
    cell = "  n/a" if v is None else format(v, "")
    mark = "" if verdict is None else ("PASS" if verdict.passed else "FAIL")
    return f"| {name:<4} | {cell:>12} | {mark:<4} |"


def summary_text(cfg: RunConfig, et: EnergyTimeResult | None = None, path: PathResult | None = None) -> str:
    """Structured key-value summary; contains no timestamps so reruns compare equal."""
    out = [f"config_hash = {cfg.hash()}", f"seed = {cfg.run.seed}", f"mode = {cfg.run.mode}", ""]
    thr = cfg.certify.qkd_threshold
    if et is not None:
        a, b = et.core_pair
        out += ["[energy_time]", f"core_pair = {a}-{b}", "scan_target = franson_phase_b"]
        for basis, bs in et.bases.items():
            for name, ff in bs.fits.items():
                out.append(f"time_visibility.{name} = {_vis(ff.visibility)}")
            out.append(f"pol_visibility.{basis} = {_vis(bs.pol_pooled)}")
            flagged = [i for i, (_, f) in enumerate(bs.pol_steps) if f]
            out.append(f"pol_low_count_steps.{basis} = {' '.join(map(str, flagged)) or '-'}")
            if bs.oracle_diff is not None:
                out.append(f"oracle_max_diff.{basis} = {bs.oracle_diff:.3e}")
        for key, verdict in et.qkd.items():
            out.append(f"qkd.{key} = {verdict.line()}")
        out += ["", f"# core pair {a}-{b}: visibilities in %, QKD limit {100 * thr:.0f}%",
                "| pair |   visibility | QKD  |", "|------|--------------|------|"]
        for basis, bs in et.bases.items():
            for name, ff in bs.fits.items():
                out.append(_table_row(name, ff.visibility, et.qkd.get(f"time.{name}")))
        for basis, bs in et.bases.items():
            out.append(_table_row(f"P{basis}", bs.pol_pooled, et.qkd.get(f"pol.{basis}")))
        out.append("")
    if path is not None:
        out += ["[path]", "scan_target = piezo_theta"]
        for k, s in enumerate(path.settings):
            out.append(f"basis_phase.{k} = {s.basis_phase:.12g}")
            for pair, ff in s.fits.items():
                out.append(f"fringe_visibility.{k}.{pair} = {_vis(ff.visibility)}")
            out.append(f"path_visibility.{k} = {_vis(s.visibility)}")
            if s.oracle_diff is not None:
                out.append(f"oracle_max_diff.{k} = {s.oracle_diff:.3e}")
        out.append("diagonals = " + " ".join(f"{p:.6f}" for p in path.diagonals))
        for label, rep in (("point", path.point), ("bound", path.bound)):
            if rep is None:
                out.append(f"chain.{label} = unavailable")
                continue
            out += [f"chain.{label}.n_sigma = {rep.n_sigma:g}",
                    f"chain.{label}.visibility = {rep.visibility:.6f}",
                    f"chain.{label}.offdiag = {rep.offdiag:.6f}",
                    f"chain.{label}.fidelity = {rep.fidelity:.6f}",
                    f"chain.{label}.schmidt_number = {rep.schmidt_number}"]
        if path.bound is not None:
            out.append(f"certified_schmidt_number = {path.bound.schmidt_number}")
            out.append(f"assumption = {path.bound.assumption}")
        for k, s in enumerate(path.settings):
            if s.visibility is not None:
                out.append(f"qkd.path.{k} = {qkd_threshold_check(s.visibility, thr).line()}")
        out += ["", "# path visibilities in %",
                "| set  |   visibility | QKD  |", "|------|--------------|------|"]
        for k, s in enumerate(path.settings):
            v = s.visibility
            out.append(_table_row(f"S{k}", v, qkd_threshold_check(v, thr) if v else None))
        out.append("")
    return "\n".join(out) + "\n"


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None


def report(cfg: RunConfig, et: EnergyTimeResult | None = None, path: PathResult | None = None,
           out_dir=None) -> Path:
    """Write CSVs, ``summary.txt``, the resolved ``config.ini`` and ``manifest.json``."""
    out = Path(out_dir or cfg.run.output)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    files = {}
    if et is not None:
        a, _ = et.core_pair
        for basis, bs in et.bases.items():
            files[f"energy_time_core{a}_{basis}.csv"] = bs.csv
    if path is not None:
        for k, s in enumerate(path.settings):
            files[f"path_setting{k}.csv"] = s.csv
        files["path_diagonals.csv"] = path.diag_csv
    files["summary.txt"] = summary_text(cfg, et, path)
    files["config.ini"] = dumps(cfg, execution=False)
    for name, text in files.items():
        _write(out / name, text)
    manifest = {
        "version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.run.seed,
        "mode": cfg.run.mode,
        "execution": {"threads": cfg.run.threads, "output": str(out)},
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "artifacts": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
        "scan_targets": scan_targets(cfg),
        "config": json.loads(canonical_json(cfg)),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def scan_targets(cfg: RunConfig) -> dict:
    """Which parameter each scan varies and the phases it holds fixed."""
    et, p = cfg.energy_time_scan, cfg.path_scan
    return {
        "energy_time": {"varies": "franson.phase_b",
                        "range": [et.start * et.radians_per_unit, et.stop * et.radians_per_unit],
                        "fixed": {"franson.phase_a": cfg.franson.phase_a,
                                  "polarization.hv_angle_deg": cfg.polarization.hv_angle_deg,
                                  "polarization.da_angle_deg": cfg.polarization.da_angle_deg}},
        "path": {"varies": "path.theta",
                 "range": [p.start * p.radians_per_unit, p.stop * p.radians_per_unit],
                 "fixed": {"path.pair_offset": cfg.path.pair_offset,
                           "path.basis_phases": list(cfg.path.basis_phases)}},
    }
