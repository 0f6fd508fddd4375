"""Run configuration: INI sections mirroring the module configs.

Every physical default is embedded here and may be overridden per key.
Numeric values accept simple expressions in ``pi`` (``pi/2``, ``4*pi``).
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import hashlib
import json
import math
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .apparatus import FransonInterferometer, PathStation, PolarizationAnalyzer
from .channel import FiberSpec, LAYOUT, neighbour_crosstalk
from .counts import CoincidenceConfig, DetectorSpec
from .errors import ConfigError
from .source import CORE_PAIRS, SourceConfig


@dataclass(frozen=True)
class FiberConfig:
    length: float = 411.0
    loss_db: dict = field(default_factory=dict)
    phase: dict = field(default_factory=dict)
    pol_rotation: dict = field(default_factory=dict)
    crosstalk_kappa: float = 0.0

    def build(self) -> FiberSpec:
        drift = {}
        for core, ang in self.pol_rotation.items():
            c, s = math.cos(ang), math.sin(ang)
            drift[core] = np.array([[c, -s], [s, c]], dtype=complex)
        xt = neighbour_crosstalk(self.crosstalk_kappa) if self.crosstalk_kappa > 0 else None
        return FiberSpec(self.length, dict(self.loss_db), dict(self.phase), drift, xt)


@dataclass(frozen=True)
class FransonConfig:
    delay_a: float = 1.2e-9
    delay_b: float = 1.2e-9
    phase_a: float = 0.0
    bs_ratio: float = 0.5
    monitored_output: int = 0

    def interferometers(self, phase_b: float):
        return (FransonInterferometer(self.delay_a, self.phase_a, self.bs_ratio, self.monitored_output),
                FransonInterferometer(self.delay_b, phase_b, self.bs_ratio, self.monitored_output))


@dataclass(frozen=True)
class PolarizationConfig:
    hv_angle_deg: float = 0.0
    da_angle_deg: float = 22.5
    pbs_extinction: float = 0.0

    def analyzer(self, basis: str) -> PolarizationAnalyzer:
        angle = {"HV": self.hv_angle_deg, "DA": self.da_angle_deg}[basis]
        return PolarizationAnalyzer(math.radians(angle), self.pbs_extinction)


@dataclass(frozen=True)
class PathConfig:
    cores_a: tuple = ("3", "4")
    cores_b: tuple = ("3'", "4'")
    pair_offset: float = math.pi
    basis_phases: tuple = (0.0, math.pi)
    length_offsets: dict = field(default_factory=dict)
    bs_ratio_a: float = 0.5
    bs_ratio_b: float = 0.5
    pbs_prefilter: bool = True
    prefilter_angle: float = 0.0

    def station(self, theta: float, basis_phase: float) -> PathStation:
        return PathStation(theta, tuple(self.cores_a), tuple(self.cores_b), self.pair_offset, basis_phase,
                           dict(self.length_offsets), self.bs_ratio_a, self.bs_ratio_b,
                           self.pbs_prefilter, self.prefilter_angle)


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.80
    dark_rate: float = 100.0
    arm_transmission: float = 0.006

    def specs(self, labels) -> dict:
        return {lab: DetectorSpec(lab, self.efficiency, self.dark_rate) for lab in labels}

    @property
    def arm_efficiency(self) -> float:
        return self.arm_transmission * self.efficiency


@dataclass(frozen=True)
class EnergyTimeScanConfig:
    core_pair: str = "1"
    bases: tuple = ("HV", "DA")
    start: float = 0.0
    stop: float = 4 * math.pi
    steps: int = 16
    integration_time: float = 30.0
    lock_omega: bool = True
    radians_per_unit: float = 1.0


@dataclass(frozen=True)
class PathScanConfig:
    start: float = 0.0
    stop: float = 4 * math.pi
    steps: int = 16
    integration_time: float = 1.0
    diag_integration_time: float = 1.0
    lock_omega: bool = True
    radians_per_unit: float = 1.0


@dataclass(frozen=True)
class CertifyConfig:
    combine: str = "min"
    n_sigma: float = 3.0
    qkd_threshold: float = 0.81
    pol_count_floor: float = 0.1


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    mode: str = "sampled"
    threads: int = 1
    output: str = "out"


@dataclass(frozen=True)
class RunConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    fiber: FiberConfig = field(default_factory=FiberConfig)
    franson: FransonConfig = field(default_factory=FransonConfig)
    polarization: PolarizationConfig = field(default_factory=PolarizationConfig)
    path: PathConfig = field(default_factory=PathConfig)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    coincidence: CoincidenceConfig = field(default_factory=CoincidenceConfig)
    energy_time_scan: EnergyTimeScanConfig = field(default_factory=EnergyTimeScanConfig)
    path_scan: PathScanConfig = field(default_factory=PathScanConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    run: RunSection = field(default_factory=RunSection)

    def replace(self, **sections) -> "RunConfig":
        """Override individual keys: ``replace(source={"p_pol": 0.1})``."""
        changes = {}
        for name, values in sections.items():
            current = getattr(self, name)
            changes[name] = dataclasses.replace(current, **values) if isinstance(values, dict) else values
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self).encode()).hexdigest()


SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}
# integration times belong to the scan sections
_EXCLUDED = {("coincidence", "integration_time")}
# execution settings: they never change results, so they stay out of the hash
EXECUTION_KEYS = {("run", "threads"), ("run", "output")}


def canonical_json(cfg: RunConfig) -> str:
    """Result-relevant configuration as canonical JSON (execution keys omitted)."""
    def conv(v, section=None):
        if isinstance(v, RunConfig):
            return {f.name: conv(getattr(v, f.name), f.name) for f in dataclasses.fields(v)}
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)
                    if (section, f.name) not in EXECUTION_KEYS | _EXCLUDED}
        if isinstance(v, dict):
            return {str(k): conv(x) for k, x in sorted(v.items())}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        if isinstance(v, float):
            return repr(v)
        return v
    return json.dumps(conv(cfg), sort_keys=True, separators=(",", ":"))


# --- parsing -----------------------------------------------------------------

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}


def eval_number(text: str) -> float:
    """Evaluate a numeric literal or arithmetic expression in ``pi``."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(f"not a number: {text!r}")
    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except SyntaxError:
        raise ValueError(f"not a number: {text!r}") from None


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(text: str, default):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        v = eval_number(text)
        if v != int(v):
            raise ValueError(f"expected an integer, got {text!r}")
        return int(v)
    if isinstance(default, float):
        return eval_number(text)
    if isinstance(default, str):
        return text.strip()
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default and isinstance(default[0], float):
            return tuple(eval_number(t) for t in items)
        return tuple(items)
    if isinstance(default, dict):
        out = {}
        for item in (t.strip() for t in text.split(",")):
            if not item:
                continue
            key, sep, val = item.rpartition(":")
            if not sep:
                raise ValueError(f"expected 'core: value' entries, got {item!r}")
            out[key.strip()] = eval_number(val)
        return out
    raise ValueError(f"unsupported field type {type(default).__name__}")


def _line_index(text: str) -> dict:
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
            continue
        m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def loads(text: str, path=None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], line, path) from None
    lines = _line_index(text)
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]", lines.get((name, None)), path)
        defaults = SECTIONS[name]()
        known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(defaults)}
        values = {}
        for key, raw in parser.items(name):
            line = lines.get((name, key))
            if key not in known or (name, key) in _EXCLUDED:
                raise ConfigError(f"unknown key '{key}' in [{name}]", line, path)
            try:
                values[key] = _parse_value(raw, known[key])
            except ValueError as exc:
                raise ConfigError(f"[{name}] {key}: {exc}", line, path) from None
        try:
            sections[name] = dataclasses.replace(defaults, **values)
        except ValueError as exc:
            key = next((k for k in values if k in str(exc)), None)
            line = lines.get((name, key)) if key else lines.get((name, None))
            raise ConfigError(f"[{name}] {exc}", line, path) from None
    cfg = RunConfig(**sections)
    validate(cfg, lines, path)
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return loads(text, path)


def validate(cfg: RunConfig, lines=None, path=None) -> None:
    lines = lines or {}

    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", lines.get((section, key)) or lines.get((section, None)), path)

    pairs = dict(CORE_PAIRS[: cfg.source.n_core_pairs])
    et = cfg.energy_time_scan
    if et.core_pair not in pairs:
        fail("energy_time_scan", "core_pair", f"core {et.core_pair!r} is not fed by the source ({sorted(pairs)})")
    for b in et.bases:
        if b not in ("HV", "DA"):
            fail("energy_time_scan", "bases", f"unknown basis {b!r}")
    for section, scan in (("energy_time_scan", et), ("path_scan", cfg.path_scan)):
        if scan.steps < 8:
            fail(section, "steps", "fit-bound scans need at least 8 steps")
        if scan.stop == scan.start:
            fail(section, "stop", "scan range is empty")
        if scan.integration_time <= 0:
            fail(section, "integration_time", "must be positive")
    p = cfg.path
    for key in ("cores_a", "cores_b"):
        cores = getattr(p, key)
        if len(cores) != 2:
            fail("path", key, "exactly two cores per beamsplitter")
        for c in cores:
            if c not in LAYOUT:
                fail("path", key, f"core {c!r} is not in the fiber layout")
    for a, b in zip(p.cores_a, p.cores_b):
        if pairs.get(a) != b:
            fail("path", "cores_a", f"core pair {a}-{b} is not fed by the source")
    for c in p.length_offsets:
        if c not in p.cores_a + p.cores_b:
            fail("path", "length_offsets", f"core {c!r} is not a station input")
    for key in ("loss_db", "phase", "pol_rotation"):
        for c in getattr(cfg.fiber, key):
            if c not in LAYOUT:
                fail("fiber", key, f"core {c!r} is not in the fiber layout")
    if cfg.run.mode not in ("sampled", "analytic"):
        fail("run", "mode", "must be 'sampled' or 'analytic'")
    if cfg.run.threads < 1:
        fail("run", "threads", "must be >= 1")
    if cfg.certify.combine not in ("min", "mean"):
        fail("certify", "combine", "must be 'min' or 'mean'")
    try:
        cfg.fiber.build()
    except ValueError as exc:
        fail("fiber", None, str(exc))


def dumps(cfg: RunConfig, execution: bool = True) -> str:
    """Resolved configuration as INI text (round-trips through :func:`loads`).

    ``execution=False`` leaves out thread count and output directory.
    """
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, tuple):
            return ", ".join(fmt(x) for x in v)
        if isinstance(v, dict):
            return ", ".join(f"{k}: {fmt(float(x))}" for k, x in sorted(v.items()))
        return str(v)

    out = []
    skip = _EXCLUDED if execution else _EXCLUDED | EXECUTION_KEYS
    for name in SECTIONS:
        sec = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in dataclasses.fields(sec):
            if (name, f.name) in skip:
                continue
            out.append(f"{f.name} = {fmt(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)
