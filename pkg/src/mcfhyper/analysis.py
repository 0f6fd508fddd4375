"""Visibilities, sine fits and the path-entanglement certification chain."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FitError, InsufficientCounts, RangeError

QKD_THRESHOLD = 0.81
NON_ADVERSARIAL_NOTE = (
    "non-adversarial: the measured |<33'|rho|44'>| is taken as representative "
    "of every |<ii'|rho|jj'>|"
)


class FringeWarning(UserWarning):
    pass


class InconsistentInputWarning(UserWarning):
    pass


@dataclass(frozen=True)
class VisibilityResult:
    value: float
    sigma: float
    method: str

    def __format__(self, format_spec):
        return f"{100 * self.value:.1f} ± {100 * self.sigma:.1f}"


def polarization_visibility(cc_hh, cc_vv, cc_hv, cc_vh, sigmas=None) -> VisibilityResult:
    """``(HH + VV - HV - VH) / (HH + VV + HV + VH)`` with first-order errors.

    ``sigmas`` defaults to Poisson errors ``sqrt(count)``; pass the
    post-subtraction errors when the counts are accidental-corrected.
    """
    counts = np.array([cc_hh, cc_vv, cc_hv, cc_vh], dtype=float)
    if sigmas is None:
        sig = np.sqrt(np.clip(counts, 0, None))
    else:
        sig = np.asarray(sigmas, dtype=float)
    a, b = counts[:2].sum(), counts[2:].sum()
    total = a + b
    if total <= 0:
        raise InsufficientCounts("no coincidences in any polarization channel")
    V = (a - b) / total
    # dV/da = 2b/N^2, dV/db = -2a/N^2
    var = (2 * b / total**2) ** 2 * np.sum(sig[:2] ** 2) + (2 * a / total**2) ** 2 * np.sum(sig[2:] ** 2)
    return VisibilityResult(float(V), float(np.sqrt(var)), "direct-formula")


# --- sine fitting -------------------------------------------------------------

@dataclass(frozen=True)
class FringeDataset:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    basis: str = ""
    label: str = ""

    def __post_init__(self):
        x, y, s = (np.asarray(v, dtype=float) for v in (self.x, self.y, self.sigma))
        if not (x.shape == y.shape == s.shape) or x.ndim != 1:
            raise ValueError("x, y and sigma must be 1-D arrays of equal length")
        # a zero-count point still carries an uncertainty of order one count
        s = np.where(s > 0, s, 1.0)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", s)

    @classmethod
    def from_csv_rows(cls, rows, pair: str, basis: str = "") -> "FringeDataset":
        sel = [r for r in rows if r[1] == pair]
        if not sel:
            raise ValueError(f"no rows for pair {pair}")
        x = [r[0] for r in sel]
        return cls(np.array(x), np.array([r[4] for r in sel]), np.array([r[5] for r in sel]), basis, pair)


@dataclass(frozen=True)
class SineFit:
    """``y = offset + amplitude * sin(omega * x + phase)``.

    ``covariance`` is ordered (offset, amplitude, omega, phase); entries of
    parameters that are undetermined (flat data) are infinite.
    """

    offset: float
    amplitude: float
    omega: float
    phase: float
    covariance: np.ndarray
    chi2_red: float
    iterations: int = 0
    degenerate: bool = False
    omega_locked: bool = False

    def __call__(self, x):
        return self.offset + self.amplitude * np.sin(self.omega * np.asarray(x) + self.phase)

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def _linear_fit(u, y, w, omega):
    """Weighted linear LSQ of ``C + a sin(omega u) + b cos(omega u)``."""
    M = np.column_stack([np.ones_like(u), np.sin(omega * u), np.cos(omega * u)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(M * sw[:, None], y * sw, rcond=None)
    resid = (y - M @ coef) * sw
    return coef, float(resid @ resid), M


def _omega_range(u):
    span = u.max() - u.min()
    du = np.median(np.diff(np.sort(u)))
    return 2 * np.pi / (4 * span), np.pi / du


def _detection_threshold(u, alpha=0.01):
    """Chi-square gain a sine must beat to be told apart from noise.

    Under a flat null the gain at one frequency is chi2(2) distributed;
    a search over ``M`` independent frequencies raises the bar to keep the
    false-alarm probability at ``alpha``.
    """
    lo, hi = _omega_range(u)
    M = max(1, round((hi - lo) * np.ptp(u) / (2 * np.pi)))
    return -2 * math.log(1 - (1 - alpha) ** (1 / M))


def _initial_omega(u, y, w):
    lo, hi = _omega_range(u)
    grid = np.linspace(lo, hi, max(200, int(20 * hi / lo)))
    # batched weighted normal equations for C + a sin + b cos at every grid point
    S, Cs = np.sin(np.outer(grid, u)), np.cos(np.outer(grid, u))
    B = np.stack([np.ones_like(S), S, Cs], axis=1)
    Bw = B * w
    N = np.einsum("gin,gjn->gij", Bw, B)
    rhs = np.einsum("gin,n->gi", Bw, y)
    coef = np.linalg.solve(N + 1e-12 * np.eye(3) * N[:, :1, :1], rhs[..., None])[..., 0]
    resid = y - np.einsum("gi,gin->gn", coef, B)
    chi = np.einsum("gn,n->g", resid**2, w)
    return float(grid[np.argmin(chi)])


def _model_jacobian(u, p, locked):
    C, A, om, ph = p
    arg = om * u + ph
    s, c = np.sin(arg), np.cos(arg)
    cols = [np.ones_like(u), s]
    if not locked:
        cols.append(A * u * c)
    cols.append(A * c)
    return C + A * s, np.column_stack(cols)


def _gauss_newton(u, y, sw, p, free, locked, max_iter, rtol):
    lam = 1e-6
    for it in range(1, max_iter + 1):
        model, J = _model_jacobian(u, p, locked)
        r = (y - model) * sw
        Jw = J * sw[:, None]
        JTJ = Jw.T @ Jw
        g = Jw.T @ r
        chi2 = float(r @ r)
        while True:
            step = np.linalg.solve(JTJ + lam * np.diag(np.diag(JTJ)), g)
            trial = p.copy()
            trial[free] += step
            r_new = (y - _model_jacobian(u, trial, locked)[0]) * sw
            if float(r_new @ r_new) <= chi2 or lam > 1e12:
                break
            lam *= 10
        lam = max(lam / 10, 1e-12)
        p = trial
        floor = np.array([1.0, 1e-3 * abs(p[0]) + 1e-300, 1e-3, 1.0])[free]
        if np.all(np.abs(step) <= rtol * np.maximum(np.abs(p[free]), floor)):
            return p, it
    raise FitError("sine fit did not converge", {"iterations": max_iter, "params": p.tolist(), "step": step.tolist()})


def fit_sine(dataset: FringeDataset, omega: float | None = None, max_iter: int = 200,
             rtol: float = 1e-10, counts: bool = False) -> SineFit:
    """Weighted least-squares sine fit (weights ``1/sigma^2``).

    The angular frequency starts at the best point of a weighted
    periodogram (or is locked to ``omega``) and all parameters are then
    refined by damped Gauss-Newton until the relative step drops below
    ``rtol``.  Data without a resolvable sinusoid give a ``degenerate``
    fit whose amplitude error is the detection threshold.

    With ``counts=True`` the data are Poisson counts (possibly background
    subtracted, so that ``sigma**2 - y`` is the extra variance); the fit is
    then iterated with weights from the model-predicted variance.
    """
    x, y, sig = dataset.x, dataset.y, dataset.sigma
    n = len(x)
    if n < 8:
        raise FitError(f"need at least 8 points, got {n}", {"n": n})
    if np.ptp(x) <= 0:
        raise FitError("scan values do not span an interval")
    locked = omega is not None
    x0, scale = float(x.min()), float(np.ptp(x)) / (2 * np.pi)
    u = (x - x0) / scale
    w = 1.0 / sig**2
    om = omega * scale if locked else _initial_omega(u, y, w)
    coef, chi2, M = _linear_fit(u, y, w, om)
    C, a, b = coef
    A, ph = math.hypot(a, b), math.atan2(b, a)

    # Amplitude not resolved from noise: report the linear fit, leave omega/phase open.
    sw = np.sqrt(w)
    lin_cov = np.linalg.pinv((M * sw[:, None]).T @ (M * sw[:, None]))
    sigma_A = math.sqrt(max(lin_cov[1, 1], lin_cov[2, 2]))
    if locked:
        flat = A <= sigma_A
    else:
        # a searched frequency always finds some noise power; require significance
        chi2_const = float(np.sum(w * (y - np.sum(w * y) / np.sum(w)) ** 2))
        thr = _detection_threshold(u)
        flat = chi2_const - chi2 < thr
        sigma_A *= math.sqrt(thr)
    if flat:
        cov = np.full((4, 4), np.inf)
        cov[0, 0] = lin_cov[0, 0]
        cov[1, 1] = sigma_A**2
        cov[0, 1] = cov[1, 0] = 0.0
        dof = max(n - (3 if locked else 4), 1)
        return SineFit(float(C), float(A), om / scale, _wrap(ph - om * x0 / scale), cov, chi2 / dof,
                       0, True, locked)

    p = np.array([C, A, om, ph])
    free = [0, 1, 3] if locked else [0, 1, 2, 3]
    p, it = _gauss_newton(u, y, sw, p, free, locked, max_iter, rtol)
    if counts:
        # Weights from observed counts favour downward fluctuations and bias
        # the offset low; use the variance the fitted model predicts instead.
        extra = sig**2 - y
        for _ in range(10):
            model = _model_jacobian(u, p, locked)[0]
            sw = 1.0 / np.sqrt(np.maximum(model + extra, 1.0))
            prev = p
            p, more = _gauss_newton(u, y, sw, p, free, locked, max_iter, rtol)
            it += more
            if np.allclose(p, prev, rtol=1e-8, atol=1e-10):
                break

    model, J = _model_jacobian(u, p, locked)
    r = (y - model) * sw
    Jw = J * sw[:, None]
    cov_free = np.linalg.inv(Jw.T @ Jw)
    cov_u = np.zeros((4, 4))
    cov_u[np.ix_(free, free)] = cov_free
    C, A, om, ph = p
    if A < 0:
        A, ph = -A, ph + np.pi
    # back to the caller's x: omega = om/scale, phase = ph - om*x0/scale
    G = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1 / scale, 0], [0, 0, -x0 / scale, 1]])
    cov = G @ cov_u @ G.T
    dof = max(n - len(free), 1)
    fit = SineFit(float(C), float(A), float(om / scale), _wrap(ph - om * x0 / scale), cov,
                  float(r @ r) / dof, it, False, locked)
    if not locked and fit.omega * np.ptp(x) < 2 * np.pi * 0.95:
        warnings.warn("scan covers less than one fitted period", FringeWarning, stacklevel=2)
    return fit


def _wrap(phase):
    return float((phase + np.pi) % (2 * np.pi) - np.pi)


def visibility_from_fit(fit: SineFit) -> VisibilityResult:
    """``A / C``, equal to ``(max - min) / (max + min)`` of the fitted sinusoid."""
    C, A = fit.offset, fit.amplitude
    if C <= 0:
        raise FitError("fitted offset is not positive", {"offset": C})
    V = A / C
    if A > C:
        warnings.warn(f"fitted amplitude exceeds offset (V={V:.4f})", FringeWarning, stacklevel=2)
    cov = fit.covariance
    grad = np.array([-A / C**2, 1 / C])
    var = float(grad @ cov[:2, :2] @ grad)
    return VisibilityResult(float(V), math.sqrt(max(var, 0.0)), "sine-fit")


def bootstrap_visibility(dataset: FringeDataset, n_boot: int = 200, seed: int = 0,
                         omega: float | None = None, counts: bool = False) -> VisibilityResult:
    """Parametric-bootstrap cross-check of the fit uncertainty."""
    fit = fit_sine(dataset, omega, counts=counts)
    V0 = visibility_from_fit(fit).value
    rng = np.random.default_rng(seed)
    model = fit(dataset.x)
    vals = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FringeWarning)
        for _ in range(n_boot):
            y = rng.normal(model, dataset.sigma)
            f = fit_sine(FringeDataset(dataset.x, y, dataset.sigma), omega, counts=counts)
            vals.append(f.amplitude / f.offset)
    return VisibilityResult(V0, float(np.std(vals, ddof=1)), "bootstrap")


def phasor_mean(fits: Sequence, signs: Sequence[int], x_ref: float) -> VisibilityResult:
    """Inverse-variance mean of several fringes' visibilities as phasors.

    Each fringe contributes ``sign * V * exp(i (omega x_ref + phase))``;
    ``sign`` is -1 for fringes known to run in anti-phase.  Noise-only
    fringes have random phases and average towards zero, unlike their
    (always positive) amplitudes.
    """
    num, wsum = 0j, 0.0
    for fit, sign in zip(fits, signs):
        vis = visibility_from_fit(fit)
        if not (vis.sigma > 0 and math.isfinite(vis.sigma)):
            continue
        w = 1.0 / vis.sigma**2
        num += w * sign * vis.value * np.exp(1j * (fit.omega * x_ref + fit.phase))
        wsum += w
    if wsum == 0:
        raise InsufficientCounts("no fringe with a finite visibility error")
    return VisibilityResult(float(abs(num) / wsum), float(1 / math.sqrt(wsum)), "sine-fit")


# --- certification chain ---------------------------------------------------------

def offdiag_from_visibility(V: float, p_i: float, p_j: float) -> float:
    """Lower bound on ``|<ii'|rho|jj'>|`` from a two-pair interference visibility."""
    if not 0.0 <= V <= 1.0:
        raise RangeError(f"visibility {V} outside [0, 1]")
    if p_i < 0 or p_j < 0:
        raise RangeError("populations must be non-negative")
    return V * (p_i + p_j) / 2


def path_fidelity(diagonals: Sequence[float], offdiag: float) -> float:
    """Fidelity with the maximally path-entangled state when every
    off-diagonal element has magnitude ``offdiag``."""
    p = np.asarray(diagonals, dtype=float)
    d = len(p)
    if d < 2:
        raise RangeError("need at least two path populations")
    if np.any(p < 0) or p.sum() > 1 + 1e-12:
        raise RangeError("populations must be non-negative and sum to at most 1")
    if offdiag < 0:
        raise RangeError("off-diagonal magnitude must be non-negative")
    F = (p.sum() + d * (d - 1) * offdiag) / d
    if F > 1:
        warnings.warn(f"fidelity {F:.4f} exceeds 1: inconsistent inputs", InconsistentInputWarning, stacklevel=2)
    return float(F)


def certify_schmidt_number(F: float, d: int, tol: float = 1e-12) -> int:
    """Largest ``k <= d`` with ``F > (k-1)/d`` (at least 1).

    ``F`` must clear a bound by more than ``tol`` so that rounding in the
    population sum cannot certify anything.
    """
    if d < 2:
        raise RangeError("dimension must be at least 2")
    if not 0.0 <= F <= 1.0:
        raise RangeError(f"fidelity {F} outside [0, 1]")
    k = 1
    for cand in range(1, d + 1):
        if F > (cand - 1) / d + tol:
            k = cand
    return k


@dataclass(frozen=True)
class QKDVerdict:
    value: float
    sigma: float
    threshold: float
    passed: bool
    margin_sigma: float

    def line(self, name: str = "") -> str:
        verdict = "PASS" if self.passed else "FAIL"
        prefix = f"{name}: " if name else ""
        return (f"{prefix}V={self.value:.4f}±{self.sigma:.4f} vs {self.threshold:.2f} -> {verdict} "
                f"({self.margin_sigma:+.1f} sigma)")


def qkd_threshold_check(V, threshold: float = QKD_THRESHOLD) -> QKDVerdict:
    """Pass iff the visibility is strictly above ``threshold``."""
    if isinstance(V, VisibilityResult):
        value, sigma = V.value, V.sigma
    else:
        value, sigma = float(V), 0.0
    diff = value - threshold
    if sigma > 0:
        margin = diff / sigma
    else:
        margin = math.copysign(math.inf, diff) if diff != 0 else 0.0
    return QKDVerdict(value, sigma, threshold, value > threshold, margin)


@dataclass(frozen=True)
class FidelityReport:
    diagonals: tuple[float, ...]
    visibility: float
    offdiag: float
    fidelity: float
    schmidt_number: int
    n_sigma: float
    combine: str
    visibilities: dict = field(default_factory=dict)
    qkd: dict = field(default_factory=dict)
    assumption: str = NON_ADVERSARIAL_NOTE

    @property
    def consistent(self) -> bool:
        return self.fidelity <= 1.0


def combine_visibilities(results: Sequence[VisibilityResult], combine: str = "min",
                         n_sigma: float = 0.0) -> float:
    """Single visibility entering the chain.

    ``n_sigma`` lowers each value by that many standard errors first;
    ``combine`` is ``"min"`` (conservative) or ``"mean"``.  The result is
    clipped to [0, 1].
    """
    vals = [r.value - n_sigma * r.sigma for r in results]
    if not vals:
        raise InsufficientCounts("no visibilities to combine")
    if combine == "min":
        v = min(vals)
    elif combine == "mean":
        v = float(np.mean(vals))
    else:
        raise ValueError(f"unknown combine rule {combine!r}")
    return float(min(max(v, 0.0), 1.0))


def certification_chain(path_visibilities: Sequence[VisibilityResult], diagonals: Sequence[float],
                        pair: tuple[int, int] = (2, 3), combine: str = "min",
                        n_sigma: float = 0.0) -> FidelityReport:
    """Visibility -> off-diagonal element -> fidelity -> Schmidt number.

    ``pair`` indexes the two interfered core pairs within ``diagonals``.
    """
    V = combine_visibilities(path_visibilities, combine, n_sigma)
    p = tuple(float(v) for v in diagonals)
    r = offdiag_from_visibility(V, p[pair[0]], p[pair[1]])
    F = path_fidelity(p, r)
    k = certify_schmidt_number(min(F, 1.0), len(p))
    return FidelityReport(p, V, r, F, k, n_sigma, combine)
