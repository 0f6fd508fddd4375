"""Brute-force amplitude enumeration, kept independent of the matrix code.

Each function walks every path combination of a pure state term by term
with plain complex arithmetic.  Mixed inputs are handled by eigen-
decomposition into pure components.
"""

from __future__ import annotations

import cmath
import math

import numpy as np


def _franson_amp(ratio, phase, port, arm):
    t = math.sqrt(ratio)
    r = math.sqrt(1 - ratio)
    if arm == "S":
        first = t                       # transmitted into the short arm
        second = t if port == 0 else 1j * r
    else:
        first = 1j * r                  # reflected into the long arm
        second = 1j * r if port == 0 else t
        first *= cmath.exp(1j * phase)
    return first * second


def _hwp(angle):
    c, s = math.cos(2 * angle), math.sin(2 * angle)
    return {("H", "H"): c, ("V", "H"): s, ("H", "V"): s, ("V", "V"): -c}


def franson_oracle(terms, phase_a, phase_b, core_a="1", core_b="1'", ratio=0.5,
                   ports=(0,), hwp_a=None, hwp_b=None, time_coherence=1.0):
    """Outcome probabilities behind a Franson pair for a pure state.

    ``terms`` maps ``((core, pol), (core, pol))`` to amplitudes.  Returns
    ``{(port_a, pol_a, port_b, pol_b, tag): probability}``; polarizations
    are after the optional half-wave plates.
    """
    amps = {}
    for ((ca, pa), (cb, pb)), amp in terms.items():
        if ca != core_a or cb != core_b:
            continue
        for xa in "SL":
            for xb in "SL":
                for qa in ports:
                    for qb in ports:
                        base = amp * _franson_amp(ratio, phase_a, qa, xa) * _franson_amp(ratio, phase_b, qb, xb)
                        outs_a = [(pa, 1.0)] if hwp_a is None else [(o, _hwp(hwp_a)[(o, pa)]) for o in "HV"]
                        outs_b = [(pb, 1.0)] if hwp_b is None else [(o, _hwp(hwp_b)[(o, pb)]) for o in "HV"]
                        for oa, ja in outs_a:
                            for ob, jb in outs_b:
                                key = (qa, oa, qb, ob)
                                amps.setdefault(key, {}).setdefault(xa + xb, 0)
                                amps[key][xa + xb] += base * ja * jb
    out = {}
    for key, by_arm in amps.items():
        ss, ll = by_arm.get("SS", 0), by_arm.get("LL", 0)
        central = abs(ss) ** 2 + abs(ll) ** 2 + 2 * time_coherence * (ss * ll.conjugate()).real
        for tag, p in (("central", central), ("early-side", abs(by_arm.get("SL", 0)) ** 2),
                       ("late-side", abs(by_arm.get("LS", 0)) ** 2)):
            k = key + (tag,)
            out[k] = out.get(k, 0.0) + p
    return out


def path_oracle(terms, theta, cores_a=("3", "4"), cores_b=("3'", "4'"), pair_offset=math.pi,
                basis_phase=0.0, ratio_a=0.5, ratio_b=0.5, prefilter=True):
    """Detector-pair probabilities of the path station for a pure state.

    Returns ``{(port_a, port_b): probability}`` with ports 0/1 on each BS.
    """
    def bs(ratio, which, port):
        t, r = math.sqrt(ratio), math.sqrt(1 - ratio)
        same = (which == 0) == (port == 0)
        return t if same else 1j * r

    amps = {}
    for ((ca, pa), (cb, pb)), amp in terms.items():
        if ca not in cores_a or cb not in cores_b:
            continue
        if prefilter and (pa != "H" or pb != "H"):
            continue
        ia, ib = cores_a.index(ca), cores_b.index(cb)
        ph = cmath.exp(1j * (theta + pair_offset)) if ia == 1 else 1
        ph *= cmath.exp(1j * basis_phase) if ib == 1 else 1
        for qa in (0, 1):
            for qb in (0, 1):
                key = (qa, qb, pa, pb)
                amps[key] = amps.get(key, 0) + amp * ph * bs(ratio_a, ia, qa) * bs(ratio_b, ib, qb)
    out = {}
    for (qa, qb, _, _), a in amps.items():
        out[(qa, qb)] = out.get((qa, qb), 0.0) + abs(a) ** 2
    return out


def pure_components(rho, tol=1e-14):
    """Eigen-decomposition of a density operator into weighted pure-term dicts."""
    evals, evecs = np.linalg.eigh(rho.matrix)
    comps = []
    for lam, vec in zip(evals, evecs.T):
        if lam <= tol:
            continue
        terms = {}
        for (a, b), c in zip(rho.basis, vec):
            if c != 0:
                terms[((a.core, a.pol), (b.core, b.pol))] = complex(c) * math.sqrt(lam)
        comps.append(terms)
    return comps


def scalar_time_coherence(rho) -> float | None:
    """``c`` with ``et_coherence == c * matrix``, or ``None`` when no such scalar exists."""
    if not rho.has_et_dephasing:
        return 1.0
    m, X = rho.matrix, rho.et_coherence
    i = np.unravel_index(np.argmax(np.abs(m)), m.shape)
    if m[i] == 0:
        return 1.0
    c = (X[i] / m[i]).real
    return float(c) if np.allclose(X, c * m, atol=1e-12) else None
