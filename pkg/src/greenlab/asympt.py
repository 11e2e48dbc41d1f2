"""Local behavior of Green's functions near the singularity.

Fits shell values against the capacity model (r^p / mu(B(x0, r)))^(1/(p-1))
or, in the conformal case, against log(R0/r); scans L^q integrability of G
and of its edge gradient under mesh refinement; reports sphere Harnack ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .capacity import CONFORMAL_BAND, regime_of
from .errors import InsufficientShells
from .green import RadialProfile, solve_singular
from .mmspace import estimate_pointwise_dimension, half_octave_radii
from .penergy import EnergyConfig

SLOPE_TOL = 0.15
R2_POWER = 0.97
R2_CONFORMAL = 0.98


@dataclass(frozen=True)
class FitReport:
    model: str
    fitted_slope: float
    predicted_slope: float
    r_squared: float
    radii_range: tuple
    intercept: float
    num_shells: int
    passed: bool


def _linear_fit(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    sxy = float(((x - xm) * (y - ym)).sum())
    slope = sxy / sxx
    intercept = ym - slope * xm
    ss_res = float(((y - intercept - slope * x) ** 2).sum())
    ss_tot = float(((y - ym) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


def fit_window(profile: RadialProfile, R0=None):
    R0 = profile.outer_radius / 2 if R0 is None else float(R0)
    lo, hi = 4 * profile.h, R0 / 4
    return [s for s in profile.shells if lo - 1e-12 <= s.r <= hi + 1e-12], R0


def fit_local_behavior(profile: RadialProfile, G, dim, R0=None, slope_tol: float = SLOPE_TOL,
                       band: float = CONFORMAL_BAND) -> FitReport:
    """Regress shell values (m+M)/2 against the local model within [4h, R0/4].

    Away from the conformal band the fit is log-log against the model
    variable and must have slope 1; in the band it is linear against
    log(R0/r) and only the goodness of fit is gated. R0 defaults to half the
    distance from x0 to the complement of Omega, so the closed ball of
    radius 2*R0 still sits inside Omega up to one boundary layer.
    """
    shells, R0 = fit_window(profile, R0)
    if len(shells) < 5:
        raise InsufficientShells(f"need 5 shells in [4h, R0/4], have {len(shells)}")
    p = G.p
    r = np.array([s.r for s in shells])
    value = np.array([(s.m + s.M) / 2 for s in shells])
    mass = np.array([s.ball_mass for s in shells])
    regime = regime_of(p, dim.log_mass_slope, band)
    if regime == "p=Q":
        slope, icpt, r2 = _linear_fit(np.log(R0 / r), value)
        return FitReport("conformal-log", slope, slope, r2, (float(r.min()), float(r.max())), icpt,
                         len(shells), bool(slope > 0 and r2 >= R2_CONFORMAL))
    model = (r**p / mass) ** (1 / (p - 1))
    slope, icpt, r2 = _linear_fit(np.log(model), np.log(value))
    ok = abs(slope - 1) <= slope_tol and r2 >= R2_POWER
    return FitReport("power-law", slope, 1.0, r2, (float(r.min()), float(r.max())), icpt, len(shells),
                     bool(ok))


def harnack_sphere_ratio(profile: RadialProfile, limit: float = 3.0):
    """Largest M(r)/m(r) over the shells, and whether it stays below ``limit``."""
    ratios = []
    for s in profile.shells:
        if s.m <= 0:
            raise ZeroDivisionError(f"m({s.r:g}) is not positive")
        ratios.append(s.M / s.m)
    worst = max(ratios)
    return worst, bool(worst <= limit)


# ---------------------------------------------------------------------------
# integrability


@dataclass(frozen=True)
class IntegrabilityReport:
    q: float
    quantity: str
    mesh: tuple
    norms: tuple
    trend: str
    critical_q: float
    critical_q_pointwise: float


def critical_exponents(p: float, q_point: float, q_global: float) -> dict:
    """Integrability thresholds for G and its gradient.

    ``G``/``gradient`` mix the pointwise and global dimensions as the
    corollary states; the ``*_pointwise`` variants use q_point throughout.
    """
    return {
        "G": q_point * (p - 1) / (q_global - p),
        "gradient": q_point * (p - 1) / (q_global - 1),
        "G_pointwise": q_point * (p - 1) / (q_point - p),
        "gradient_pointwise": q_point * (p - 1) / (q_point - 1),
    }


def classify_trend(norms: Sequence[float], grow: float = 1.5, flat: float = 0.15) -> str:
    """diverging if the last/first ratio exceeds ``grow`` and the sequence increases;
    bounded if all values lie within ``flat`` of each other."""
    norms = list(norms)
    if norms[-1] / norms[0] > grow and all(b > a for a, b in zip(norms, norms[1:])):
        return "diverging"
    if max(norms) / min(norms) <= 1 + flat:
        return "bounded"
    return "indeterminate"


def classify_expected(report: IntegrabilityReport, band: float = 0.25):
    """Trend the dichotomy predicts, or None within ``band`` of the critical exponent."""
    crit = report.critical_q
    if report.q <= (1 - band) * crit:
        return "bounded"
    if report.q >= (1 + band) * crit:
        return "diverging"
    return None


def lq_integral(space, values, x0: int, r: float, q: float) -> float:
    """sum over B(x0, r) of mu_v |G_v|^q."""
    inside = space.open_ball_mask(x0, r)
    terms = space.measure[inside] * np.abs(values[inside]) ** q
    return math.fsum(terms.tolist())


def gradient_lq_integral(space, values, x0: int, r: float, q: float) -> float:
    """sum over edges inside B(x0, r) of V_e |du / l_e|^q."""
    g = space.graph
    inside = space.open_ball_mask(x0, r)
    a, b = g.edges[:, 0], g.edges[:, 1]
    keep = inside[a] & inside[b]
    du = np.abs(values[a[keep]] - values[b[keep]]) / g.lengths[keep]
    return math.fsum((g.volumes[keep] * du**q).tolist())


def integrability_scan(spaces, x0, p: float, q_list: Sequence[float], r: float, cfg=None,
                       domain_radius=None, q_point=None, q_global=None):
    """Track integral |G|^q and |grad G|^q over B(x0, r) along a refining mesh sequence.

    ``x0`` is a coordinate tuple, snapped to the nearest vertex of each
    space. Omega is the open ball of ``domain_radius`` (default 2r). The
    integrals themselves are compared rather than their q-th roots, since
    finiteness is the same question and the roots compress divergence.
    """
    spaces = sorted(spaces, key=lambda s: -s.h)
    cfg = cfg or EnergyConfig(p=p)
    domain_radius = 2 * r if domain_radius is None else domain_radius
    if q_point is None or q_global is None:
        fine = spaces[-1]
        radii = half_octave_radii(domain_radius, fine.h)
        dim = estimate_pointwise_dimension(fine, fine.nearest_vertex(x0), radii)
        q_point = dim.log_mass_slope if q_point is None else q_point
        q_global = dim.global_q if q_global is None else q_global
    crit = critical_exponents(p, q_point, q_global)
    g_int = {q: [] for q in q_list}
    d_int = {q: [] for q in q_list}
    for space in spaces:
        c = space.nearest_vertex(x0)
        G = solve_singular(space, space.open_ball_mask(c, domain_radius), c, p, cfg)
        for q in q_list:
            g_int[q].append(lq_integral(space, G.values, c, r, q))
            d_int[q].append(gradient_lq_integral(space, G.values, c, r, q))
    mesh = tuple(s.h for s in spaces)
    reports = []
    for q in q_list:
        reports.append(IntegrabilityReport(float(q), "G", mesh, tuple(g_int[q]),
                                           classify_trend(g_int[q]), crit["G"],
                                           crit["G_pointwise"]))
        reports.append(IntegrabilityReport(float(q), "gradient", mesh, tuple(d_int[q]),
                                           classify_trend(d_int[q]), crit["gradient"],
                                           crit["gradient_pointwise"]))
    return reports
