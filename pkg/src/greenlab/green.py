"""Singular p-harmonic functions with a point source, and the checks they must pass.

A Green's function here is the minimizer of E_p(u)/p - s*u(x0) among
functions vanishing outside Omega. Its Euler-Lagrange system has a Dirac
right side of strength s at x0, so the flux pairing K against any cutoff
that equals 1 near x0 telescopes to s. Dividing by K^(1/(p-1)) normalizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .capacity import CapacityProblem, level_set_capacity, ring_capacity, solve_capacity
from .errors import (EmptyShell, InsufficientRows, InvalidCutoff, InvalidProblem,
                     SingularityOnBoundary)
from .penergy import EnergyConfig, _as_mask, harmonic_residual, minimize, pairing

CRITERION4_TOL = 0.08
GROWTH_SPREAD = 10.0


@dataclass(frozen=True, eq=False)
class GreenFunction:
    values: np.ndarray
    x0: int
    domain: np.ndarray
    p: float
    k_value: float
    normalized: bool = False
    source_strength: float = 1.0
    residual: float = 0.0

    @property
    def peak(self) -> float:
        return float(self.values[self.x0])

    def scaled(self, c: float) -> "GreenFunction":
        """c * G; the Dirac strength and K scale by c^(p-1)."""
        vals = self.values * c
        vals.setflags(write=False)
        f = c ** (self.p - 1)
        return replace(self, values=vals, k_value=self.k_value * f,
                       source_strength=self.source_strength * f, normalized=False)


def _interior_check(space, domain, x0):
    if not domain[x0]:
        raise SingularityOnBoundary("singularity lies outside the domain")
    adj = space.adjacency()
    nbrs = adj.indices[adj.indptr[x0]:adj.indptr[x0 + 1]]
    if not np.all(domain[nbrs]):
        raise SingularityOnBoundary("singularity touches the complement of the domain")


def solve_singular(space, domain, x0: int, p: float, cfg=None,
                   strength: float = 1.0) -> GreenFunction:
    """Unnormalized Green's function: unit Dirac source at x0, zero outside Omega."""
    cfg = cfg or EnergyConfig(p=p)
    cfg = cfg if cfg.p == p else cfg.with_p(p)
    n = space.num_vertices
    domain = _as_mask(domain, n).copy()
    x0 = int(x0)
    _interior_check(space, domain, x0)
    if domain.all():
        raise InvalidProblem("domain must leave a nonempty complement")
    outside = np.flatnonzero(~domain)
    pot = minimize(space, domain, (outside, 0.0), source=(x0, strength), cfg=cfg)
    values = pot.values
    # flux out of x0 = pairing against the indicator of {x0}
    indicator = np.zeros(n)
    indicator[x0] = 1.0
    k = pairing(space, values, indicator, p)
    domain.setflags(write=False)
    return GreenFunction(values, x0, domain, float(p), float(k), False, float(strength),
                         pot.residual)


def default_cutoff(space, G: GreenFunction, rho=None, cfg=None):
    """p-capacitary potential of the closed ball B(x0, rho) in Omega, rho = 4h."""
    rho = 4 * space.h if rho is None else rho
    core = space.closed_ball_mask(G.x0, rho) & G.domain
    problem = CapacityProblem(core.copy(), np.asarray(G.domain).copy(), G.p)
    return solve_capacity(space, problem, cfg).potential


def _validate_cutoff(space, G, phi):
    if phi.shape != G.values.shape:
        raise InvalidCutoff("cutoff has the wrong length")
    tol = 1e-9
    if np.any(phi < -tol) or np.any(phi > 1 + tol):
        raise InvalidCutoff("cutoff must take values in [0, 1]")
    adj = space.adjacency()
    nbrs = adj.indices[adj.indptr[G.x0]:adj.indptr[G.x0 + 1]]
    near = np.append(nbrs, G.x0)
    if np.any(np.abs(phi[near] - 1) > tol):
        raise InvalidCutoff("cutoff must equal 1 on a neighbourhood of the singularity")
    if np.any(np.abs(phi[~G.domain]) > tol):
        raise InvalidCutoff("cutoff must vanish outside the domain")


def compute_K(space, G: GreenFunction, cutoff=None, cfg=None) -> float:
    """sum_e w |dG|^(p-2) dG * dphi for an admissible cutoff phi."""
    if cutoff is None:
        cutoff = default_cutoff(space, G, cfg=cfg)
    phi = np.asarray(getattr(cutoff, "values", cutoff), dtype=float)
    _validate_cutoff(space, G, phi)
    return pairing(space, G.values, phi, G.p)


def normalize(G: GreenFunction, cfg=None) -> GreenFunction:
    """Scale by K^(-1/(p-1)) so that K becomes 1."""
    if G.normalized:
        return G
    if not G.k_value > 0:
        raise InvalidProblem("K must be positive to normalize")
    c = G.k_value ** (-1.0 / (G.p - 1))
    out = G.scaled(c)
    return replace(out, k_value=1.0, normalized=True)


# ---------------------------------------------------------------------------
# radial profiles


@dataclass(frozen=True)
class Shell:
    r: float
    m: float
    M: float
    ball_mass: float
    ring_cap: float = float("nan")


@dataclass(frozen=True)
class RadialProfile:
    center: int
    shells: tuple
    shell_half_width: float
    h: float
    outer_radius: float

    @property
    def radii(self):
        return np.array([s.r for s in self.shells])

    def to_csv(self) -> str:
        lines = ["r,m,M,ballMass,ringCap"]
        for s in sorted(self.shells, key=lambda s: s.r):
            lines.append(",".join(f"{v:.12g}" for v in (s.r, s.m, s.M, s.ball_mass, s.ring_cap)))
        return "\n".join(lines) + "\n"


def distance_to_complement(space, x0, domain) -> float:
    d = space.distances_from(x0)
    outside = ~np.asarray(domain)
    return float(d[outside].min()) if outside.any() else float("inf")


def radial_extrema(space, G: GreenFunction, radii: Sequence[float],
                   shell_half_width=None) -> RadialProfile:
    """m(r), M(r) = min/max of G over {v : |d(x0, v) - r| <= half width}."""
    hw = space.h if shell_half_width is None else float(shell_half_width)
    d = space.distances_from(G.x0)
    shells = []
    for r in sorted(float(r) for r in radii):
        sel = np.abs(d - r) <= hw + 1e-12 * max(r, 1.0)
        if not sel.any():
            raise EmptyShell(f"no vertex within {hw:g} of radius {r:g}")
        vals = G.values[sel]
        mass = float(space.measure[d < r].sum())
        shells.append(Shell(r, float(vals.min()), float(vals.max()), mass))
    return RadialProfile(G.x0, tuple(shells), hw, float(space.h),
                         distance_to_complement(space, G.x0, G.domain))


def attach_ring_capacities(space, profile: RadialProfile, p: float, cfg=None) -> RadialProfile:
    """Fill ringCap(r) = Cap(closed B(x0, r), B(x0, R)), R the outermost shell radius."""
    R = profile.shells[-1].r
    rows = []
    for s in profile.shells:
        cap = ring_capacity(space, profile.center, s.r, R, p, cfg) if s.r < R else float("nan")
        rows.append(replace(s, ring_cap=float(cap)))
    return replace(profile, shells=tuple(rows))


# ---------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class LevelRow:
    alpha: float
    beta: float
    product: float
    target: float
    rel_error: float
    passed: bool
    error: str = ""


@dataclass(frozen=True)
class CriteriaReport:
    positive: bool
    residual: float
    residual_ok: bool
    zero_outside: bool
    finite_energy: bool
    singularity: bool | None
    levels: tuple
    passed: bool


def singularity_trend(peaks: Sequence[float]) -> bool:
    """Peak values on successively refined meshes must strictly increase."""
    peaks = list(peaks)
    return len(peaks) >= 2 and all(b > a for a, b in zip(peaks, peaks[1:]))


def check_definition_criteria(space, G: GreenFunction, levels, cfg=None, refined_peaks=None,
                              tol: float = CRITERION4_TOL) -> CriteriaReport:
    """Positivity and harmonicity, vanishing outside Omega, blow-up, level-set law.

    ``refined_peaks`` are the values at x0 on the mesh sequence h, h/2, ...;
    without them the blow-up verdict is None. The level-set product
    Cap({G >= b}, {G > a}) (b - a)^(p-1) must equal 1 for a normalized G and
    kValue otherwise.
    """
    cfg = cfg or EnergyConfig(p=G.p)
    cfg = cfg if cfg.p == G.p else cfg.with_p(G.p)
    vals = G.values
    inner = G.domain.copy()
    inner[G.x0] = False
    positive = bool(np.all(vals[inner] > 0) and vals[G.x0] >= vals.max())
    res = harmonic_residual(space, vals, inner, cfg)
    residual_ok = bool(res <= 10 * cfg.tol_rel)
    zero_outside = bool(np.all(vals[~G.domain] == 0))
    finite = bool(np.all(np.isfinite(vals)))
    singular = None if refined_peaks is None else singularity_trend(refined_peaks)
    target = 1.0 if G.normalized else G.k_value
    rows = []
    for alpha, beta in levels:
        cap = level_set_capacity(space, vals, alpha, beta, G.p, cfg)
        product = cap * (beta - alpha) ** (G.p - 1)
        err = abs(product - target) / abs(target)
        rows.append(LevelRow(float(alpha), float(beta), product, target, err, bool(err <= tol)))
    passed = (positive and residual_ok and zero_outside and finite and singular is not False
              and all(r.passed for r in rows))
    return CriteriaReport(positive, res, residual_ok, zero_outside, finite, singular,
                          tuple(rows), passed)


@dataclass(frozen=True)
class GrowthRow:
    r: float
    upper: float
    lower: float
    skipped: bool
    reason: str = ""


@dataclass(frozen=True)
class GrowthReport:
    rows: tuple
    r0: float
    M_R: float
    upper_spread: float
    lower_spread: float
    passed: bool


def _spread(xs):
    xs = [x for x in xs if np.isfinite(x) and x > 0]
    if len(xs) < 2:
        return float("nan")
    return max(xs) / min(xs)


def check_growth_bounds(profile: RadialProfile, p: float, cfg=None,
                        threshold: float = GROWTH_SPREAD) -> GrowthReport:
    """Upper and lower blow-up bounds against ring capacities.

    u(r) = (m(r) - M(R)) ringCap(r)^(1/(p-1)) and
    l(r) = (M(r) - M(R)) ringCap(r)^(1/(p-1)) / (1 - r/r0)^p, with R the
    outermost shell and r0 the largest radius with m(r0) >= M(R). Both must
    stay within a bounded spread across rows. The lower quantity is only
    evaluated for r <= r0/2: towards r0 the prefactor (1 - r/r0)^-p blows
    up, which a lower bound tolerates but a spread cannot.
    """
    shells = sorted(profile.shells, key=lambda s: s.r)
    if len(shells) < 3:
        raise InsufficientRows("need at least three shells")
    M_R = shells[-1].M
    inner = shells[:-1]
    r0 = max((s.r for s in inner if s.m >= M_R), default=float("nan"))
    rows = []
    e = 1.0 / (p - 1)
    for s in inner:
        if not np.isfinite(s.ring_cap):
            rows.append(GrowthRow(s.r, float("nan"), float("nan"), True, "no ring capacity"))
            continue
        if s.m <= M_R:
            rows.append(GrowthRow(s.r, float("nan"), float("nan"), True, "m(r) <= M(R)"))
            continue
        upper = (s.m - M_R) * s.ring_cap**e
        lower = float("nan")
        if np.isfinite(r0) and s.r <= r0 / 2:
            lower = (s.M - M_R) * s.ring_cap**e / (1 - s.r / r0) ** p
        rows.append(GrowthRow(s.r, upper, lower, False))
    used = [r for r in rows if not r.skipped]
    if len(used) < 2:
        raise InsufficientRows("fewer than two usable rows")
    us = _spread([r.upper for r in used])
    ls = _spread([r.lower for r in used])
    # fewer than two rows below r0/2 leave the lower bound unassessed (nan)
    passed = bool(us <= threshold and (np.isnan(ls) or ls <= threshold))
    return GrowthReport(tuple(rows), r0, M_R, us, ls, passed)


# ---------------------------------------------------------------------------
# persistence


def green_to_dict(G: GreenFunction) -> dict:
    return {"x0": G.x0, "p": G.p, "k": G.k_value, "normalized": G.normalized,
            "sourceStrength": G.source_strength, "residual": G.residual,
            "domain": np.flatnonzero(G.domain).tolist(), "values": G.values.tolist()}


def green_from_dict(d: dict) -> GreenFunction:
    values = np.asarray(d["values"], dtype=float)
    domain = np.zeros(len(values), dtype=bool)
    domain[np.asarray(d["domain"], dtype=np.int64)] = True
    values.setflags(write=False)
    domain.setflags(write=False)
    return GreenFunction(values, int(d["x0"]), domain, float(d["p"]), float(d["k"]),
                         bool(d["normalized"]), float(d.get("sourceStrength", 1.0)),
                         float(d.get("residual", 0.0)))


def save_green(G: GreenFunction, path) -> None:
    with open(path, "w") as fh:
        json.dump(green_to_dict(G), fh)


def load_green(path) -> GreenFunction:
    with open(path) as fh:
        return green_from_dict(json.load(fh))
