"""Relative p-capacities, ring sweeps and the two-sided ring estimates."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (DisconnectedDomain, EmptyLevelSet, InsufficientRows, InvalidProblem,
                     NonConvergence)
from .mmspace import EdgeGraph, estimate_pointwise_dimension
from .penergy import EnergyConfig, PotentialField, _as_mask, minimize

CONFORMAL_BAND = 0.1
# relative distance below which a vertex value counts as lying on a level
SNAP = 1e-12


@dataclass(frozen=True, eq=False)
class CapacityProblem:
    core: np.ndarray
    domain: np.ndarray
    p: float

    @classmethod
    def from_sets(cls, space, core, domain, p):
        n = space.graph.num_vertices
        return cls(_as_mask(core, n).copy(), _as_mask(domain, n).copy(), float(p))

    def validate(self):
        if not self.core.any() or not self.domain.any():
            raise InvalidProblem("core and domain must be nonempty")
        if np.any(self.core & ~self.domain):
            raise InvalidProblem("core must lie inside the domain")
        if self.domain.all():
            raise InvalidProblem("domain must leave a nonempty complement")
        if not self.p > 1:
            raise InvalidProblem("p must exceed 1")


@dataclass(frozen=True, eq=False)
class CapacityResult:
    value: float
    potential: PotentialField
    problem: CapacityProblem


@dataclass(frozen=True)
class RingRow:
    r: float
    cap: float
    ball_mass: float
    ok: bool = True
    error: str = ""


@dataclass(frozen=True)
class RingCapacityProfile:
    center: int
    outer_radius: float
    rows: tuple
    p: float
    pointwise_q: float
    global_q: float = float("nan")

    def valid_rows(self):
        return [row for row in self.rows if row.ok]


@dataclass(frozen=True)
class SandwichReport:
    regime: str
    ratios: tuple
    lower_const: float
    upper_const: float
    spread: float
    passed: bool


@dataclass(frozen=True)
class TrendVerdict:
    applicable: bool
    passed: bool
    regime: str
    detail: str = ""


def _cfg_for(cfg, p):
    cfg = cfg or EnergyConfig(p=p)
    return cfg if cfg.p == p else cfg.with_p(p)


def solve_capacity(space, problem: CapacityProblem, cfg=None, initial=None) -> CapacityResult:
    problem.validate()
    cfg = _cfg_for(cfg, problem.p)
    outside = ~problem.domain
    idx = np.concatenate([np.flatnonzero(problem.core), np.flatnonzero(outside)])
    vals = np.concatenate([np.ones(problem.core.sum()), np.zeros(outside.sum())])
    try:
        pot = minimize(space, problem.domain, (idx, vals), cfg=cfg, initial=initial)
    except DisconnectedDomain as exc:
        raise InvalidProblem(str(exc)) from exc
    return CapacityResult(pot.energy, pot, problem)


def ring_problem(space, x0: int, r: float, R: float, p: float) -> CapacityProblem:
    """K = closed ball B(x0, r), Omega = open ball B(x0, R)."""
    return CapacityProblem(space.closed_ball_mask(x0, r).copy(),
                           space.open_ball_mask(x0, R).copy(), float(p))


def ring_capacity(space, x0, r, R, p, cfg=None) -> float:
    return solve_capacity(space, ring_problem(space, x0, r, R, p), cfg).value


def _threads():
    try:
        return max(1, int(os.environ.get("GREENLAB_THREADS", "1")))
    except ValueError:
        return 1


def ring_capacity_sweep(space, x0: int, radii: Sequence[float], R: float, p: float,
                        cfg=None, pointwise_q=None, global_q=None,
                        min_cells: float = 4.0) -> RingCapacityProfile:
    """One capacity solve per radius, K = closed B(x0, r), Omega = B(x0, R)."""
    radii = sorted((float(r) for r in radii), reverse=True)
    if not radii:
        raise InsufficientRows("no radii")
    if radii[0] >= R:
        raise ValueError("all radii must be smaller than R")
    if radii[-1] < min_cells * space.h - 1e-12:
        raise ValueError(f"smallest radius must be at least {min_cells}h")
    if pointwise_q is None or global_q is None:
        dim = estimate_pointwise_dimension(space, x0)
        pointwise_q = dim.log_mass_slope if pointwise_q is None else pointwise_q
        global_q = dim.global_q if global_q is None else global_q
    cfg = _cfg_for(cfg, p)

    def row(r):
        mass = space.measure[space.open_ball_mask(x0, r)].sum()
        try:
            cap = ring_capacity(space, x0, r, R, p, cfg)
        except (NonConvergence, InvalidProblem) as exc:
            return RingRow(r, float("nan"), float(mass), False, str(exc))
        return RingRow(r, cap, float(mass))

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = tuple(pool.map(row, radii))
    return RingCapacityProfile(x0, float(R), rows, float(p), float(pointwise_q),
                               float(global_q))


def regime_of(p: float, q_point: float, band: float = CONFORMAL_BAND) -> str:
    if abs(p - q_point) <= band:
        return "p=Q"
    return "p<Q" if p < q_point else "p>Q"


def regime_model(regime: str, r: float, R: float, p: float, q_point: float,
                 ball_mass: float) -> float:
    """The r-dependence both ring estimates share in each regime."""
    if regime == "p<Q":
        return ball_mass / r**p
    if regime == "p=Q":
        return math.log(R / r) ** (1 - q_point)
    gamma = (p - q_point) / (p - 1)
    return abs((2 * R) ** gamma - r**gamma) ** (1 - p)


def check_capacity_sandwich(profile: RingCapacityProfile, threshold: float = 10.0,
                            band: float = CONFORMAL_BAND) -> SandwichReport:
    rows = profile.valid_rows()
    if len(rows) < 4:
        raise InsufficientRows(f"need 4 valid rows, have {len(rows)}")
    p, q = profile.p, profile.pointwise_q
    regime = regime_of(p, q, band)
    ratios = tuple(row.cap / regime_model(regime, row.r, profile.outer_radius, p, q,
                                          row.ball_mass) for row in rows)
    lo, hi = min(ratios), max(ratios)
    spread = hi / lo
    return SandwichReport(regime, ratios, lo, hi, spread, bool(spread <= threshold))


def singleton_capacity_trend(profile: RingCapacityProfile,
                             band: float = CONFORMAL_BAND) -> TrendVerdict:
    """Discrete surrogate of Cap({x0}, Omega) = 0 for p <= Q(x0)."""
    regime = regime_of(profile.p, profile.pointwise_q, band)
    if regime == "p>Q":
        return TrendVerdict(False, False, regime, "p exceeds the pointwise dimension")
    rows = sorted(profile.valid_rows(), key=lambda row: row.r, reverse=True)
    if len(rows) < 2:
        raise InsufficientRows("need at least two rows")
    caps = [row.cap for row in rows]
    monotone = all(b < a for a, b in zip(caps, caps[1:]))
    decayed = caps[-1] < 0.5 * caps[0]
    return TrendVerdict(True, monotone and decayed, regime,
                        f"cap ratio smallest/largest = {caps[-1] / caps[0]:.4g}")


# ---------------------------------------------------------------------------
# level sets


def refine_at_levels(graph: EdgeGraph, values: np.ndarray, levels: Sequence[float]):
    """Insert a vertex wherever an edge crosses one of ``levels`` strictly.

    The field is interpolated linearly along each edge, so the new vertices
    carry exactly the level value. Pieces keep the parent's cross-section:
    volume and length split in the same proportion.
    Returns ``(refined_graph, refined_values)``.
    """
    values = np.array(values, dtype=float)
    levels = sorted(set(float(t) for t in levels))
    # snap values within round-off of a level, which would otherwise
    # produce cut pieces of vanishing length and unbounded weight
    for t in levels:
        values[np.abs(values - t) <= SNAP * max(1.0, abs(t))] = t
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    ua, ub = values[a], values[b]
    lo, hi = np.minimum(ua, ub), np.maximum(ua, ub)
    crossing = np.zeros(len(a), dtype=bool)
    for t in levels:
        crossing |= (lo < t) & (t < hi)
    keep = ~crossing
    new_edges = [graph.edges[keep]]
    new_len = [graph.lengths[keep]]
    new_vol = [graph.volumes[keep]]
    new_vals = []
    next_id = graph.num_vertices
    for e in np.flatnonzero(crossing):
        va, vb = ua[e], ub[e]
        cuts = [t for t in levels if min(va, vb) < t < max(va, vb)]
        fracs = sorted(((t - va) / (vb - va), t) for t in cuts)
        chain = [int(a[e])]
        for _, t in fracs:
            chain.append(next_id)
            new_vals.append(t)
            next_id += 1
        chain.append(int(b[e]))
        pos = [0.0] + [f for f, _ in fracs] + [1.0]
        for k in range(len(chain) - 1):
            piece = pos[k + 1] - pos[k]
            new_edges.append(np.array([[chain[k], chain[k + 1]]], dtype=np.int64))
            new_len.append(np.array([graph.lengths[e] * piece]))
            new_vol.append(np.array([graph.volumes[e] * piece]))
    refined = EdgeGraph(next_id, np.concatenate(new_edges), np.concatenate(new_len),
                        np.concatenate(new_vol))
    return refined, np.concatenate([values, np.array(new_vals, dtype=float)])


def level_set_capacity(space, field_or_values, alpha: float, beta: float, p: float,
                       cfg=None, refine: bool = True) -> float:
    """Cap_p({u >= beta}, {u > alpha}) for a vertex field u.

    With ``refine`` the edges crossing a threshold are split at the crossing
    point, so the level sets are those of the piecewise-linear field on the
    metric graph; otherwise only vertices are thresholded.
    """
    if not 0 <= alpha < beta:
        raise ValueError("need 0 <= alpha < beta")
    values = getattr(field_or_values, "values", field_or_values)
    values = np.asarray(values, dtype=float)
    if not np.any(values >= beta):
        raise EmptyLevelSet(f"no vertex reaches level {beta}")
    graph = space.graph
    if refine:
        graph, values = refine_at_levels(graph, values, (alpha, beta))
    core = values >= beta
    domain = values > alpha
    problem = CapacityProblem(core, domain, float(p))
    return solve_capacity(graph, problem, _cfg_for(cfg, p)).value


@dataclass(frozen=True)
class ScalingRow:
    alpha: float
    beta: float
    measured: float
    predicted: float
    rel_error: float
    passed: bool


@dataclass(frozen=True)
class ScalingReport:
    rows: tuple
    passed: bool


def verify_potential_scaling(space, cap_result: CapacityResult, pairs, cfg=None,
                             tol: float = 0.05) -> ScalingReport:
    """Level-set law Cap({u>=b},{u>a}) = Cap(K,Omega) / (b-a)^(p-1)."""
    p = cap_result.problem.p
    rows = []
    for alpha, beta in pairs:
        if not 0 <= alpha < beta <= 1:
            raise ValueError("pairs must satisfy 0 <= alpha < beta <= 1")
        measured = level_set_capacity(space, cap_result.potential, alpha, beta, p, cfg)
        predicted = cap_result.value / (beta - alpha) ** (p - 1)
        err = abs(measured - predicted) / predicted
        rows.append(ScalingRow(alpha, beta, measured, predicted, err, err <= tol))
    return ScalingReport(tuple(rows), all(r.passed for r in rows))


LEVEL_GRID = tuple((a, b) for a in (0.0, 0.25, 0.5, 0.75) for b in (0.25, 0.5, 0.75, 1.0)
                   if a < b)
