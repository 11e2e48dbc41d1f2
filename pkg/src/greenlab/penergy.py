"""Discrete p-Dirichlet energy and its constrained minimizer.

The energy of a vertex function u is

    E_p(u) = sum_e  V_e * |u_a - u_b|^p / l_e^p

with V_e the edge volume and l_e the edge length, a quadrature of
int |grad u|^p dmu. ``minimize`` finds the minimizer of E_p/p - s*u(x0)
subject to Dirichlet data, by damped Newton on the smoothed integrand
((du)^2 + eps^2)^(p/2), continuing eps towards zero when p < 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .errors import DisconnectedDomain, InvalidProblem, NonConvergence

# direct factorization below this many unknowns, AMG-preconditioned CG above
DIRECT_LIMIT = 60000
# iterations without a halving of the residual that count as a stall
STALL_WINDOW = 10


@dataclass(frozen=True)
class EnergyConfig:
    p: float = 2.0
    tol_rel: float = 1e-8
    max_iter: int = 400
    epsilon0: float = 1e-2
    eps_decay: float = 0.1
    eps_final: float = 1e-10

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"exponent p must exceed 1, got {self.p}")
        if not 0 < self.tol_rel < 1:
            raise ValueError("tol_rel must lie in (0, 1)")
        if not 0 < self.eps_decay < 1:
            raise ValueError("eps_decay must lie in (0, 1)")

    def with_p(self, p: float) -> "EnergyConfig":
        return EnergyConfig(p, self.tol_rel, self.max_iter, self.epsilon0,
                            self.eps_decay, self.eps_final)


@dataclass(frozen=True, eq=False)
class PotentialField:
    values: np.ndarray
    energy: float
    edge_gradients: np.ndarray
    fixed: np.ndarray
    p: float
    source: tuple | None = None
    residual: float = 0.0
    trace: list = field(default_factory=list, repr=False)


def _graph(space):
    return space.graph


def _cfg(cfg_or_p) -> EnergyConfig:
    if isinstance(cfg_or_p, EnergyConfig):
        return cfg_or_p
    return EnergyConfig(p=float(cfg_or_p))


def edge_differences(space, values) -> np.ndarray:
    g = _graph(space)
    values = np.asarray(values, dtype=float)
    return values[g.edges[:, 0]] - values[g.edges[:, 1]]


def edge_gradients(space, values) -> np.ndarray:
    """|u_a - u_b| / l_e per edge."""
    return np.abs(edge_differences(space, values)) / _graph(space).lengths


def p_energy(space, values, cfg) -> float:
    """Exact (compensated) sum of V_e |du/l_e|^p over all edges."""
    p = _cfg(cfg).p
    g = _graph(space)
    terms = g.volumes * edge_gradients(space, values) ** p
    return math.fsum(terms.tolist())


def edge_flux(space, values, p: float, eps: float = 0.0) -> np.ndarray:
    """w_e |du|^(p-2) du, the flux carried by each edge (a -> b).

    With ``eps > 0`` the smoothed flux w_e (du^2 + eps^2)^((p-2)/2) du.
    """
    g = _graph(space)
    du = edge_differences(space, values)
    if eps > 0:
        return g.weights(p) * du * (du * du + eps * eps) ** (p / 2 - 1)
    mag = np.abs(du)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = g.weights(p) * np.where(mag > 0, mag ** (p - 2) * du, 0.0)
    return q


def vertex_flux(space, values, p: float, eps: float = 0.0) -> np.ndarray:
    """Net outgoing flux at every vertex, the discrete p-Laplacian."""
    g = _graph(space)
    q = edge_flux(space, values, p, eps)
    a, b = g.edges[:, 0], g.edges[:, 1]
    n = g.num_vertices
    return np.bincount(a, q, n) - np.bincount(b, q, n)


def flux_scale(space, values, p: float, eps: float = 0.0) -> np.ndarray:
    """Sum of absolute edge fluxes at each vertex."""
    g = _graph(space)
    q = np.abs(edge_flux(space, values, p, eps))
    a, b = g.edges[:, 0], g.edges[:, 1]
    n = g.num_vertices
    return np.bincount(a, q, n) + np.bincount(b, q, n)


def pairing(space, values, test, p: float) -> float:
    """sum_e w_e |du|^(p-2) du * d(test), compensated."""
    q = edge_flux(space, values, p)
    dt = edge_differences(space, test)
    return math.fsum((q * dt).tolist())


def _relative_residual(flux, scale, where):
    if not np.any(where):
        return 0.0
    num = np.abs(flux[where])
    den = scale[where]
    floor = 1e-14 * max(float(np.max(scale)), 1e-300)
    return float(np.max(num / np.maximum(den, floor)))


def harmonic_residual(space, field_or_values, omega, cfg, source=None) -> float:
    """Largest relative Euler-Lagrange imbalance over the free vertices of omega.

    ``omega`` is a mask or index array of the vertices to test. When the
    field carries a point source, the source strength is subtracted at its
    vertex. Fluxes use the solver's final smoothing eps_final * max|u|; for
    p < 2 the unsmoothed flux |du|^(p-1) is not Lipschitz at du = 0 and its
    imbalance is dominated by round-off on edges with vanishing difference.
    """
    cfg = _cfg(cfg)
    p = cfg.p
    if isinstance(field_or_values, PotentialField):
        values = field_or_values.values
        source = field_or_values.source if source is None else source
        fixed = field_or_values.fixed
    else:
        values = np.asarray(field_or_values, dtype=float)
        fixed = np.zeros(0, dtype=np.int64)
    n = _graph(space).num_vertices
    where = _as_mask(omega, n).copy()
    where[fixed] = False
    eps = cfg.eps_final * max(float(np.max(np.abs(values))), 1e-300)
    flux = vertex_flux(space, values, p, eps)
    scale = flux_scale(space, values, p, eps)
    if source is not None:
        x0, s = source
        flux[x0] -= s
        scale[x0] += abs(s)
    return _relative_residual(flux, scale, where)


def _as_mask(sel, n) -> np.ndarray:
    sel = np.asarray(sel)
    if sel.dtype == bool:
        if sel.shape != (n,):
            raise ValueError("mask has the wrong length")
        return sel
    mask = np.zeros(n, dtype=bool)
    mask[sel.astype(np.int64)] = True
    return mask


def _pinned(boundary, n):
    if isinstance(boundary, Mapping):
        idx = np.fromiter(boundary.keys(), dtype=np.int64, count=len(boundary))
        vals = np.fromiter(boundary.values(), dtype=float, count=len(boundary))
    else:
        idx, vals = boundary
        idx = np.asarray(idx, dtype=np.int64)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), idx.shape)
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    full = np.zeros(n)
    full[idx] = vals
    return mask, full


def linear_solve(A, rhs, rtol=1e-13):
    """Solve an SPD sparse system; direct for small, AMG-CG for large."""
    if A.shape[0] <= DIRECT_LIMIT:
        return np.atleast_1d(spsolve(A.tocsc(), rhs))
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(A.tocsr(), symmetry="symmetric")
    return ml.solve(rhs, tol=rtol, accel="cg", maxiter=500)


class _Reduced:
    """The minimization problem restricted to the free vertices."""

    def __init__(self, graph, free, pinned_values, source, p):
        self.p = p
        n = graph.num_vertices
        self.free = np.flatnonzero(free)
        m = len(self.free)
        loc = np.full(n, -1, dtype=np.int64)
        loc[self.free] = np.arange(m)
        a, b = graph.edges[:, 0], graph.edges[:, 1]
        keep = free[a] | free[b]
        self.w = graph.weights(p)[keep]
        self.w2 = graph.weights(2.0)[keep]
        self.la = loc[a[keep]]
        self.lb = loc[b[keep]]
        self.ca = np.where(self.la < 0, pinned_values[a[keep]], 0.0)
        self.cb = np.where(self.lb < 0, pinned_values[b[keep]], 0.0)
        self.fa = self.la >= 0
        self.fb = self.lb >= 0
        both = self.fa & self.fb
        self.m = m
        rows = [self.la[self.fa], self.lb[self.fb], self.la[both], self.lb[both]]
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate([self.la[self.fa], self.lb[self.fb],
                                     self.lb[both], self.la[both]])
        self._both = both
        self.src_index = None
        self.s = 0.0
        if source is not None:
            self.src_index = int(loc[source[0]])
            self.s = float(source[1])

    def du(self, x):
        ua = np.where(self.fa, x[np.maximum(self.la, 0)], self.ca)
        ub = np.where(self.fb, x[np.maximum(self.lb, 0)], self.cb)
        return ua - ub

    def _assemble_grad(self, q):
        g = np.bincount(self.la[self.fa], q[self.fa], self.m)
        g -= np.bincount(self.lb[self.fb], q[self.fb], self.m)
        return g

    def _assemble_hess(self, hd):
        both = self._both
        data = np.concatenate([hd[self.fa], hd[self.fb], -hd[both], -hd[both]])
        return sp.coo_matrix((data, (self._rows, self._cols)), shape=(self.m, self.m)).tocsr()

    def objective(self, x, eps):
        t = self.du(x)
        p = self.p
        if p == 2.0:
            vals = 0.5 * t * t
        else:
            vals = ((t * t + eps * eps) ** (p / 2) - eps**p) / p
        obj = math.fsum((self.w * vals).tolist())
        if self.src_index is not None:
            obj -= self.s * x[self.src_index]
        return obj

    def derivatives(self, x, eps, hessian=True):
        t = self.du(x)
        p = self.p
        if p == 2.0:
            d1 = t
            d2 = np.ones_like(t)
            base = np.abs(t)
        else:
            s2 = t * t + eps * eps
            d1 = t * s2 ** (p / 2 - 1)
            d2 = s2 ** (p / 2 - 2) * ((p - 1) * t * t + eps * eps)
            base = np.abs(d1)
        q = self.w * d1
        grad = self._assemble_grad(q)
        scale = np.bincount(self.la[self.fa], (self.w * base)[self.fa], self.m)
        scale += np.bincount(self.lb[self.fb], (self.w * base)[self.fb], self.m)
        if self.src_index is not None:
            grad[self.src_index] -= self.s
            scale[self.src_index] += abs(self.s)
        H = self._assemble_hess(self.w * d2) if hessian else None
        return grad, scale, H

    def quadratic_start(self):
        """Minimizer of the p = 2 energy with the same data."""
        ones = np.ones_like(self.w2)
        H = self._assemble_hess(self.w2 * ones)
        t0 = self.du(np.zeros(self.m))
        rhs = -self._assemble_grad(self.w2 * t0)
        if self.src_index is not None:
            rhs[self.src_index] += self.s
        return linear_solve(H, rhs)


def _check_connectivity(graph, domain_mask, free):
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    n = graph.num_vertices
    inside = domain_mask[a] & domain_mask[b]
    adj = sp.coo_matrix((np.ones(inside.sum()), (a[inside], b[inside])), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    dom_labels = np.unique(labels[domain_mask])
    if len(dom_labels) > 1:
        raise DisconnectedDomain(f"domain splits into {len(dom_labels)} components")
    # every free component must touch pinned data, otherwise the energy is flat
    touch = free[a] ^ free[b]
    fa_lab = np.where(free[a], labels[a], -1)[touch]
    fb_lab = np.where(free[b], labels[b], -1)[touch]
    anchored = set(fa_lab[fa_lab >= 0].tolist()) | set(fb_lab[fb_lab >= 0].tolist())
    if not set(np.unique(labels[free]).tolist()) <= anchored:
        raise DisconnectedDomain("a free component has no pinned neighbour")


def minimize(space, domain, boundary, source=None, cfg=None, initial=None,
             trace_path=None) -> PotentialField:
    """Minimize E_p(u)/p - s*u(x0) over u agreeing with ``boundary``.

    ``domain`` is a mask or index array for Omega; ``boundary`` maps vertices
    to pinned values (a dict, or an ``(indices, values)`` pair) and must pin
    every vertex outside Omega. ``source`` is ``(x0, s)`` or None.
    """
    cfg = cfg or EnergyConfig()
    graph = _graph(space)
    n = graph.num_vertices
    domain_mask = _as_mask(domain, n)
    pinned, pinned_values = _pinned(boundary, n)
    if np.any(~domain_mask & ~pinned):
        raise InvalidProblem("boundary must pin every vertex outside the domain")
    free = domain_mask & ~pinned
    if source is not None:
        x0 = int(source[0])
        if not free[x0]:
            raise InvalidProblem("source vertex must be a free vertex of the domain")
    _check_connectivity(graph, domain_mask, free)

    p = cfg.p
    red = _Reduced(graph, free, pinned_values, source, p)
    values = pinned_values.copy()
    trace = []
    if red.m == 0 or (source is None and not np.any(pinned_values)):
        # nothing free, or zero data: the minimizer is the data extended by 0
        return _finish(space, values, pinned, source, p, 0.0, trace)

    if initial is not None:
        x = np.asarray(initial, dtype=float)[red.free].copy()
    else:
        x = red.quadratic_start()

    def scale_of(x):
        return max(float(np.max(np.abs(x))), float(np.max(np.abs(pinned_values))), 1e-300)

    u_scale = scale_of(x)
    eps_final = cfg.eps_final * u_scale
    if p < 2:
        eps = cfg.epsilon0 * u_scale
        stages = []
        while eps > eps_final:
            stages.append(eps)
            eps *= cfg.eps_decay
        stages.append(eps_final)
    else:
        stages = [eps_final]

    state = {"it": 0, "residual": np.inf}

    def run_stage(x, eps, stage_tol):
        obj = red.objective(x, eps)
        history = []
        while True:
            grad, scale, H = red.derivatives(x, eps)
            residual = _relative_residual(grad, scale, np.ones(red.m, dtype=bool))
            state["residual"] = residual
            trace.append((state["it"], obj, residual, eps))
            if residual <= stage_tol:
                return x
            history.append(residual)
            if (len(history) > STALL_WINDOW and residual <= math.sqrt(stage_tol)
                    and residual > 0.5 * history[-STALL_WINDOW - 1]):
                # Newton has reached the round-off floor of the residual
                return x
            if state["it"] >= cfg.max_iter:
                if trace_path is not None:
                    write_trace(trace, trace_path)
                raise NonConvergence(
                    f"no convergence after {state['it']} iterations (residual {residual:.3e})",
                    residual=residual, iterations=state["it"])
            state["it"] += 1
            # inexact Newton: linear accuracy tracks the nonlinear residual
            rtol = min(1e-4, max(1e-13, 1e-3 * residual))
            x, obj, moved = _newton_step(red, x, eps, obj, grad, H, rtol)
            if not moved:
                # no step survives round-off; accept what the arithmetic allows
                if residual <= math.sqrt(stage_tol):
                    return x
                raise NonConvergence(
                    f"line search stalled at residual {residual:.3e}",
                    residual=residual, iterations=state["it"])

    for eps in stages[:-1]:
        x = run_stage(x, eps, max(cfg.tol_rel, 1e-2))
    eps = stages[-1]
    x = run_stage(x, eps, cfg.tol_rel)
    # the final smoothing is tied to max|u| of the solution, as in
    # harmonic_residual; re-solve while that scale is still moving
    for _ in range(5):
        target = cfg.eps_final * scale_of(x)
        if abs(target - eps) <= 1e-6 * eps:
            break
        eps = target
        x = run_stage(x, eps, cfg.tol_rel)
    residual = state["residual"]
    values[red.free] = x
    if trace_path is not None:
        write_trace(trace, trace_path)
    return _finish(space, values, pinned, source, p, residual, trace)


def _newton_step(red, x, eps, obj, grad, H, rtol=1e-13):
    try:
        diag = H.diagonal()
        shift = 1e-14 * max(float(np.max(diag)), 1e-300)
        d = linear_solve(H + sp.identity(red.m) * shift, -grad, rtol)
    except Exception:
        d = None
    slope = float(grad @ d) if d is not None and np.all(np.isfinite(d)) else 0.0
    if d is None or not slope < 0:
        # preconditioned gradient descent fallback
        diag = np.maximum(H.diagonal(), 1e-300)
        d = -grad / diag
        slope = float(grad @ d)
    t = 1.0
    for _ in range(60):
        trial = x + t * d
        new_obj = red.objective(trial, eps)
        if new_obj <= obj + 1e-4 * t * slope:
            return trial, new_obj, True
        if t == 1.0 and abs(new_obj - obj) <= 1e-13 * max(abs(obj), 1e-300):
            # energy change below round-off: judge the full step by its gradient
            g_new, _, _ = red.derivatives(trial, eps, hessian=False)
            if np.linalg.norm(g_new) < np.linalg.norm(grad):
                return trial, new_obj, True
        t *= 0.5
    return x, obj, False


def _finish(space, values, pinned, source, p, residual, trace):
    values.setflags(write=False)
    energy = p_energy(space, values, p)
    grads = edge_gradients(space, values)
    grads.setflags(write=False)
    return PotentialField(values, energy, grads, np.flatnonzero(pinned), p,
                          None if source is None else (int(source[0]), float(source[1])),
                          float(residual), trace)


def write_trace(trace, path) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,energy,residual,epsilon\n")
        for it, obj, res, eps in trace:
            fh.write(f"{it},{obj:.12g},{res:.12g},{eps:.12g}\n")


def graph_laplacian_solve(space, domain, boundary, source=None):
    """Reference p = 2 solution by one sparse linear solve (oracle path)."""
    graph = _graph(space)
    n = graph.num_vertices
    domain_mask = _as_mask(domain, n)
    pinned, vals = _pinned(boundary, n)
    free = domain_mask & ~pinned
    idx = np.flatnonzero(free)
    w = graph.weights(2.0)
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    L = sp.coo_matrix((np.concatenate([-w, -w, w, w]),
                       (np.concatenate([a, b, a, b]), np.concatenate([b, a, a, b]))),
                      shape=(n, n)).tocsr()
    rhs = -(L[idx][:, np.flatnonzero(~free)] @ vals[~free])
    if source is not None:
        pos = np.searchsorted(idx, source[0])
        rhs[pos] += source[1]
    A = L[idx][:, idx]
    out = vals.copy()
    out[idx] = spsolve(A.tocsc(), rhs)
    return out
