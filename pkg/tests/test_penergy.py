import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from greenlab.errors import DisconnectedDomain, InvalidProblem, NonConvergence
from greenlab.mmspace import build_grid, path_graph
from greenlab.penergy import (EnergyConfig, edge_gradients, graph_laplacian_solve,
                              harmonic_residual, minimize, p_energy, vertex_flux, write_trace)

from conftest import center_of


def square(h=1 / 8):
    return build_grid(2, 1.0, h)


def box_boundary(space, values_fn):
    outer = np.max(np.abs(space.coords), axis=1) >= 1.0 - 1e-9
    idx = np.flatnonzero(outer)
    return ~outer, (idx, values_fn(space.coords[idx]))


def test_config_validation():
    with pytest.raises(ValueError):
        EnergyConfig(p=1.0)
    with pytest.raises(ValueError):
        EnergyConfig(tol_rel=0)
    assert EnergyConfig().with_p(3).p == 3


def test_energy_of_constant_is_zero(grid2):
    assert p_energy(grid2, np.full(grid2.num_vertices, 3.0), 2.5) == 0.0


def test_energy_of_linear_function():
    s = build_grid(2, 1.0, 1 / 64)
    u = s.coords[:, 0].copy()
    assert p_energy(s, u, EnergyConfig(p=2)) == pytest.approx(s.total_measure, rel=0.02)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.floats(1.1, 5))
def test_energy_homogeneity(grid2, c, p):
    rng = np.random.default_rng(0)
    u = rng.standard_normal(grid2.num_vertices)
    e1 = p_energy(grid2, u, p)
    assert p_energy(grid2, c * u, p) == pytest.approx(abs(c) ** p * e1, rel=1e-12)


def test_energy_definition_matches_gradients(grid3):
    rng = np.random.default_rng(1)
    u = rng.random(grid3.num_vertices)
    g = grid3.graph
    direct = np.sum(g.volumes * edge_gradients(grid3, u) ** 3)
    assert p_energy(grid3, u, 3.0) == pytest.approx(direct, rel=1e-12)


def test_zero_boundary_gives_zero():
    s = square()
    dom, bnd = box_boundary(s, lambda x: np.zeros(len(x)))
    f = minimize(s, dom, bnd, cfg=EnergyConfig(p=3))
    assert np.all(f.values == 0) and f.energy == 0


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.5])
def test_path_minimizer_is_affine(p):
    s = path_graph(20)
    t = s.coords[:, 0]
    dom = np.ones(s.num_vertices, dtype=bool)
    f = minimize(s, dom, {0: 0.0, 20: 1.0}, cfg=EnergyConfig(p=p))
    assert np.allclose(f.values, t, atol=1e-7)


@pytest.mark.parametrize("p", [1.3, 2.0, 3.7])
def test_linear_function_is_discretely_harmonic_on_path(p):
    s = path_graph(12)
    u = 2.0 * s.coords[:, 0] - 0.5
    inner = np.arange(1, 12)
    assert harmonic_residual(s, u, inner, EnergyConfig(p=p)) == pytest.approx(0, abs=1e-14)


def test_random_field_is_not_harmonic(grid2):
    u = np.random.default_rng(3).random(grid2.num_vertices)
    assert harmonic_residual(grid2, u, np.ones(grid2.num_vertices, bool), 2.0) > 1e-3


def test_p2_matches_linear_solve(all_spaces):
    for name, s in all_spaces.items():
        c = center_of(s)
        d = s.distances_from(c)
        R = 0.4 * float(d.max())
        dom = d < R
        outside = np.flatnonzero(~dom)
        core = np.flatnonzero(d <= 0.25 * R)
        idx = np.concatenate([core, outside])
        vals = np.concatenate([np.ones(len(core)), np.zeros(len(outside))])
        f = minimize(s, dom, (idx, vals), cfg=EnergyConfig(p=2))
        ref = graph_laplacian_solve(s, dom, (idx, vals))
        assert np.max(np.abs(f.values - ref)) <= 1e-8 * np.max(np.abs(ref)), name


@settings(max_examples=12, deadline=None)
@given(st.floats(1.3, 4.0), st.integers(0, 2**16), st.floats(-3, 3), st.floats(0.1, 4))
def test_maximum_principle(p, seed, lo, width):
    s = square()
    rng = np.random.default_rng(seed)
    dom, (idx, _) = box_boundary(s, lambda x: np.zeros(len(x)))
    vals = lo + width * rng.random(len(idx))
    f = minimize(s, dom, (idx, vals), cfg=EnergyConfig(p=p))
    slack = 1e-12 * max(1.0, abs(lo) + width)
    assert f.values.min() >= vals.min() - slack
    assert f.values.max() <= vals.max() + slack


@pytest.mark.parametrize("p", [1.5, 2.5])
def test_unique_minimizer_from_random_start(p):
    s = square()
    dom, bnd = box_boundary(s, lambda x: x[:, 0] ** 2 + x[:, 1])
    cfg = EnergyConfig(p=p)
    a = minimize(s, dom, bnd, cfg=cfg)
    start = np.random.default_rng(5).random(s.num_vertices)
    b = minimize(s, dom, bnd, cfg=cfg, initial=start)
    scale = np.max(np.abs(a.values))
    assert np.max(np.abs(a.values - b.values)) <= 10 * cfg.tol_rel * scale


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_boundary_scaling(p):
    s = square()
    dom, (idx, vals) = box_boundary(s, lambda x: np.sin(3 * x[:, 0]) + x[:, 1])
    cfg = EnergyConfig(p=p)
    a = minimize(s, dom, (idx, vals), cfg=cfg)
    b = minimize(s, dom, (idx, 2.5 * vals), cfg=cfg)
    assert np.allclose(b.values, 2.5 * a.values, atol=1e-6 * np.max(np.abs(vals)))
    assert b.energy == pytest.approx(2.5**p * a.energy, rel=1e-6)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_energy_nonincreasing_within_each_stage(p, tmp_path):
    s = square(1 / 16)
    dom, bnd = box_boundary(s, lambda x: np.abs(x[:, 0]))
    path = tmp_path / "trace.csv"
    f = minimize(s, dom, bnd, cfg=EnergyConfig(p=p), trace_path=path)
    for (_, o1, _, e1), (_, o2, _, e2) in zip(f.trace, f.trace[1:]):
        if e1 == e2:
            assert o2 <= o1 + 1e-12 * abs(o1)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,energy,residual,epsilon"
    assert len(lines) == len(f.trace) + 1


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_solver_residual_contract(p):
    s = square(1 / 16)
    dom, bnd = box_boundary(s, lambda x: x[:, 0] * x[:, 1])
    cfg = EnergyConfig(p=p)
    f = minimize(s, dom, bnd, cfg=cfg)
    assert harmonic_residual(s, f, dom, cfg) <= cfg.tol_rel


def test_point_source_flux_balance():
    s = square(1 / 16)
    c = center_of(s)
    dom, bnd = box_boundary(s, lambda x: np.zeros(len(x)))
    for p in (1.5, 2.0, 3.0):
        f = minimize(s, dom, bnd, source=(c, 1.0), cfg=EnergyConfig(p=p))
        flux = vertex_flux(s, f.values, p)
        assert flux[c] == pytest.approx(1.0, rel=1e-6)
        others = dom.copy()
        others[c] = False
        assert np.max(np.abs(flux[others])) <= 1e-6


def test_nonconvergence_reports_residual():
    s = square(1 / 16)
    dom, bnd = box_boundary(s, lambda x: np.abs(x[:, 0]) ** 3)
    with pytest.raises(NonConvergence) as info:
        minimize(s, dom, bnd, cfg=EnergyConfig(p=1.2, max_iter=1))
    assert info.value.residual > 0
    assert info.value.iterations == 1


def test_problem_validation():
    s = square()
    c = center_of(s)
    dom, bnd = box_boundary(s, lambda x: np.zeros(len(x)))
    with pytest.raises(InvalidProblem):
        minimize(s, dom, (bnd[0][:3], 0.0))
    with pytest.raises(InvalidProblem):
        minimize(s, dom, (np.append(bnd[0], c), 0.0), source=(c, 1.0))
    # a domain made of two separated pieces
    x = s.coords[:, 0]
    split = dom & (np.abs(x) > 0.2)
    with pytest.raises(DisconnectedDomain):
        minimize(s, split, (np.flatnonzero(~split), 0.0))
