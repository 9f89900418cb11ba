from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from aqsgd.distributions import MixtureModel, NormalParams, TruncatedNormal
from aqsgd.levels import LevelSet, exponential_levels, uniform_levels
from aqsgd.optimizer import (
    Objective,
    SolverConfig,
    alq_solve,
    alq_sweep,
    amq_derivative,
    amq_psi,
    amq_solve,
    amq_step,
    brute_force_levels,
    gd_solve,
    gd_step,
    psi,
    psi_gradient,
    single_level_update,
    two_level_convexity_condition,
)
from aqsgd.quantizer import coordinate_variance


def unsigned(mu, sigma):
    return MixtureModel.single(TruncatedNormal(NormalParams(mu, sigma), 0.0, 1.0))


def signed(mu, sigma):
    return MixtureModel.single(TruncatedNormal(NormalParams(mu, sigma), -1.0, 1.0))


NEAR_UNIFORM = Objective(unsigned(0.5, 10.0))


def psi_quad(levels, model):
    """Independent oracle: integrate the rounding variance against the density."""
    grid = levels.grid
    lo = -1.0 if levels.symmetric else 0.0
    pts = [g for g in grid if lo < g < 1.0]
    if levels.symmetric:
        pts.append(0.0)
    val, _ = integrate.quad(lambda r: coordinate_variance(r, levels) * model.pdf(r), lo, 1.0,
                            points=sorted(pts), limit=200, epsabs=1e-13, epsrel=1e-11)
    return val


def random_levels(rng, s, symmetric=False):
    while True:
        x = np.sort(rng.uniform(0.02, 0.98, s))
        if np.min(np.diff(np.concatenate([[0], x, [1]]))) > 0.01:
            return LevelSet(tuple(x), symmetric)


def test_psi_near_uniform():
    assert psi(uniform_levels(1), NEAR_UNIFORM) == pytest.approx(1 / 24, rel=1e-3)


def test_psi_matches_quadrature(rng):
    for _ in range(15):
        model = MixtureModel.from_params(rng.uniform(-0.2, 1.0, 3), rng.uniform(0.05, 0.5, 3), 0, 1, rng.uniform(0.1, 1, 3))
        lv = random_levels(rng, int(rng.integers(1, 6)))
        assert psi(lv, Objective(model)) == pytest.approx(psi_quad(lv, model), rel=1e-8, abs=1e-13)
        sm = MixtureModel.from_params(rng.uniform(-0.5, 0.5, 2), rng.uniform(0.05, 0.5, 2), -1, 1)
        slv = random_levels(rng, int(rng.integers(1, 5)), True)
        assert psi(slv, Objective(sm, symmetric=True)) == pytest.approx(psi_quad(slv, sm), rel=1e-8, abs=1e-13)


def test_psi_degenerate_and_monotone_in_levels(rng):
    # psi ~ 0.4 sigma for a spike of width sigma sitting on a level
    for sigma in (1e-6, 1e-9):
        spike = Objective(unsigned(0.5, sigma))
        assert psi(uniform_levels(1), spike) < sigma
    for _ in range(10):
        obj = Objective(unsigned(rng.uniform(0, 1), rng.uniform(0.05, 0.5)))
        lv = random_levels(rng, 3)
        extra = float(rng.uniform(0.01, 0.99))
        if min(abs(extra - x) for x in lv.interior) < 1e-3:
            continue
        more = LevelSet(tuple(sorted(lv.interior + (extra,))))
        assert psi(more, obj) <= psi(lv, obj) + 1e-15


def test_support_mismatch():
    with pytest.raises(ValueError):
        Objective(unsigned(0.5, 0.1), symmetric=True)
    with pytest.raises(ValueError):
        psi(uniform_levels(2, symmetric=True), NEAR_UNIFORM)


def test_single_level_update_cases():
    assert single_level_update(0.0, 1.0, NEAR_UNIFORM) == pytest.approx(0.5, abs=1e-6)
    sym_about = Objective(unsigned(0.6, 0.05))
    assert single_level_update(0.4, 0.8, sym_about) == pytest.approx(0.6, abs=1e-9)
    obj = Objective(unsigned(0.3, 0.1))
    b = single_level_update(0.0, 1.0, obj)
    grid = np.linspace(0.0005, 0.9995, 100_000)
    vals = [psi(LevelSet((g,)), obj) for g in grid[::50]]
    coarse = grid[::50][int(np.argmin(vals))]
    fine = np.linspace(coarse - 1e-3, coarse + 1e-3, 2001)
    best = fine[int(np.argmin([psi(LevelSet((g,)), obj) for g in fine]))]
    assert b == pytest.approx(best, abs=1e-4)


def test_sweep_fixed_point_and_descent(rng):
    lv = uniform_levels(1)
    out = alq_sweep(lv, NEAR_UNIFORM)
    assert abs(out.interior[0] - 0.5) < 1e-6
    obj = Objective(MixtureModel.from_params([0.1, 0.4], [0.1, 0.2], 0, 1, [2, 1]))
    cur = uniform_levels(5)
    prev = psi(cur, obj)
    for _ in range(5):
        cur = alq_sweep(cur, obj)
        now = psi(cur, obj)
        assert now <= prev + 1e-15
        prev = now


def test_alq_solve_brute_force_s2():
    res = alq_solve(2, NEAR_UNIFORM)
    bf = brute_force_levels(2, NEAR_UNIFORM, 1e-3)
    np.testing.assert_allclose(res.levels.interior, bf.interior, atol=1.5e-3)
    np.testing.assert_allclose(res.levels.interior, [1 / 3, 2 / 3], atol=1e-4)


def test_brute_force_properties(rng):
    bf = brute_force_levels(1, NEAR_UNIFORM, 1e-3)
    assert bf.interior[0] == pytest.approx(0.5, abs=1e-3)
    for _ in range(5):
        obj = Objective(unsigned(rng.uniform(0, 1), rng.uniform(0.05, 0.5)))
        for s in (1, 2, 3):
            assert psi(brute_force_levels(s, obj, 1e-2), obj) <= psi(uniform_levels(s), obj) + 1e-15
    with pytest.raises(ValueError):
        brute_force_levels(4, NEAR_UNIFORM)


def test_weighted_equals_unweighted_for_equal_components():
    c = TruncatedNormal(NormalParams(0.2, 0.15), 0.0, 1.0)
    m = MixtureModel([c, c, c], [1.0, 1.0, 1.0])
    a = alq_solve(3, Objective(m, weighted=True)).levels
    b = alq_solve(3, Objective(m, weighted=False)).levels
    np.testing.assert_allclose(a.interior, b.interior, atol=1e-12)


def test_weights_matter():
    m = MixtureModel.from_params([0.05, 0.6], [0.05, 0.1], 0, 1, [100.0, 1.0])
    w = alq_solve(3, Objective(m, weighted=True)).levels
    u = alq_solve(3, Objective(m, weighted=False)).levels
    assert w.interior[0] < u.interior[0]


def fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_gradient_matches_fd(seed, sym):
    rng = np.random.default_rng(seed)
    if sym:
        model = MixtureModel.from_params(rng.uniform(-0.3, 0.3, 2), rng.uniform(0.1, 0.5, 2), -1, 1)
    else:
        model = MixtureModel.from_params(rng.uniform(0, 0.6, 2), rng.uniform(0.1, 0.5, 2), 0, 1)
    obj = Objective(model, symmetric=sym)
    lv = random_levels(rng, int(rng.integers(1, 5)), sym)
    g = psi_gradient(lv, obj)
    for j in range(lv.s):
        def f(x, j=j):
            vals = list(lv.interior)
            vals[j] = x
            return psi(LevelSet(tuple(vals), sym), obj)
        num = fd(f, lv.interior[j])
        assert g[j] == pytest.approx(num, rel=1e-4, abs=1e-9)


def test_gd_step_cap_and_stationarity():
    obj = Objective(unsigned(0.5, 0.3))
    lv = LevelSet((0.3, 0.3 + 1e-6, 0.8))
    out = gd_step(lv, obj, rate=1e6)
    moved = np.abs(np.array(out.interior) - np.array(lv.interior))
    assert moved[1] == pytest.approx(0.5e-6, rel=1e-6)
    assert moved[0] == pytest.approx(0.5e-6, rel=1e-6)
    opt = alq_solve(3, obj, SolverConfig(max_sweeps=500, level_tol=1e-12)).levels
    still = gd_step(opt, obj, rate=0.1)
    np.testing.assert_allclose(still.interior, opt.interior, atol=1e-8)


def test_gd_solve_reaches_cd():
    obj = Objective(MixtureModel.from_params([0.1, 0.3], [0.1, 0.2], 0, 1))
    cd = alq_solve(3, obj)
    gd = gd_solve(3, obj, SolverConfig(gd_steps=3000, gd_rate=2.0))
    assert gd.psi == pytest.approx(cd.psi, rel=1e-3)
    assert all(b <= a + 1e-15 for a, b in zip(gd.psi_trace, gd.psi_trace[1:]))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_amq_derivative_fd(seed, sym):
    rng = np.random.default_rng(seed)
    if sym:
        model = MixtureModel.from_params(rng.uniform(-0.2, 0.2, 2), rng.uniform(0.05, 0.5, 2), -1, 1)
    else:
        model = MixtureModel.from_params(rng.uniform(0, 0.3, 2), rng.uniform(0.05, 0.5, 2), 0, 1)
    obj = Objective(model, symmetric=sym)
    s = int(rng.integers(1, 5))
    p = float(rng.uniform(0.2, 0.8))
    num = fd(lambda x: amq_psi(x, s, obj), p)
    assert amq_derivative(p, s, obj) == pytest.approx(num, rel=1e-4, abs=1e-9)


def test_amq_s1_grid_oracle():
    obj = Objective(signed(0.0, 10.0), symmetric=True)
    res = amq_solve(1, obj, SolverConfig(gd_steps=2000, gd_rate=1.0))
    grid = np.linspace(0.001, 0.999, 999)
    best = grid[int(np.argmin([amq_psi(p, 1, obj) for p in grid]))]
    assert res.p == pytest.approx(best, abs=1e-3)
    assert all(b <= a for a, b in zip(res.psi_trace, res.psi_trace[1:]))


def test_amq_clamp():
    # all mass near 1: the derivative pushes p upwards
    obj = Objective(signed(0.99, 0.01), symmetric=True)
    assert amq_derivative(0.9, 2, obj) < 0
    assert amq_step(0.9, 2, obj, rate=1e9) == pytest.approx(1 - 1e-6)


def test_convexity_diagnostic():
    assert isinstance(two_level_convexity_condition(0.3, 0.6, NEAR_UNIFORM), bool)
    assert two_level_convexity_condition(0.3, 0.6, NEAR_UNIFORM)
