import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optimembrane.fmd import ridge_membership, solve_fmd
from optimembrane.geometry import (DirichletSet, DiscreteLoad, Domain, LoadSpec, PairSet, build_grid,
                                   build_pairs, discretize_load)
from optimembrane.membrane import (MembraneError, MembraneSolution, TrussMeasure, a_priori_bounds,
                                   check_optimality, compliance_at_mass, energy_J, equipartition_terms,
                                   rasterize, rescale_stress, solve_om, support_pattern)
from optimembrane.oracle import inject, one_force

SQRT2 = math.sqrt(2.0)


def _one_pair(grid, a, b):
    return PairSet.from_indices(grid, np.array([grid.index_of(a)]), np.array([grid.index_of(b)]))


# ------------------------------------------------------------ energy and scaling

def test_energy_examples(grid8):
    p = _one_pair(grid8, (-0.5, 0.0), (0.5, 0.0))
    assert p.lengths[0] == 1.0
    assert energy_J(TrussMeasure.from_values([1.0], [SQRT2]), p) == pytest.approx(2.0, abs=1e-15)
    assert energy_J(TrussMeasure.from_values([0.7], [0.0]), p) == pytest.approx(0.7, abs=1e-15)
    assert energy_J(TrussMeasure.from_values([0.0], [1.0]), p) == math.inf


def test_energy_no_strings(grid8):
    p = build_pairs(grid8, ("radius", 0.2))
    assert energy_J(TrussMeasure.from_values(np.zeros(len(p)), np.zeros(len(p))), p) == 0.0


def test_truss_measure_alpha_support():
    tr = TrussMeasure.from_values([1.0, 1e-10, 0.0, 2.0], [2.0, 1e-3, 0.0, -1.0])
    assert tr.alpha[0] == 2.0 and tr.alpha[3] == -0.5
    assert np.isnan(tr.alpha[1]) and np.isnan(tr.alpha[2])
    assert tr.flagged.tolist() == [1]
    assert len(tr.pruned(1e-6)) == 2


def test_compliance_at_mass():
    assert compliance_at_mass(SQRT2 / 2, 1.0) == pytest.approx(0.0625, abs=1e-16)
    assert compliance_at_mass(0.0, 3.0) == 0.0
    for z in (0.3, 1.0, 2.5):
        assert compliance_at_mass(z, 2.0) == pytest.approx(compliance_at_mass(z, 1.0) / 2, rel=1e-15)
    with pytest.raises(ValueError):
        compliance_at_mass(1.0, 0.0)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0.01, 5), st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), st.floats(0.1, 2)), min_size=1, max_size=8))
def test_rescale_equalizes_and_minimizes(entries):
    Pi, pi, L = (np.array(c) for c in zip(*entries))
    Ps = rescale_stress(Pi, pi, L)
    A = float(np.sum(L * Ps))
    B = float(np.sum(L * pi**2 / (2 * Ps)))
    assert A == pytest.approx(B, rel=1e-10)
    for s in (0.5, 0.9, 1.1, 2.0):
        assert A + B <= np.sum(L * s * Ps) + np.sum(L * pi**2 / (2 * s * Ps)) + 1e-12


# ------------------------------------------------------------ solve_om

def test_center_value(center_solution, center_solution_cg):
    for sol in (center_solution, center_solution_cg):
        assert sol.Z0 == pytest.approx(SQRT2 / 2, abs=1e-4)
        assert abs(sol.Z0 - sol.dual_value) <= 1e-6 * (1 + sol.Z0)
        A, B = equipartition_terms(sol.truss, sol.active_pairs)
        assert abs(A - B) <= 10 * 1e-6 * sol.Z0


def test_center_feasible_everywhere(center_solution_cg):
    res = check_optimality(center_solution_cg, tol=1e-4)
    assert res["i_boundary"] == 0.0
    assert res["iii_two_point"] <= 1e-7
    assert res["ii_admissibility"] <= 1e-4


def test_colgen_bracket(grid8):
    g = build_grid(grid8.domain, 0.1, grid8.sigma0)
    for pts in ([(0.2, 0.1)], [(0.2, 0.2), (-0.2, -0.1)]):
        sol = solve_om(g, LoadSpec.points(pts), start_radius=0.15, batch=40)
        tol = 1e-6 * (1 + sol.Z0)
        ups = [r.upper for r in sol.rounds]
        lows = [r.lower for r in sol.rounds]
        assert len(sol.rounds) >= 2
        assert all(b <= a + tol for a, b in zip(ups, ups[1:]))
        assert all(b >= a - tol for a, b in zip(lows, lows[1:]))
        assert sol.Z0 - sol.dual_value <= tol
        full = solve_om(g, LoadSpec.points(pts), column_generation=False)
        assert sol.Z0 == pytest.approx(full.Z0, abs=2 * tol)


def test_colgen_round_limit(grid8):
    g = build_grid(grid8.domain, 0.1, grid8.sigma0)
    with pytest.raises(MembraneError, match="did not converge"):
        solve_om(g, LoadSpec.point((0.2, 0.1)), start_radius=0.15, batch=1, max_rounds=2)


def test_no_dirichlet_node(square):
    g = build_grid(square, 0.125, DirichletSet.from_points([(0.5, 0.01)]))
    with pytest.raises(MembraneError):
        solve_om(g, DiscreteLoad(np.zeros(g.n)))


def test_zero_load(grid8):
    sol = solve_om(grid8, DiscreteLoad(np.zeros(grid8.n)), pairs=("radius", 0.3))
    assert sol.Z0 == 0.0 and sol.dual_value == 0.0
    assert check_optimality(sol)["passed"]


@pytest.mark.parametrize("x0", [(0.2, 0.0), (0.25, -0.125), (-0.125, 0.375)])
def test_fmd_lower_bound(grid8, x0):
    load = discretize_load(grid8, LoadSpec.point(x0))
    sol = solve_om(grid8, load)
    Zf, _ = solve_fmd(grid8, None, load)
    assert sol.Z0 >= Zf - 1e-6 * (1 + sol.Z0)
    assert not ridge_membership(grid8.domain, grid8.sigma0, x0)
    assert sol.Z0 > Zf + 1e-3


def test_bounds_and_monotonicity(center_solution_cg):
    b = a_priori_bounds(center_solution_cg)
    assert b["w_over_R"] <= 1.0
    assert b["du_over_bound"] <= 1.0
    assert b["monotonicity_min"] >= -1e-10


def test_signed_load(grid8):
    sol = solve_om(grid8, LoadSpec(point_masses=(((0.125, 0.0), 1.0), ((-0.125, 0.0), -1.0))))
    res = check_optimality(sol, tol=1e-4)
    assert res["iii_two_point"] <= 1e-7 and res["ii_admissibility"] <= 1e-4
    assert sol.Z0 == pytest.approx(sol.dual_value, abs=1e-6 * (1 + sol.Z0))


def test_support_pattern_range(center_solution_cg):
    s = support_pattern(center_solution_cg)
    assert 0.0 <= s <= 1.0


# ------------------------------------------------------------ check_optimality

def test_check_oracle_and_breaking(grid8):
    sol = inject(one_force(grid8.domain, (0.0, 0.0), grid8.sigma0), grid8)
    res = check_optimality(sol, tol=1e-10)
    assert res["passed"], res
    bad = MembraneSolution(**{**sol.__dict__, "u": 1.1 * sol.u})
    r2 = check_optimality(bad, tol=1e-10)
    assert r2["iii_two_point"] > 0 and not r2["passed"]


def test_check_zero_truss(grid8):
    load = discretize_load(grid8, LoadSpec(point_masses=(((0.0, 0.0), 1.0), ((0.25, 0.125), 0.6))))
    p = build_pairs(grid8, ("radius", 0.2))
    tr = TrussMeasure.from_values(np.zeros(len(p)), np.zeros(len(p)))
    sol = MembraneSolution(grid8, load, p, tr, np.zeros(grid8.n), np.zeros((grid8.n, 2)), 0.0, 0.0, None)
    res = check_optimality(sol)
    assert res["ii_admissibility"] == pytest.approx(np.abs(load.weights).max(), abs=1e-15)


# ------------------------------------------------------------ rasterize

def _manual_solution(grid, pairs, Pi, pi):
    tr = TrussMeasure.from_values(Pi, pi)
    return MembraneSolution(grid, DiscreteLoad(np.zeros(grid.n)), pairs, tr,
                            np.zeros(grid.n), np.zeros((grid.n, 2)), 0.0, 0.0, None)


def test_rasterize_horizontal(grid8):
    p = _one_pair(grid8, (-0.375, 0.125), (0.25, 0.125))
    r = rasterize(_manual_solution(grid8, p, [0.8], [0.3]))
    s = r["sigma"]
    assert np.all(s[:, 0, 1] == 0) and np.all(s[:, 1, 0] == 0) and np.all(s[:, 1, 1] == 0)
    assert np.trace(s, axis1=1, axis2=2).sum() == pytest.approx(0.8 * 0.625, abs=1e-14)
    assert r["lam"][:, 0].sum() == pytest.approx(0.3 * 0.625, abs=1e-14)


def test_rasterize_mass_conservation(grid8, rng):
    p = build_pairs(grid8, "full")
    pick = rng.choice(len(p), size=60, replace=False)
    sub = p.subset(np.sort(pick))
    Pi = rng.uniform(0.1, 2.0, size=len(sub))
    pi = rng.normal(size=len(sub))
    r = rasterize(_manual_solution(grid8, sub, Pi, pi))
    tr = np.trace(r["sigma"], axis1=1, axis2=2)
    assert tr.sum() == pytest.approx(float(np.sum(sub.lengths * Pi)), abs=1e-10)
    assert np.all(np.linalg.eigvalsh(r["sigma"]) >= -1e-12)
    lam_total = np.sum(pi[:, None] * sub.lengths[:, None] * sub.directions, axis=0)
    assert np.allclose(r["lam"].sum(axis=0), lam_total, atol=1e-10)


def test_rasterize_empty(grid8):
    p = build_pairs(grid8, ("radius", 0.2)).subset(np.zeros(0, dtype=int))
    r = rasterize(_manual_solution(grid8, p, np.zeros(0), np.zeros(0)))
    assert r["sigma"].shape == (0, 2, 2) and r["lam"].shape == (0, 2)
