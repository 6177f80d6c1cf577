import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abclab.algebra import rho_matrix
from abclab.errors import (DivergenceDetected, IterationCap, NotCommuting, NotConstant,
                           SmallDivisorBreakdown)
from abclab.kam import (KamConfig, c1_size, cohomological_solve, commutation_defect, initial_state,
                        kam_run, kam_step, linearize_anosov, remainder_of)
from abclab.perturb import conjugated_action, trig_perturbation
from abclab.torus import FourierMap, inverse_points, torus_distance

CAT = np.array([[2, 1], [1, 1]])
GOLD = (math.sqrt(5) - 1) / 2
MODES = [(1, 0), (0, 1), (1, 1)]
SDC_RHO = rho_matrix([math.sqrt(2) - 1, math.sqrt(3) - 1], CAT)


@pytest.fixture(scope="module")
def benchmark():
    g = trig_perturbation(MODES, 1e-3, seed=0)
    act = conjugated_action(g, CAT, SDC_RHO)
    return act, kam_run(act.translations, SDC_RHO)


def two_generator_rho():
    return np.array([[GOLD, 0.0], [0.0, math.sqrt(2) - 1]])


# -- cohomological equation ---------------------------------------------------------

def test_zero_remainders_give_zero():
    zero = FourierMap(np.zeros((2, 2), int))
    sol = cohomological_solve([zero, zero], SDC_RHO, 6)
    assert not np.any(sol.H.coeffs) and sol.cross_residual == 0.0


def test_single_mode_divisor():
    delta = 1e-3
    R = FourierMap.from_modes({(1, 0): [delta, 0]}, linear=np.zeros((2, 2), int))
    zero = FourierMap(np.zeros((2, 2), int))
    sol = cohomological_solve([R, zero], two_generator_rho(), 2)
    div = 2 * abs(math.sin(math.pi * GOLD))
    assert abs(div - 1.864) < 1e-3
    assert abs(np.abs(sol.H.mode((1, 0))[0]) - delta / div) < 1e-15
    assert sol.choice.reshape(5, 5)[3, 2] == 0


def test_solution_satisfies_equation_pointwise():
    rng = np.random.default_rng(0)
    R = trig_perturbation([(1, 0), (2, -1), (0, 3)], 1e-3, seed=1).periodic_part()
    rho = np.array([[GOLD, 0.3], [math.sqrt(2) - 1, math.sqrt(7) - 2]])
    sol = cohomological_solve([R, R], rho, 4)
    assert sol.equation_residual < 1e-13
    X = rng.random((200, 2))
    H = sol.H
    choice = sol.choice.reshape(9, 9)
    for n in [(1, 0), (2, -1), (0, 3)]:
        k = int(choice[n[0] + 4, n[1] + 4])
        c = H.mode(n) * (np.exp(2j * np.pi * np.dot(rho[:, k], n)) - 1) + R.mode(n)
        assert np.max(np.abs(c)) < 1e-13
    assert np.all(np.isfinite(H(X)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_equation_holds_at_chosen_generator(seed, J):
    rng = np.random.default_rng(seed)
    D = 2 * J + 1
    Rs = [FourierMap(np.zeros((2, 2), int), None,
                     1e-3 * (rng.normal(size=(2, D, D)) + 1j * rng.normal(size=(2, D, D))))
          for _ in range(2)]
    sol = cohomological_solve(Rs, SDC_RHO, J)
    assert sol.equation_residual < 1e-13
    assert sol.H.degree <= J and not np.any(sol.H.constant)


def test_affine_inputs_have_no_cross_residual():
    zero = FourierMap(np.zeros((2, 2), int))
    sol = cohomological_solve([zero, zero], SDC_RHO, 10)
    assert sol.cross_residual < 1e-12


def test_resonant_rotation_breaks_down():
    R = FourierMap.from_modes({(2, 0): [1e-3, 0]}, linear=np.zeros((2, 2), int))
    rho = np.array([[0.5, 0.0], [0.0, 0.5]])
    with pytest.raises(SmallDivisorBreakdown):
        cohomological_solve([R, R], rho, 4)


# -- single steps -----------------------------------------------------------------------

def test_affine_input_is_fixed_point():
    maps = [FourierMap.translation(SDC_RHO[:, k]) for k in range(2)]
    state = initial_state(maps, SDC_RHO)
    nxt = kam_step(state)
    assert state.eps == 0.0 and nxt.eps < 1e-15


def test_step_contracts_and_preserves_rho():
    g = trig_perturbation(MODES, 1e-3, seed=0)
    act = conjugated_action(g, CAT, SDC_RHO, anosov=False)
    state = initial_state(act.translations, SDC_RHO)
    rho0 = state.rho
    pts = np.random.default_rng(2).random((256, 2))
    before = commutation_defect(act.translations, pts)
    nxt = kam_step(state)
    assert nxt.eps < state.eps
    assert nxt.rho is rho0 and np.array_equal(nxt.rho, SDC_RHO.T)
    after = commutation_defect(nxt.maps, pts)
    assert after <= 10 * max(before, 1e-13)


def test_step_outside_basin():
    g = trig_perturbation(MODES, 0.02, seed=0)
    act = conjugated_action(g, CAT, SDC_RHO, anosov=False)
    state = initial_state(act.translations, SDC_RHO)
    assert state.eps > KamConfig().basin
    with pytest.raises(DivergenceDetected):
        kam_step(state)


def test_c1_size_single_mode():
    R = FourierMap.from_modes({(1, 0): [1e-3, 0]}, linear=np.zeros((2, 2), int))
    assert abs(c1_size(R) - 2e-3 * (1 + 2 * math.pi)) < 1e-15


def test_remainder_of_translation_is_zero():
    assert c1_size(remainder_of(FourierMap.translation([0.2, 0.3]), np.array([0.2, 0.3]))) == 0.0


# -- full runs ----------------------------------------------------------------------------

def test_affine_run_returns_identity():
    maps = [FourierMap.translation(SDC_RHO[:, k]) for k in range(2)]
    res = kam_run(maps, SDC_RHO)
    assert res.conjugacy.is_affine and not np.any(res.conjugacy.constant)
    assert res.report.termination == "converged" and res.report.residual < 1e-14


def test_benchmark_converges(benchmark):
    _, res = benchmark
    eps = [r[2] for r in res.report.rows]
    assert eps[-1] < 1e-10 and len(eps) - 1 <= 12
    assert res.report.residual < 1e-8


def test_benchmark_superlinear(benchmark):
    _, res = benchmark
    eps = [r[2] for r in res.report.rows]
    for a, b in zip(eps, eps[1:]):
        if a < 1e-4 and b > 0:
            assert math.log(b) / math.log(a) >= 1.3
    tail = [(a, b) for a, b in zip(eps[1:], eps[2:]) if b > 1e-15]
    C = max(b / a ** 1.3 for a, b in tail) if tail else 0.0
    assert math.isfinite(C)


def test_recovered_conjugacy_matches_g(benchmark):
    act, res = benchmark
    X = np.random.default_rng(3).random((512, 2))
    # h g^{-1} must be a translation
    d = res.conjugacy(inverse_points(act.g, X)) - X
    d = d - np.rint(d - d[0])
    assert np.max(np.ptp(d, axis=0)) < 1e-8


def test_cutoff_schedule(benchmark):
    _, res = benchmark
    J = [r[1] for r in res.report.rows]
    assert J[0] == 8 and J[1] == 23
    assert all(b == min(math.ceil(a ** 1.5), 127) for a, b in zip(J, J[1:]))


def test_report_csv(benchmark):
    _, res = benchmark
    lines = res.report.to_csv().splitlines()
    assert lines[0] == "n,J,eps,residual" and len(lines) == len(res.report.rows) + 1


def test_rational_rotation_raises():
    rho = rho_matrix([0.5, 0.0], CAT)
    g = trig_perturbation(MODES, 1e-3, seed=0)
    act = conjugated_action(g, CAT, rho, anosov=False)
    with pytest.raises((SmallDivisorBreakdown, DivergenceDetected)):
        kam_run(act.translations, rho)


def test_non_commuting_rejected():
    T1 = FourierMap.from_modes({(0, 1): [1e-3, 0]}, constant=SDC_RHO[:, 0])
    T2 = FourierMap.translation(SDC_RHO[:, 1])
    with pytest.raises(NotCommuting):
        kam_run([T1, T2], SDC_RHO)


def test_iteration_cap_carries_report():
    g = trig_perturbation(MODES, 1e-3, seed=0)
    act = conjugated_action(g, CAT, SDC_RHO, anosov=False)
    with pytest.raises(IterationCap) as info:
        kam_run(act.translations, SDC_RHO, KamConfig(max_iter=1))
    assert len(info.value.report.rows) == 2


# -- Anosov generator ----------------------------------------------------------------------

def test_linearize_affine_offset():
    A = FourierMap.linear_map(CAT, [0.3, 0.1])
    out = linearize_anosov(A, FourierMap.identity(2), CAT)
    assert np.allclose(out.F0, [0.3, 0.1], atol=1e-14)
    assert np.allclose(out.translation, [-0.1, -0.2], atol=1e-12)
    assert out.residual < 1e-12


def test_linearize_exact_linear():
    out = linearize_anosov(FourierMap.linear_map(CAT), FourierMap.identity(2), CAT)
    assert np.max(np.abs(out.F0)) < 1e-14 and np.max(np.abs(out.translation)) < 1e-14


def test_linearize_after_kam(benchmark):
    act, res = benchmark
    out = linearize_anosov(act.anosov, res.conjugacy, CAT)
    assert out.variation < 1e-6 and out.residual < 1e-8
    X = np.random.default_rng(4).random((256, 2))
    h = out.conjugacy
    assert np.max(torus_distance(h(act.anosov(X)), h(X) @ CAT.T)) < 1e-8
    for k, T in enumerate(act.translations):
        assert np.max(torus_distance(h(T(X)), h(X) + SDC_RHO[:, k])) < 1e-8


def test_linearize_not_constant():
    A = FourierMap.from_modes({(2, 0): [0.005j, 0.005j]}, linear=CAT)
    with pytest.raises(NotConstant):
        linearize_anosov(A, FourierMap.identity(2), CAT)
