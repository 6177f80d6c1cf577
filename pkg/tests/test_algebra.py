import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abclab.algebra import (AffineABCAction, GroupWord, IntMatrix, certify_rotation, check_commutation,
                            check_faithful, commutant_basis, compare_affine, dump_action, load_action,
                            relation_residual, rho_matrix, solve_sylvester_mod, verify_relations)
from abclab.errors import Derogatory, DimensionMismatch, NotCertified
from abclab.torus import FourierMap, conjugate, invert

CAT = np.array([[2, 1], [1, 1]])


def rho_family(a0, a1):
    return np.array([[a0 + 2 * a1, a1], [a1, a0 + a1]])


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_two_parameter_family_commutes(a0, a1):
    chk = check_commutation(CAT, CAT, rho_family(a0, a1))
    assert chk.passed and chk.max_residue < 1e-12
    assert not np.any(chk.integer_part)


def test_zero_rho_commutes():
    assert check_commutation(CAT, CAT, np.zeros((2, 2))).max_residue == 0.0


def test_random_rho_fails():
    chk = check_commutation(CAT, CAT, np.array([[0.1, 0.37], [0.21, 0.05]]))
    assert not chk.passed and chk.max_residue > 0.01


def test_integer_residue_recorded():
    rho = rho_family(0.1, 0.2) + np.array([[1.0, 0.0], [0.0, 0.0]])
    chk = check_commutation(CAT, CAT, rho)
    assert chk.passed and np.any(chk.integer_part)
    assert np.allclose(CAT @ rho - rho @ CAT, chk.integer_part + chk.residue)


def test_commutant_of_cat_map():
    b = commutant_basis(CAT)
    assert len(b) == 2 and np.array_equal(b[0], np.eye(2)) and np.array_equal(b[1], CAT)


def test_commutant_one_dimensional():
    b = commutant_basis([[1]])
    assert len(b) == 1 and b[0][0, 0] == 1


def test_commutant_jordan_block():
    J = np.array([[1, 1], [0, 1]])
    b = commutant_basis(J)
    assert len(b) == 2
    rng = np.random.default_rng(0)
    for _ in range(100):
        X = rng.normal() * b[0] + rng.normal() * b[1]
        assert np.max(np.abs(J @ X - X @ J)) < 1e-12


def test_commutant_derogatory():
    with pytest.raises(Derogatory):
        commutant_basis(np.eye(2, dtype=int))


def test_commutant_span_commutes_three_by_three():
    A = np.array([[0, 1, 0], [0, 0, 1], [1, -1, 2]])
    b = commutant_basis(A)
    rng = np.random.default_rng(1)
    for _ in range(100):
        X = sum(rng.normal() * m for m in b)
        assert np.max(np.abs(A @ X - X @ A)) < 1e-12 * max(1.0, np.max(np.abs(X)))


def test_sylvester_homogeneous_cat():
    sol = solve_sylvester_mod(CAT, CAT, np.zeros((2, 2)))
    assert sol.solvable and np.max(np.abs(sol.particular)) == 0.0
    assert len(sol.homogeneous_basis) == 2
    span = np.stack([m.ravel() for m in sol.homogeneous_basis], axis=1)
    for target in (np.eye(2), CAT.astype(float)):
        coef, res, *_ = np.linalg.lstsq(span, target.ravel(), rcond=None)
        assert np.allclose(span @ coef, target.ravel())
    for X in sol.homogeneous_basis:
        assert np.max(np.abs(CAT @ X - X @ CAT)) < 1e-10


def test_sylvester_disjoint_spectra():
    B = np.array([[1, 1], [1, 0]])  # eigenvalues (1 +- sqrt5)/2, disjoint from those of CAT
    sol = solve_sylvester_mod(CAT, B, np.zeros((2, 2)))
    assert sol.solvable and not sol.homogeneous_basis
    assert np.max(np.abs(sol.particular)) < 1e-14


def test_sylvester_particular_residual():
    B = np.array([[1, 1], [1, 0]])
    P = np.array([[1, 0], [2, -1]])
    sol = solve_sylvester_mod(CAT, B, P)
    assert sol.solvable
    assert np.max(np.abs(CAT @ sol.particular - sol.particular @ B - P)) < 1e-8
    # unique solution is rational: Kronecker system has integer entries and unit-size determinant
    L = np.kron(np.eye(2), CAT) - np.kron(B.T, np.eye(2))
    x = np.linalg.solve(L, P.ravel(order="F"))
    assert np.allclose(sol.particular.ravel(order="F"), x)


def test_sylvester_unsolvable():
    # commutators A X - X A are traceless, so a right-hand side of trace 1 is out of range
    sol = solve_sylvester_mod(CAT, CAT, np.array([[1, 0], [0, 0]]))
    assert not sol.solvable and sol.particular is None and sol.residual > 1e-8


def test_sylvester_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_sylvester_mod(CAT, np.eye(3), np.zeros((2, 2)))


def test_faithful_half_rotation():
    act = AffineABCAction.build(CAT, CAT, [0.5 * np.eye(2)])
    rep = check_faithful(act, 10)
    assert not rep.faithful and np.array_equal(rep.relation, [2, 0])


def test_faithful_zero():
    act = AffineABCAction.build(CAT, CAT, [np.zeros((2, 2))])
    rep = check_faithful(act, 10)
    assert not rep.faithful and np.array_equal(rep.relation, [1, 0])


def test_faithful_diophantine():
    act = AffineABCAction.build(CAT, CAT, [rho_family(np.sqrt(2) - 1, np.sqrt(3) - 1)])
    rep = check_faithful(act, 10_000)
    assert rep.faithful and rep.relation is None and rep.bound_searched >= 1000


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 9), st.integers(0, 8), st.integers(0, 8))
def test_faithful_finds_rational_relations(d, n0, n1):
    act = AffineABCAction.build(CAT, CAT, [rho_family(n0 / d, n1 / d)])
    rep = check_faithful(act, d)
    assert not rep.faithful
    v = rep.relation @ act.rotation_vectors()
    assert np.max(np.abs(v - np.rint(v))) < 1e-9


def test_verify_relations_certified():
    rng = np.random.default_rng(2)
    a0, a1 = rng.random(2)
    act = AffineABCAction.build(CAT, CAT, [rho_family(a0, a1)])
    assert verify_relations(act, 1000) < 1e-12


def test_verify_relations_corrupted():
    rho = rho_family(0.2, 0.3)
    rho[0, 0] += 0.1
    with pytest.raises(NotCertified):
        AffineABCAction.build(CAT, CAT, [rho])
    act = AffineABCAction(IntMatrix(CAT), IntMatrix(CAT), (certify_rotation(CAT, CAT, rho),))
    assert verify_relations(act, 1000) >= 0.05


def test_relations_hold_after_smooth_conjugation():
    rho = rho_family(np.sqrt(2) - 1, np.sqrt(3) - 1)
    g = FourierMap.from_modes({(1, 0): [0.002, 0.001j], (0, 1): [0.001, -0.002]})
    gi = invert(g)
    A = conjugate(gi, FourierMap.linear_map(CAT))
    Ts = [conjugate(gi, FourierMap.translation(rho[:, i])) for i in range(2)]
    X = np.random.default_rng(3).random((200, 2))
    assert relation_residual(A, [Ts], CAT, X) < 1e-9


def test_compare_affine():
    r = rho_family(0.3, 0.1)
    a = AffineABCAction.build(CAT, CAT, [r])
    assert compare_affine(a, a)
    assert compare_affine(a, AffineABCAction.build(CAT, CAT, [rho_family(1.3, 0.1)]))
    assert not compare_affine(a, AffineABCAction.build(CAT, CAT, [rho_family(0.6, 0.1)]))


def test_compare_affine_dimension_mismatch():
    a = AffineABCAction.build(CAT, CAT, [rho_family(0.3, 0.1)])
    A3 = np.array([[0, 1, 0], [0, 0, 1], [1, -1, 2]])
    b = AffineABCAction.build(A3, A3, [np.zeros((3, 3))])
    with pytest.raises(DimensionMismatch):
        compare_affine(a, b)


def test_rho_matrix_matches_family():
    assert np.allclose(rho_matrix([0.2, 0.7], CAT), rho_family(0.2, 0.7))


def test_action_file_round_trip(tmp_path):
    a = AffineABCAction.build(CAT, CAT, [rho_family(0.3, 0.1), rho_family(0.05, 0.4)])
    p = tmp_path / "action.json"
    dump_action(a, p)
    b = load_action(p)
    assert b.K == 2 and compare_affine(a, b)


def test_group_word_norms():
    w = GroupWord([2, -1], np.array([[0.3, 0.6], [0.1, 0.25]]))
    assert w.word_norm == 3
    assert np.allclose(w.value, [0.5, 0.95])
    assert np.isclose(w.torus_norm, np.hypot(0.5, 0.05))


def test_int_matrix_properties():
    M = IntMatrix(CAT)
    assert M.is_hyperbolic and M.finite_order is None
    R = IntMatrix(np.array([[0, -1], [1, 0]]))
    assert R.finite_order == 4 and not R.is_hyperbolic
