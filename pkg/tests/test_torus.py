import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abclab.errors import DimensionMismatch, GridTooCoarse, NotInvertible
from abclab.torus import (FoliationField, FourierMap, GridFunction, TorusPoint, compose, conjugate,
                          evaluate, grid_points, invert, lift_track, mode_bound, norm_ck,
                          norm_ck_foliation, torus_distance)

CAT = np.array([[2, 1], [1, 1]])


def naive_series(modes, x):
    """Direct double-loop summation of sum_n c_n exp(2 pi i <n, x>) over +-n."""
    out = np.zeros(len(x))
    for n, c in modes.items():
        for sgn in (1, -1):
            phase = np.exp(2j * np.pi * sgn * np.dot(n, x))
            coef = c if sgn == 1 else np.conj(c)
            out = out + (coef * phase).real
    return out


def random_map(rng, J=3, amp=0.02, dim=2, linear=None):
    modes = {}
    for n in np.ndindex(*(2 * J + 1,) * dim):
        n = tuple(v - J for v in n)
        if n > (0,) * dim:
            modes[n] = amp * (rng.normal(size=dim) + 1j * rng.normal(size=dim)) / (1 + sum(map(abs, n))) ** 2
    return FourierMap.from_modes(modes, linear=linear, constant=rng.random(dim)), modes


def reality_defect(f):
    c = f.coeffs
    return float(np.max(np.abs(c - np.conj(np.flip(c, axis=tuple(range(1, c.ndim)))))))


# -- evaluation ---------------------------------------------------------------

def test_identity_evaluates_to_input():
    assert np.allclose(evaluate(FourierMap.identity(2), TorusPoint([0.3, 0.7])), [0.3, 0.7])


def test_translation_at_origin():
    rho = np.array([np.sqrt(2) - 1, np.sqrt(3) - 1])
    assert np.array_equal(FourierMap.translation(rho)(np.zeros(2)), rho)


def test_single_mode_matches_naive_sum():
    delta = 0.01
    c = np.array([0.2, -0.1])
    f = FourierMap.from_modes({(1, 0): [delta / 2, delta / 2]}, constant=c)
    assert np.allclose(f(np.zeros(2)), c + delta)
    rng = np.random.default_rng(1)
    g, modes = random_map(rng)
    for x in rng.random((20, 2)):
        ref = x @ np.eye(2).T + g.constant + naive_series(modes, x)
        assert np.allclose(g(x), ref, atol=1e-13)


def test_unlifted_values_are_reduced():
    f = FourierMap.translation([0.75, 0.5])
    assert np.allclose(evaluate(f, [0.5, 0.75]), [0.25, 0.25])


# -- composition ----------------------------------------------------------------

def test_compose_translations():
    h = compose(FourierMap.translation([0.1, 0.2]), FourierMap.translation([0.3, 0.05]))
    assert np.allclose(h.constant, [0.4, 0.25]) and h.is_affine


def test_compose_with_identity():
    f, _ = random_map(np.random.default_rng(2))
    h = compose(f, FourierMap.identity(2), grid=64)
    assert np.allclose(h.constant, f.constant, atol=1e-14)
    assert np.max(np.abs(h.resized(f.degree).coeffs - f.coeffs)) < 1e-14


def test_compose_linear_parts_multiply():
    A = FourierMap.linear_map(CAT)
    assert np.array_equal(compose(A, A).linear, [[5, 3], [3, 2]])


def test_compose_rejects_mixed_dimensions():
    with pytest.raises(DimensionMismatch):
        compose(FourierMap.identity(2), FourierMap.identity(3))


def test_compose_output_degree_must_fit_grid():
    f, _ = random_map(np.random.default_rng(3))
    with pytest.raises(GridTooCoarse):
        compose(f, f, out_degree=40, grid=64)


def test_compose_associative_within_tail():
    rng = np.random.default_rng(4)
    f, _ = random_map(rng, amp=0.01)
    g, _ = random_map(rng, amp=0.01)
    h, _ = random_map(rng, amp=0.01)
    G = 128
    fg, t1 = compose(f, g, grid=G, return_tail=True)
    gh, t2 = compose(g, h, grid=G, return_tail=True)
    lhs = compose(fg, h, grid=G)
    rhs = compose(f, gh, grid=G)
    X = rng.random((256, 2))
    assert np.max(np.abs(lhs(X) - rhs(X))) < 1e-12 + 10 * (t1 + t2)
    for m in (fg, gh, lhs, rhs):
        assert reality_defect(m) == 0.0


def test_compose_matches_pointwise():
    rng = np.random.default_rng(5)
    f, _ = random_map(rng, linear=CAT)
    g, _ = random_map(rng)
    h = compose(f, g, grid=128)
    X = rng.random((200, 2))
    assert np.max(np.abs(h(X) - f(g(X)))) < 1e-12


# -- inversion -----------------------------------------------------------------

def test_invert_translation():
    g = invert(FourierMap.translation([0.3, 0.1]))
    assert np.allclose(g.constant, [-0.3, -0.1]) and g.is_affine


def test_invert_identity():
    g = invert(FourierMap.identity(2))
    assert np.array_equal(g.linear, np.eye(2)) and not np.any(g.constant)


def test_invert_sine_perturbation():
    f = FourierMap.from_modes({(1, 0): [0.01 / 2j, 0]})
    X = np.random.default_rng(6).random((512, 2))
    assert np.allclose(f(np.array([[0.25, 0]])), [[0.26, 0]])
    g = invert(f)
    assert np.max(torus_distance(f(g(X)), X)) < 1e-10
    assert np.max(torus_distance(g(f(X)), X)) < 1e-10


def test_invert_anosov_perturbation():
    f, _ = random_map(np.random.default_rng(7), amp=0.005, linear=CAT)
    g = invert(f)
    X = np.random.default_rng(8).random((256, 2))
    assert np.array_equal(g.linear, [[1, -1], [-1, 2]])
    assert np.max(torus_distance(g(f(X)), X)) < 1e-10


def test_invert_singular_linear_part():
    with pytest.raises(NotInvertible):
        invert(FourierMap.linear_map([[2, 0], [0, 1]]))


def test_invert_fold_fails():
    fold = FourierMap.from_modes({(1, 0): [0.3 / 2j, 0]})
    with pytest.raises((NotInvertible, GridTooCoarse)):
        invert(fold, grid=64)


def test_conjugate_by_translation_fixes_translation():
    T = FourierMap.translation([0.2, 0.4])
    h, _ = random_map(np.random.default_rng(9), amp=0.0)
    out = conjugate(h, T, grid=32)
    assert np.allclose(out.constant, [0.2, 0.4]) and out.is_affine


# -- norms ------------------------------------------------------------------------

def test_norm_of_translation_is_zero():
    for k in range(4):
        assert norm_ck(FourierMap.translation([0.5, 0.2]), k) == 0.0


def test_single_mode_sup_against_dense_sampling():
    delta = 0.03
    f = FourierMap.from_modes({(1, 0): [delta, 0]})
    x = np.linspace(0, 1, 4001)
    X = np.stack([x, np.zeros_like(x)], axis=1)
    dense = np.max(np.abs(f.periodic_part()(X)[:, 0]))
    assert abs(norm_ck(f, 0) - 2 * delta) < 1e-12
    assert abs(dense - 2 * delta) < 1e-9
    assert abs(norm_ck(f, 1) - 2 * delta * (1 + 2 * np.pi)) < 1e-12
    b = mode_bound(f.coeffs, 1)
    assert np.allclose(b, [2 * delta, 2 * delta * 2 * np.pi])


def test_norms_increase_with_order():
    f, _ = random_map(np.random.default_rng(10))
    vals = [norm_ck(f, k) for k in range(5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_foliation_norm_orthogonal_direction():
    G = 64
    X = grid_points(2, G)
    phi = GridFunction(np.sin(2 * np.pi * X[:, 0]).reshape(1, G, G))
    F = FoliationField.constant([0, 1], G)
    assert abs(norm_ck_foliation(phi, 1, F) - 1.0) < 1e-12
    Fx = FoliationField.constant([1, 0], G)
    assert abs(norm_ck_foliation(phi, 1, Fx) - (1 + 2 * np.pi)) < 1e-2


def test_foliation_field_rejects_non_unit():
    with pytest.raises(ValueError):
        FoliationField(np.ones((2, 8, 8)))


# -- orbits -----------------------------------------------------------------------

def test_lift_track_translation():
    rho = np.array([0.3, 0.45])
    track = lift_track(FourierMap.translation(rho), np.zeros(2), 3)
    assert np.allclose(track, [rho, 2 * rho, 3 * rho])


def test_lift_track_linear_fixed_point():
    assert not np.any(lift_track(FourierMap.linear_map(CAT), np.zeros(2), 5))


def test_lift_track_displacement_is_bounded():
    rng = np.random.default_rng(11)
    g, _ = random_map(rng, amp=0.01)
    g = g.shifted(-g.constant)
    rho = np.array([np.sqrt(2) - 1, np.sqrt(3) - 1])
    T = conjugate(invert(g), FourierMap.translation(rho))
    x0 = rng.random(2)
    track = lift_track(T, x0, 2000)
    n = np.arange(1, 2001)[:, None]
    dev = track - x0 - n * rho
    assert np.max(np.abs(dev)) < 0.5


# -- serialization and grids ------------------------------------------------------

def test_json_round_trip_is_bit_exact():
    f, _ = random_map(np.random.default_rng(12), linear=CAT)
    d = json.loads(f.to_json())
    assert set(d) == {"dim", "linear", "constant", "modes"}
    g = FourierMap.from_json(f.to_json())
    assert np.array_equal(g.coeffs, f.coeffs) and np.array_equal(g.constant, f.constant)
    assert np.array_equal(g.linear, f.linear)


def test_immutable():
    f = FourierMap.identity(2)
    with pytest.raises(AttributeError):
        f.constant = np.ones(2)
    with pytest.raises(ValueError):
        f.constant[0] = 1.0


def test_torus_point_reduces():
    assert np.allclose(TorusPoint([1.25, -0.25]).coords, [0.25, 0.75])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 7), st.sampled_from([16, 32]))
def test_grid_round_trip(seed, J, G):
    J = min(J, G // 2 - 1)
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(2, 2 * J + 1, 2 * J + 1)) + 1j * rng.normal(size=(2, 2 * J + 1, 2 * J + 1))
    f = FourierMap(np.zeros((2, 2), int), None, c)
    back = GridFunction.from_map(f, G).to_modes(J)
    ref = f.coeffs.copy()
    assert np.max(np.abs(back - ref)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_invert_round_trip_property(seed):
    f, _ = random_map(np.random.default_rng(seed), J=2, amp=0.005)
    g = invert(f, grid=64)
    X = np.random.default_rng(seed + 1).random((64, 2))
    assert np.max(torus_distance(f(g(X)), X)) < 1e-10
    assert reality_defect(g) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_translations_compose_additively(a, b):
    h = compose(FourierMap.translation(a), FourierMap.translation(b))
    assert np.allclose(h.constant, np.add(a, b))
