"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line with the measured quantity and
then asserts the same condition.  Run with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

from abclab.algebra import AffineABCAction, check_commutation, rho_matrix, verify_relations
from abclab.cli import ExperimentConfig, run_scenario
from abclab.diophantine import dimension_estimate, kronecker_exponent
from abclab.errors import DivergenceDetected, SmallDivisorBreakdown
from abclab.herman import birkhoff_reconstruct, compare_modulo_constant
from abclab.hyperbolic import fixed_point_trace, fourier_decay_diagnostic, franks_conjugacy, lyapunov_exponents
from abclab.kam import kam_run, linearize_anosov
from abclab.perturb import conjugated_action, trig_perturbation
from abclab.torus import FourierMap, torus_distance

CAT = np.array([[2, 1], [1, 1]])
MODES = [(1, 0), (0, 1), (1, 1)]
SDC_COEFFS = [math.sqrt(2) - 1, math.sqrt(3) - 1]
SDC_RHO = rho_matrix(SDC_COEFFS, CAT)


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return emit


@pytest.fixture(scope="module")
def kam_family():
    g = trig_perturbation(MODES, 1e-3, seed=0)
    return conjugated_action(g, CAT, SDC_RHO)


def test_affine_certification(report):
    rng = np.random.default_rng(0)
    t = time.perf_counter()
    worst_rel = worst_res = 0.0
    for a0, a1 in rng.random((100, 2)):
        rho = rho_matrix([a0, a1], CAT)
        chk = check_commutation(CAT, CAT, rho)
        worst_res = max(worst_res, chk.max_residue)
        worst_rel = max(worst_rel, verify_relations(AffineABCAction.build(CAT, CAT, [rho]), 1000))
    dt = time.perf_counter() - t
    ok = worst_rel < 1e-12 and worst_res < 1e-12 and dt < 5
    report(1, "affine certification", ok,
           f"max relation residual {worst_rel:.2e}, max residue {worst_res:.2e}, {dt:.2f} s")


def test_kam_convergence(report, kam_family):
    act = kam_family
    t = time.perf_counter()
    res = kam_run(act.translations, SDC_RHO)
    lin = linearize_anosov(act.anosov, res.conjugacy, CAT)
    dt = time.perf_counter() - t
    X = np.random.default_rng(1).random((1024, 2))
    h = lin.conjugacy
    tr = max(float(np.max(torus_distance(h(T(X)), h(X) + SDC_RHO[:, k])))
             for k, T in enumerate(act.translations))
    an = float(np.max(torus_distance(h(act.anosov(X)), h(X) @ CAT.T)))
    iters = len(res.report.rows) - 1
    ok = res.state.eps < 1e-10 and iters <= 12 and tr < 1e-8 and an < 1e-8 and dt < 60
    report(2, "KAM convergence", ok,
           f"eps {res.state.eps:.2e} after {iters} steps, translation residual {tr:.2e}, "
           f"Anosov residual {an:.2e}, {dt:.1f} s")


def test_kam_resonant_control(report):
    rho = rho_matrix([0.5, 0.0], CAT)
    act = conjugated_action(trig_perturbation(MODES, 1e-3, seed=0), CAT, rho, anosov=False)
    try:
        kam_run(act.translations, rho)
        outcome = "converged"
    except (SmallDivisorBreakdown, DivergenceDetected) as exc:
        outcome = type(exc).__name__
    report(3, "resonant negative control", outcome != "converged", outcome)


def test_franks_obstruction(report):
    eps = 0.01
    A = FourierMap.from_modes({(2, 0): [-0.5j * eps, -0.5j * eps]}, linear=CAT)
    h = franks_conjugacy(A)
    resid = h.residual(np.random.default_rng(2).random((4096, 2)))
    ob = fixed_point_trace(A)
    gap = abs(ob.trace - (3 + 4 * math.pi * eps))
    ok = resid < 1e-8 and gap < 1e-10 and ob.obstructed
    report(4, "Franks conjugacy and trace obstruction", ok,
           f"residual {resid:.2e}, trace {ob.trace:.12f} (off by {gap:.1e})")


def test_lyapunov(report, kam_family):
    lam = math.log((3 + math.sqrt(5)) / 2)
    worst = max(float(np.max(np.abs(lyapunov_exponents(T, orbit_len=100_000).exponents)))
                for T in kam_family.translations)
    cat = lyapunov_exponents(FourierMap.linear_map(CAT), orbit_len=100_000).exponents
    gap = float(np.max(np.abs(np.sort(cat)[::-1] - [lam, -lam])))
    ok = worst < 1e-3 and gap < 1e-3
    report(5, "Lyapunov exponents", ok,
           f"translations max |lambda| {worst:.2e}, linear map {np.round(cat, 5).tolist()}")


def test_kronecker_exponent(report):
    rng = np.random.default_rng(0)
    t = time.perf_counter()
    slopes = []
    for _ in range(20):
        M = rng.random((2, 4))
        _, fit = kronecker_exponent(M, [4, 8, 16, 32, 64], rng.random((32, 2)))
        slopes.append(fit.slope)
    dt = time.perf_counter() - t
    slopes = np.array(slopes)
    ok = bool(np.all(np.abs(slopes + 2) <= 0.3)) and dt < 120
    report(6, "Kronecker exponent", ok,
           f"slopes in [{slopes.min():.2f}, {slopes.max():.2f}], mean {slopes.mean():.2f}, {dt:.1f} s")


def test_dimension(report):
    V = np.array([math.sqrt(p) % 1 for p in (2, 3, 5, 7, 11, 13, 17, 19)]).reshape(4, 2)
    d = dimension_estimate(V, 64).d_fit
    report(7, "dimension of four vectors on the 2-torus", abs(d - 2) <= 0.3, f"d_fit {d:.3f}")


def test_birkhoff(report):
    g = trig_perturbation(MODES, 0.05, seed=0)
    act = conjugated_action(g, CAT, SDC_RHO, anosov=False)
    t = time.perf_counter()
    res = birkhoff_reconstruct(act.translations, SDC_RHO, 256)
    dt = time.perf_counter() - t
    err = compare_modulo_constant(res.h_estimate, g)
    ok = err < 1e-2 and res.curve[-1] < res.curve[0] / 10
    report(8, "Birkhoff reconstruction", ok,
           f"C0 error {err:.2e}, curve {res.curve[0]:.2e} -> {res.curve[-1]:.2e}, {dt:.1f} s")


def test_fourier_decay(report, kam_family):
    h = franks_conjugacy(kam_family.anosov, CAT).to_fourier(64)
    ps = [(a, b) for a in range(-8, 9) for b in range(-8, 9) if 0 < a * a + b * b <= 64]
    rows = fourier_decay_diagnostic(kam_family.translations, h, CAT, CAT, 4, ps, check_relation=False)
    worst = max(r.max_mode for r in rows)
    report(9, "Fourier decay of conjugated translations", worst < 1e-6,
           f"max nonzero mode {worst:.2e} over {len(ps)} vectors")


DETERMINISM_CONFIGS = {
    "local-rigidity": {"grid": 64},
    "franks-remark": {},
    "kronecker": {"samples": 2, "targets": 4, "l_max": 16},
    "birkhoff": {"n_max": 16},
    "lyapunov-abc": {"orbit_len": 2000, "grid": 64},
    "oscillation": {"p_max": 4, "grid": 32},
}


def test_determinism(report, tmp_path):
    differing = []
    for name, extra in DETERMINISM_CONFIGS.items():
        runs = []
        for tag in ("a", "b"):
            cfg = ExperimentConfig.from_mapping({"scenario": name, "seed": 7, "output": str(tmp_path / name / tag),
                                                 **extra})
            run_scenario(cfg)
            d = tmp_path / name / tag
            runs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        if runs[0] != runs[1]:
            differing.append(name)
    report(10, "byte-identical reruns", not differing,
           f"{len(DETERMINISM_CONFIGS)} scenarios, differing: {differing or 'none'}")
