"""KAM iteration for commuting perturbations of translations.

Given maps ``T_k(x) = x + rho_k + R_k(x)`` that commute and whose rotation
vectors satisfy a simultaneous Diophantine condition, the iteration builds
``h`` with ``h T_k h^{-1} = x + rho_k``.  Each step solves the linearised
cohomological equations mode by mode, using for every Fourier mode the
generator with the largest small divisor, and conjugates the family by
``id + H``.  The Anosov generator is treated afterwards by extracting the
constant ``F0`` of ``h A h^{-1} - A_bar x``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .algebra import IntMatrix, RotationMatrix
from .errors import (DivergenceDetected, IterationCap, NotCommuting, NotConstant,
                     SmallDivisorBreakdown)
from .torus import (FourierMap, _resize, compose, conjugate, default_grid,
                    derivative_sups, grid_points, inverse_points, lift_track, mode_bound,
                    mode_vectors, torus_distance)

DIVISOR_FLOOR = 1e-14


def _rho_columns(rho) -> np.ndarray:
    """Translation vectors as rows (m, N) from a RotationMatrix or (N, m) array."""
    if isinstance(rho, RotationMatrix):
        return rho.values.T.copy()
    return np.asarray(rho, float).T.copy()


@dataclass(frozen=True)
class KamConfig:
    grid: int | None = None
    j0: int = 8
    schedule_power: float = 1.5
    basin: float = 0.05
    target: float = 1e-10
    max_iter: int = 20
    divergence_steps: int = 3
    commute_tol: float = 1e-9
    recenter_orbit: int = 0
    residual_samples: int = 2048
    seed: int = 0

    def grid_for(self, dim: int) -> int:
        return default_grid(dim) if self.grid is None else int(self.grid)

    def next_cutoff(self, J: int, dim: int) -> int:
        cap = self.grid_for(dim) // 2 - 1
        return min(int(math.ceil(J ** self.schedule_power)), cap)


class CohomologicalSolution(NamedTuple):
    H: FourierMap
    cross_residual: float
    equation_residual: float
    choice: np.ndarray
    min_divisor: float


def _divisors(rho_rows: np.ndarray, J: int, dim: int):
    n = mode_vectors(J, dim).reshape(dim, -1).astype(float)
    theta = rho_rows @ n  # (m, modes)
    return np.exp(2j * np.pi * theta) - 1.0, 2.0 * np.abs(np.sin(np.pi * theta))


def cohomological_solve(remainders, rho, J: int) -> CohomologicalSolution:
    """Solve ``H(x + rho_k) - H(x) = -R_k(x)`` simultaneously up to degree J.

    For each mode n the generator ``k(n)`` with the largest divisor
    ``|exp(2 pi i <rho_k, n>) - 1|`` is used (ties to the smaller k).  The
    returned ``cross_residual`` measures how well the other equations hold,
    which vanishes for exactly commuting inputs.
    """
    rows = _rho_columns(rho)
    m, dim = rows.shape
    if len(remainders) != m:
        raise ValueError(f"expected {m} remainders, got {len(remainders)}")
    if J == 0:
        return CohomologicalSolution(FourierMap(np.zeros((dim, dim), int)), 0.0, 0.0,
                                     np.zeros(1, int), math.inf)
    R = np.stack([_resize(r.coeffs, J) for r in remainders]).reshape(m, dim, -1)
    div, mag = _divisors(rows, J, dim)
    centre = ((2 * J + 1) ** dim) // 2
    mag[:, centre] = np.inf
    k = np.argmax(mag, axis=0)
    best = mag[k, np.arange(mag.shape[1])]
    best[centre] = np.inf
    dmin = float(np.min(best))
    if dmin < DIVISOR_FLOOR:
        raise SmallDivisorBreakdown(f"largest small divisor {dmin:.3e} below {DIVISOR_FLOOR:.0e}")
    cols = np.arange(mag.shape[1])
    dk = div[k, cols]
    dk[centre] = 1.0
    H = -R[k, :, cols].T / dk  # (dim, modes)
    H[:, centre] = 0.0
    eq = np.abs(H * dk + R[k, :, cols].T)
    eq[:, centre] = 0.0
    cross = 0.0
    for j in range(m):
        res = np.linalg.norm(H * div[j] + R[j], axis=0)
        res[centre] = 0.0
        res[k == j] = 0.0
        cross = max(cross, float(np.max(res)))
    Hmap = FourierMap(np.zeros((dim, dim), int), None, H.reshape((dim,) + (2 * J + 1,) * dim))
    return CohomologicalSolution(Hmap, cross, float(np.max(eq)), k, dmin)


def remainder_of(T: FourierMap, rho_k: np.ndarray) -> FourierMap:
    """``T(x) - x - rho_k`` as a periodic map (zero linear part)."""
    return FourierMap(np.zeros_like(T.linear), T.constant - rho_k, T.coeffs)


def c1_size(R: FourierMap, G: int | None = None) -> float:
    """Conservative C^1 size: max of the grid sup and the mode-sum bound."""
    bound = sum(mode_bound(R.coeffs, 1, R.constant))
    if R.is_affine:
        return float(bound)
    sups = derivative_sups(R.coeffs, 1, G, R.constant)
    return float(max(bound, sum(sups)))


@dataclass(frozen=True)
class KamState:
    """One iterate: conjugated maps, cutoff, remainder size and accumulated conjugacy."""

    n: int
    cutoff: int
    maps: tuple
    rho: np.ndarray
    eps: float
    conjugacy: FourierMap
    increases: int = 0
    cohomological_residual: float = 0.0

    @property
    def remainders(self) -> list[FourierMap]:
        return [remainder_of(T, self.rho[k]) for k, T in enumerate(self.maps)]

    def recompute_eps(self, G: int | None = None) -> float:
        return max(c1_size(R, G) for R in self.remainders)


def initial_state(maps, rho, config: KamConfig = KamConfig()) -> KamState:
    rows = _rho_columns(rho)
    rows.flags.writeable = False
    maps = tuple(maps)
    dim = maps[0].dim
    G = config.grid_for(dim)
    eps = max(c1_size(remainder_of(T, rows[k]), G) for k, T in enumerate(maps))
    return KamState(0, min(config.j0, G // 2 - 1), maps, rows, eps, FourierMap.identity(dim))


def _recenter(T: FourierMap, rho_k: np.ndarray, length: int) -> FourierMap:
    orbit = lift_track(T, np.zeros(T.dim), length)
    drift = orbit[-1] / length - rho_k
    return T.shifted(-drift)


def kam_step(state: KamState, config: KamConfig = KamConfig()) -> KamState:
    """One conjugation step at the current cutoff."""
    if state.eps > config.basin:
        raise DivergenceDetected(f"remainder size {state.eps:.3e} is outside the basin {config.basin}")
    dim = state.maps[0].dim
    G = config.grid_for(dim)
    sol = cohomological_solve(state.remainders, state.rho, state.cutoff)
    h = FourierMap(np.eye(dim, dtype=int), None, sol.H.coeffs)
    new_maps = []
    for k, T in enumerate(state.maps):
        Tn = conjugate(h, T, grid=G)
        if config.recenter_orbit:
            Tn = _recenter(Tn, state.rho[k], config.recenter_orbit)
        new_maps.append(Tn)
    new_maps = tuple(new_maps)
    eps = max(c1_size(remainder_of(T, state.rho[k]), G) for k, T in enumerate(new_maps))
    H = compose(h, state.conjugacy, grid=G)
    inc = state.increases + 1 if eps > state.eps else 0
    if inc >= config.divergence_steps:
        raise DivergenceDetected(f"remainder grew for {inc} consecutive steps (now {eps:.3e})")
    return KamState(state.n + 1, config.next_cutoff(state.cutoff, dim), new_maps, state.rho,
                    eps, H, inc, sol.cross_residual)


@dataclass
class KamReport:
    rows: list = field(default_factory=list)  # (n, J, eps, cohomological residual)
    termination: str = ""
    residual: float = math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "J", "eps", "residual"])
        for n, J, eps, res in self.rows:
            w.writerow([n, J, repr(float(eps)), repr(float(res))])
        return buf.getvalue()


class KamResult(NamedTuple):
    conjugacy: FourierMap
    report: KamReport
    state: KamState


def commutation_defect(maps, points: np.ndarray) -> float:
    worst = 0.0
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            a = maps[i](maps[j](points))
            b = maps[j](maps[i](points))
            worst = max(worst, float(np.max(torus_distance(a, b))))
    return worst


def conjugation_residual(h: FourierMap, maps, rho, points: np.ndarray) -> float:
    """``max_k sup_x dist(h(T_k x), h(x) + rho_k)`` at the given points."""
    rows = _rho_columns(rho)
    hx = h(points)
    return max(float(np.max(torus_distance(h(T(points)), hx + rows[k]))) for k, T in enumerate(maps))


def _check_resonance(rows: np.ndarray, J: int, dim: int) -> None:
    _, mag = _divisors(rows, J, dim)
    best = np.max(mag, axis=0)
    best[best.size // 2] = np.inf
    if np.min(best) < DIVISOR_FLOOR:
        raise SmallDivisorBreakdown(
            f"rotation vectors are resonant up to degree {J} (largest divisor {np.min(best):.3e})")


def kam_run(maps, rho, config: KamConfig = KamConfig()) -> KamResult:
    """Iterate KAM steps until the remainder size is below ``config.target``.

    Raises NotCommuting, SmallDivisorBreakdown, DivergenceDetected or
    IterationCap (the latter two carry the partial report as ``.report``).
    """
    maps = list(maps)
    dim = maps[0].dim
    rows = _rho_columns(rho)
    for T in maps:
        if not np.array_equal(T.linear, np.eye(dim, dtype=np.int64)):
            raise ValueError("KAM inputs must be homotopic to the identity")
    rng = np.random.default_rng(config.seed)
    pts = rng.random((config.residual_samples, dim))
    defect = commutation_defect(maps, pts[:256])
    if defect > config.commute_tol:
        raise NotCommuting(f"generators fail to commute by {defect:.3e}")
    G = config.grid_for(dim)
    _check_resonance(rows, G // 2 - 1, dim)
    state = initial_state(maps, rows, config)
    report = KamReport()
    report.rows.append((0, state.cutoff, state.eps, 0.0))
    while state.eps >= config.target:
        if state.n >= config.max_iter:
            report.termination = "iteration cap"
            exc = IterationCap(f"no convergence after {state.n} steps (eps {state.eps:.3e})")
            exc.report = report
            raise exc
        try:
            state = kam_step(state, config)
        except DivergenceDetected as exc:
            report.termination = "divergence"
            exc.report = report
            raise
        report.rows.append((state.n, state.cutoff, state.eps, state.cohomological_residual))
    report.termination = "converged"
    check = np.concatenate([pts, grid_points(dim, 32)])
    report.residual = conjugation_residual(state.conjugacy, maps, rows, check)
    return KamResult(state.conjugacy, report, state)


class LinearizeResult(NamedTuple):
    F0: np.ndarray
    translation: np.ndarray
    conjugacy: FourierMap
    variation: float
    residual: float


def linearize_anosov(A: FourierMap, h: FourierMap, Abar, rho=None, tol: float = 1e-6,
                     grid: int | None = None) -> LinearizeResult:
    """Make ``h`` conjugate A to ``A_bar`` by a constant correction.

    ``F(x) = h A h^{-1}(x) - A_bar x`` must be constant; with
    ``t = (I - A_bar)^{-1} F0`` the corrected conjugacy ``h - t`` sends A to
    ``A_bar`` exactly.  Raises NotConstant when F varies by more than tol.
    """
    Ab = np.asarray(Abar.entries if isinstance(Abar, IntMatrix) else Abar, float)
    dim = A.dim
    I = np.eye(dim)
    if abs(np.linalg.det(I - Ab)) < 1e-12:
        raise ValueError("A_bar has eigenvalue 1")
    G = default_grid(dim) if grid is None else grid
    X = grid_points(dim, G)
    Y = inverse_points(h, X)
    F = h(A(Y)) - X @ Ab.T
    # F is defined modulo Z^N; centre each component on its median branch
    F = F - np.rint(F - np.median(F, axis=0))
    variation = float(np.max(np.ptp(F, axis=0)))
    if variation > tol:
        raise NotConstant(f"h A h^-1 - A_bar x varies by {variation:.3e} (tol {tol:.1e})")
    F0 = F.mean(axis=0)
    t = np.linalg.solve(I - Ab, F0)
    hc = h.shifted(-t)
    Yc = inverse_points(hc, X)
    res = float(np.max(torus_distance(hc(A(Yc)), X @ Ab.T)))
    return LinearizeResult(F0, t, hc, variation, res)
