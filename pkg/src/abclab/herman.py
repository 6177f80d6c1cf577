"""Conjugacy reconstruction from Birkhoff averages and regularity probes.

For commuting maps conjugate to translations, ``T^p = h^{-1}(h + rho p)``,
the averages of ``T^p(x) - rho p`` over growing boxes of p converge to
``h(x)`` up to a constant.  The Hoelder and modulus-of-continuity probes
quantify the regularity of such conjugacies.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .algebra import GroupWord, RotationMatrix
from .diophantine import DyadicNet, dimension_estimate
from .errors import FoliationNotInvariant, NotCommuting
from .fitting import LogLogFit, loglog_fit
from .hyperbolic import cocycle_sum, foliation_defect
from .kam import commutation_defect
from .torus import FoliationField, FourierMap, GridFunction, grid_points, invert, torus_distance


class BirkhoffPartial(NamedTuple):
    n: int
    average: GridFunction  # periodic part of S_n (values minus x), mean included
    difference: float      # ||S_n - S_{n/2}||_C0, NaN for the first level


class BirkhoffResult(NamedTuple):
    h_estimate: GridFunction  # mean-zero periodic part of the reconstructed conjugacy
    partials: list
    curve: np.ndarray         # successive differences for n = 2, 4, ..., n_max


def _rho_rows(rho) -> np.ndarray:
    if isinstance(rho, RotationMatrix):
        return rho.values.T.copy()
    return np.asarray(rho, float).T.copy()


def _normalised_lifts(maps, rows):
    """Shift each lift by an integer so its constant is closest to rho_i."""
    out = []
    for T, r in zip(maps, rows):
        k = np.rint(T.constant - r)
        out.append(T.shifted(-k) if np.any(k) else T)
    return out


def _dyadic(n_max: int) -> list[int]:
    out, n = [], 1
    while n <= n_max:
        out.append(n)
        n *= 2
    return out


def birkhoff_reconstruct(T_family: Sequence[FourierMap], rho, n_max: int = 256, grid: int = 16,
                         commute_tol: float = 1e-9, check_generating: bool = True) -> BirkhoffResult:
    """Reconstruct h from box averages of ``T^p(x) - rho p`` (N = 2 or general N).

    Partial averages are accumulated for the dyadic box radii 1, 2, 4, ...,
    n_max; the sum is ordered deterministically (one generator swept at a
    time, the others stacked).  Raises NotCommuting or NotGenerating.
    """
    maps = list(T_family)
    rows = _rho_rows(rho)
    dim = maps[0].dim
    if len(maps) != rows.shape[0]:
        raise ValueError("one rotation vector per map is required")
    X = grid_points(dim, grid)
    rng = np.random.default_rng(0)
    defect = commutation_defect(maps, rng.random((256, dim)))
    if defect > commute_tol:
        raise NotCommuting(f"family fails to commute by {defect:.3e}")
    if check_generating:
        dimension_estimate(rows, 32, grid=32)
    maps = _normalised_lifts(maps, rows)
    inverses = [invert(T) for T in maps]
    levels = _dyadic(n_max)
    m = len(maps)
    sums = {n: np.zeros_like(X) for n in levels}

    if m == 0:
        raise ValueError("empty family")
    # Points are stored as T^p(x) - n_p with n_p = rint(rho p) integer (lifts
    # commute with integer shifts); off_p = rho p - n_p is subtracted when summing.
    stack, off, rad = _generator_column(maps[0], inverses[0], rows[0], X[None], np.zeros((1, dim)),
                                        np.zeros(1, int), n_max)
    _sweep_rest(maps, inverses, rows, stack, off, rad, 1, levels, sums, n_max)
    partials, curve = [], []
    prev = None
    G = grid
    for n in levels:
        S = sums[n] / float((2 * n + 1) ** m)
        per = S - X
        gf = GridFunction(per.T.reshape((dim,) + (G,) * dim))
        diff = math.nan if prev is None else float(np.max(np.linalg.norm(S - prev, axis=1)))
        if prev is not None:
            curve.append(diff)
        partials.append(BirkhoffPartial(n, gf, diff))
        prev = S
    last = partials[-1].average.values
    mean = last.reshape(dim, -1).mean(axis=1)
    h = GridFunction(last - mean.reshape((dim,) + (1,) * dim))
    return BirkhoffResult(h, partials, np.asarray(curve))


def _generator_column(T, Ti, r, stack, off, rad, n_max):
    """Extend a stack of partial words by T^k, k = -n_max..n_max (order 0, 1, -1, 2, -2, ...)."""
    dim = stack.shape[-1]
    outs, offs, rads = [stack], [off], [rad]
    fwd, bwd = stack, stack
    fo, bo = off, off
    for k in range(1, n_max + 1):
        fwd = T(fwd.reshape(-1, dim)).reshape(fwd.shape)
        bwd = Ti(bwd.reshape(-1, dim)).reshape(bwd.shape)
        fo, bo = fo + r, bo - r
        fi, bi = np.rint(fo), np.rint(bo)
        fwd, bwd = fwd - fi[:, None, :], bwd - bi[:, None, :]
        fo, bo = fo - fi, bo - bi
        rk = np.maximum(rad, k)
        outs += [fwd, bwd]
        offs += [fo, bo]
        rads += [rk, rk]
    return np.concatenate(outs), np.concatenate(offs), np.concatenate(rads)


def _sweep_rest(maps, inverses, rows, stack, off, rad, i, levels, sums, n_max):
    """Sweep generators i, i+1, ... one power at a time over the stacked words."""
    m = len(maps)
    if i == m:
        vals = stack - off[:, None, :]
        for n in levels:
            sel = rad <= n
            if np.any(sel):
                sums[n] += np.sum(vals[sel], axis=0)
        return
    T, Ti, r = maps[i], inverses[i], rows[i]
    dim = stack.shape[-1]
    _sweep_rest(maps, inverses, rows, stack, off, rad, i + 1, levels, sums, n_max)
    fwd, bwd, fo, bo = stack, stack, off, off
    for k in range(1, n_max + 1):
        fwd = T(fwd.reshape(-1, dim)).reshape(fwd.shape)
        bwd = Ti(bwd.reshape(-1, dim)).reshape(bwd.shape)
        fo, bo = fo + r, bo - r
        fi, bi = np.rint(fo), np.rint(bo)
        fwd, bwd = fwd - fi[:, None, :], bwd - bi[:, None, :]
        fo, bo = fo - fi, bo - bi
        rk = np.maximum(rad, k)
        _sweep_rest(maps, inverses, rows, fwd, fo, rk, i + 1, levels, sums, n_max)
        _sweep_rest(maps, inverses, rows, bwd, bo, rk, i + 1, levels, sums, n_max)


def compare_modulo_constant(estimate: GridFunction, g: FourierMap) -> float:
    """``sup |estimate - (g - mean g)|`` on the estimate's grid."""
    G = estimate.resolution
    ref = g.periodic_part(include_constant=True)(estimate.points()).T.reshape(estimate.values.shape)
    ref = ref - ref.reshape(g.dim, -1).mean(axis=1).reshape((g.dim,) + (1,) * g.dim)
    return float(np.max(np.sqrt(np.sum((estimate.values - ref) ** 2, axis=0))))


# ---------------------------------------------------------------------------
# Hoelder regularity


class HolderEstimate(NamedTuple):
    eta: float
    constant: float
    residual: float
    eta_inverse: float
    scales: np.ndarray
    moduli: np.ndarray


def _holder_fit(scales, moduli):
    fit = loglog_fit(scales, moduli)
    return fit, min(max(fit.slope, 1e-12), 1.05) if not fit.degenerate else 1.0


def holder_estimate(h, dim: int | None = None, pair_count: int = 4096, levels: int = 8,
                    seed: int = 0) -> HolderEstimate:
    """Hoelder exponents of h and of its inverse from random pairs at dyadic scales.

    ``h`` is any callable on (P, N) arrays returning lifted values.  At scale
    ``2^-j`` the largest image distance over the pairs gives the modulus of
    h; the smallest gives a lower modulus whose exponent bounds that of the
    inverse: ``d(h x, h y) >= c d(x, y)^(1/eta_inv)``.
    """
    if dim is None:
        dim = h.dim
    rng = np.random.default_rng(seed)
    scales, hi, lo = [], [], []
    for j in range(2, levels + 2):
        s = 2.0 ** (-j)
        x = rng.random((pair_count, dim))
        u = rng.normal(size=(pair_count, dim))
        u *= s / np.linalg.norm(u, axis=1, keepdims=True)
        y = x + u
        d = torus_distance(h(x), h(y))
        scales.append(s)
        hi.append(float(np.max(d)))
        lo.append(float(np.min(d)))
    scales, hi, lo = map(np.asarray, (scales, hi, lo))
    fit, eta = _holder_fit(scales, hi)
    inv_fit = loglog_fit(scales, lo)
    eta_inv = min(1.0 / inv_fit.slope, 1.05) if not inv_fit.degenerate and inv_fit.slope > 0 else 1.0
    return HolderEstimate(float(eta), float(math.exp(fit.intercept)) if not fit.degenerate else math.nan,
                          fit.residual, float(eta_inv), scales, hi)


# ---------------------------------------------------------------------------
# modulus of continuity of the leafwise derivative


class ModulusRow(NamedTuple):
    coefficients: tuple
    torus_norm: float
    deviation: float


class ModulusProbe(NamedTuple):
    rows: list
    fit: LogLogFit


def modulus_of_continuity_probe(T_family, F: FoliationField, words, angle_tol: float = 1e-4) -> ModulusProbe:
    """Tabulate ``sup_x | ||D T_gamma v(x)|| - 1 |`` against ``||gamma||`` and fit a power law.

    ``words`` is a list of GroupWord or a DyadicNet.
    """
    defect = foliation_defect(T_family, F)
    if defect > angle_tol:
        raise FoliationNotInvariant(f"field is not invariant (angle defect {defect:.2e})")
    if isinstance(words, DyadicNet):
        words = [GroupWord(p, words.generators) for p in words.coefficients]
    rows = []
    for w in words:
        if w.word_norm == 0:
            dev = 0.0
        else:
            dev = float(np.max(np.abs(np.expm1(cocycle_sum(T_family, w, F)))))
        rows.append(ModulusRow(tuple(int(c) for c in w.coefficients), w.torus_norm, dev))
    fit = loglog_fit([r.torus_norm for r in rows], [r.deviation for r in rows])
    return ModulusProbe(rows, fit)
