"""Diophantine certification, Kronecker search and covering-rate dimension.

All searches are exhaustive over explicit finite boxes or word balls with a
work budget; small divisors are measured as distances to the nearest
integer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .algebra import IntMatrix, RotationMatrix, as_int_matrix, certify_rotation, commutant_basis
from .errors import BudgetExceeded, DimensionMismatch, NotGenerating
from .fitting import LogLogFit, loglog_fit
from .torus import torus_distance


def _dist_z(t: np.ndarray) -> np.ndarray:
    return np.abs(t - np.rint(t))


def _wrap01(x: np.ndarray) -> np.ndarray:
    r = np.mod(x, 1.0)
    r[r >= 1.0] = 0.0
    return r


@dataclass(frozen=True)
class DiophantineParams:
    C: float
    tau: float

    def __post_init__(self):
        if not (self.C > 0 and self.tau > 0):
            raise ValueError("Diophantine constants must be positive")


# ---------------------------------------------------------------------------
# simultaneous Diophantine condition


class SDCReport(NamedTuple):
    c_fit: float
    worst_n: np.ndarray
    n_max: int
    c_fit_double: float
    passed: bool


def _sdc_scan(V: np.ndarray, tau: float, n_lo: float, n_hi: int, batch: int = 1 << 21):
    """min over n in the half space, n_lo < |n|_2 <= n_hi, of |n|^tau max_i dist(<v_i, n>, Z)."""
    m, N = V.shape
    best, best_n = math.inf, None
    if N == 1:
        n = np.arange(max(1, int(math.floor(n_lo)) + 1), n_hi + 1)
        if n.size == 0:
            return best, best_n
        vals = np.max(_dist_z(np.outer(n, V[:, 0])), axis=1) * n.astype(float) ** tau
        i = int(np.argmin(vals))
        return float(vals[i]), np.array([n[i]])
    if N == 2:
        return _sdc_scan_2d(V, tau, n_lo, n_hi, batch)
    ax = np.arange(-n_hi, n_hi + 1)
    rest = np.stack(np.meshgrid(*([ax] * (N - 1)), indexing="ij"), axis=-1).reshape(-1, N - 1)
    rest2 = np.sum(rest.astype(float) ** 2, axis=1)
    # lexicographically positive tails, used when the leading coordinate is 0
    nz = rest != 0
    first = np.argmax(nz, axis=1)
    pos_tail = nz.any(axis=1) & (rest[np.arange(rest.shape[0]), first] > 0)
    rows = max(1, batch // rest.shape[0])
    hi2, lo2 = float(n_hi) ** 2, float(n_lo) ** 2
    for start in range(0, n_hi + 1, rows):
        lead = np.arange(start, min(n_hi, start + rows - 1) + 1)
        L = lead[:, None].astype(float) ** 2 + rest2[None, :]
        mask = (L <= hi2) & (L > lo2)
        mask &= (lead[:, None] > 0) | pos_tail[None, :]
        li, ri = np.nonzero(mask)
        if li.size == 0:
            continue
        n1 = lead[li].astype(float)
        nr = rest[ri].astype(float)
        d = np.zeros(li.size)
        for i in range(m):
            t = n1 * V[i, 0] + nr @ V[i, 1:]
            np.maximum(d, _dist_z(t), out=d)
        vals = d * L[li, ri] ** (tau / 2)
        j = int(np.argmin(vals))
        if vals[j] < best:
            best = float(vals[j])
            best_n = np.concatenate([[lead[li[j]]], rest[ri[j]]]).astype(np.int64)
    return best, best_n


def _sdc_scan_2d(V: np.ndarray, tau: float, n_lo: float, n_hi: int, batch: int):
    """Planar scan over rectangles of rows; the first vector prefilters candidates."""
    best, best_n = math.inf, None
    n2 = np.arange(-n_hi, n_hi + 1)
    n2f = n2.astype(float)
    hi2, lo2 = float(n_hi) ** 2, float(n_lo) ** 2
    rows = max(1, batch // n2.size)
    # leading coordinate 0 only with n2 > 0 (half space)
    for start in range(0, n_hi + 1, rows):
        n1 = np.arange(start, min(n_hi, start + rows - 1) + 1)
        L = np.add.outer(n1.astype(float) ** 2, n2f ** 2)
        out = (L > hi2) | (L <= lo2)
        if start == 0:
            out[0, : n_hi + 1] = True
        w = L ** (tau / 2) if tau != 2 else L
        t = np.add.outer(n1 * V[0, 0], n2f * V[0, 1])
        d = np.abs(t - np.rint(t))
        d *= w
        d[out] = np.inf
        if not math.isfinite(best):
            cand = np.nonzero(np.isfinite(d))
        else:
            cand = np.nonzero(d < best)
        if cand[0].size == 0:
            continue
        a, b = n1[cand[0]].astype(float), n2f[cand[1]]
        dm = d[cand] / w[cand]
        for i in range(1, V.shape[0]):
            ti = a * V[i, 0] + b * V[i, 1]
            np.maximum(dm, np.abs(ti - np.rint(ti)), out=dm)
        vals = dm * w[cand]
        j = int(np.argmin(vals))
        if vals[j] < best:
            best = float(vals[j])
            best_n = np.array([n1[cand[0][j]], n2[cand[1][j]]], dtype=np.int64)
    return best, best_n


def sdc_check(vectors, tau: float, n_max: int, double_check: bool = True,
              decay_ratio: float = 0.5) -> SDCReport:
    """Empirical simultaneous Diophantine constant of the rows of ``vectors``.

    ``C_fit = min |n|^tau max_i dist(<v_i, n>, Z)`` over 0 < |n|_2 <= n_max.
    The check passes when ``C_fit > 0`` and, with ``double_check``, the scan
    extended to ``2 n_max`` keeps at least ``decay_ratio * C_fit``.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    V = np.atleast_2d(np.asarray(vectors, float))
    c, n = _sdc_scan(V, tau, 0.0, int(n_max))
    c2 = c
    if double_check:
        c_out, n_out = _sdc_scan(V, tau, float(n_max), 2 * int(n_max))
        c2 = min(c, c_out)
    passed = bool(c > 0 and c2 >= decay_ratio * c)
    return SDCReport(c, n, int(n_max), c2, passed)


class SDCCertificate(NamedTuple):
    scalar: SDCReport | None
    columns: SDCReport
    passed: bool


def sdc_from_diophantine(a, A, tau: float, n_max: int = 1000, scalar_n_max: int = 1000):
    """``rho = sum_i a_i A^(i-1)`` with certificates for the coefficients and the columns.

    Returns ``(RotationMatrix, SDCCertificate)``.  Raises Derogatory through
    the commutant construction.
    """
    A = as_int_matrix(A)
    basis = commutant_basis(A)
    a = np.asarray(a, float)
    if a.size != len(basis):
        raise DimensionMismatch(f"need {len(basis)} coefficients")
    rho = sum(ai * b for ai, b in zip(a, basis))
    nz = a[a != 0]
    scalar = sdc_check(nz[None, :], tau, scalar_n_max) if nz.size else None
    cols = sdc_check(rho.T, tau, n_max)
    ok = cols.passed and (scalar is None or scalar.passed)
    return certify_rotation(A, A, rho), SDCCertificate(scalar, cols, ok)


# ---------------------------------------------------------------------------
# Kronecker search


@dataclass(frozen=True)
class KroneckerResult:
    M: np.ndarray
    y: np.ndarray
    n: int
    best_p: np.ndarray
    best_q: np.ndarray
    err: float
    radii: np.ndarray
    errors: np.ndarray
    fit: LogLogFit


def _word_values(p: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``p @ V`` with a fixed summation order (independent of the batch size)."""
    out = np.zeros((p.shape[0], V.shape[1]))
    for i in range(V.shape[0]):
        out += p[:, i:i + 1].astype(float) * V[i]
    return out


def _box(m: int, r: int) -> np.ndarray:
    ax = np.arange(-r, r + 1)
    return np.stack(np.meshgrid(*([ax] * m), indexing="ij"), axis=-1).reshape(-1, m)


def _p_key(p: np.ndarray):
    return (int(np.sum(np.abs(p))), tuple(-int(v) for v in p))


def _kron_min(M: np.ndarray, Y: np.ndarray, r: int, brute_limit: int = 1 << 17):
    """Best p != 0 with |p|_inf <= r for each target row of Y; returns (errs, ps)."""
    N, K = M.shape
    T = Y.shape[0]
    if (2 * r + 1) ** K <= brute_limit or K == 1:
        P = _box(K, r)
        P = P[np.any(P != 0, axis=1)]
        MP = P @ M.T
        errs = np.empty(T)
        ps = np.empty((T, K), dtype=np.int64)
        for t in range(T):
            e = torus_distance(MP, Y[t])
            emin = e.min()
            cand = np.nonzero(e <= emin + 1e-15)[0]
            j = min(cand, key=lambda i: _p_key(P[i]))
            errs[t], ps[t] = e[j], P[j]
        return errs, ps
    ka = K // 2
    Pa, Pb = _box(ka, r), _box(K - ka, r)
    va = _wrap01(Pa @ M[:, :ka].T)
    tree = cKDTree(va, boxsize=1.0)
    zero_a = int(np.nonzero(~np.any(Pa != 0, axis=1))[0][0])
    zero_b = ~np.any(Pb != 0, axis=1)
    vb = Pb @ M[:, ka:].T
    errs = np.empty(T)
    ps = np.empty((T, K), dtype=np.int64)
    for t in range(T):
        q = _wrap01(Y[t] - vb)
        d, idx = tree.query(q, k=2)
        use = d[:, 0].copy()
        ia = idx[:, 0].copy()
        fix = zero_b & (ia == zero_a)
        use[fix], ia[fix] = d[fix, 1], idx[fix, 1]
        j = int(np.argmin(use))
        p = np.concatenate([Pa[ia[j]], Pb[j]])
        errs[t] = float(torus_distance(p @ M.T, Y[t]))
        ps[t] = p
    return errs, ps


def _dyadic_radii(n: int, start: int = 2) -> list[int]:
    radii, r = [], start
    while r < n:
        radii.append(r)
        r *= 2
    radii.append(n)
    return radii


def kronecker_search(M, y, n: int, budget: float = 1e8, fit_from: int = 2) -> KroneckerResult:
    """Exhaustive minimisation of ``dist(M p - y, Z^N)`` over ``0 < |p|_inf <= n``.

    The search is a meet in the middle over two halves of the coordinates of
    p; ``budget`` bounds the number of enumerated half-candidates.  The error
    curve over dyadic radii is fitted in log-log form from ``fit_from`` on.
    """
    M = np.atleast_2d(np.asarray(M, float))
    N, K = M.shape
    y = np.asarray(y, float).reshape(N)
    work = (2 * n + 1) ** K if K == 1 else (2 * n + 1) ** (K - K // 2)
    if work > budget:
        raise BudgetExceeded(f"search radius {n} enumerates {work:.3g} candidates (budget {budget:.3g})")
    radii = _dyadic_radii(n)
    errs = []
    for r in radii:
        e, p = _kron_min(M, y[None], r)
        errs.append(e[0])
    errs = np.minimum.accumulate(np.array(errs))
    best_p = p[0]
    best_q = np.rint(M @ best_p - y).astype(np.int64)
    err = float(np.linalg.norm(M @ best_p - best_q - y))
    sel = np.array(radii) >= fit_from
    fit = loglog_fit(np.array(radii)[sel], errs[sel])
    return KroneckerResult(M, y, int(n), best_p, best_q, err, np.array(radii), errs, fit)


def kronecker_exponent(M, radii, targets) -> tuple[np.ndarray, LogLogFit]:
    """Mean best error over several targets at each radius, with its log-log fit."""
    M = np.atleast_2d(np.asarray(M, float))
    Y = np.atleast_2d(np.asarray(targets, float))
    means = np.array([np.mean(_kron_min(M, Y, int(r))[0]) for r in radii])
    return means, loglog_fit(radii, means)


# ---------------------------------------------------------------------------
# word balls, dimension and dyadic nets


def _l1_ball(m: int, ell: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer vectors with |p|_1 <= ell, sorted by l1 norm; returns (p, norms)."""
    if m == 1:
        p = np.arange(-ell, ell + 1).reshape(-1, 1)
    else:
        a, na = _l1_ball(m // 2, ell)
        b, nb = _l1_ball(m - m // 2, ell)
        parts = []
        for s in range(ell + 1):
            ia = np.nonzero(na == s)[0]
            jb = np.searchsorted(nb, ell - s, side="right")
            if ia.size == 0 or jb == 0:
                continue
            A_, B_ = a[ia], b[:jb]
            parts.append(np.concatenate([np.repeat(A_, jb, axis=0), np.tile(B_, (ia.size, 1))], axis=1))
        p = np.concatenate(parts)
    norms = np.sum(np.abs(p), axis=1)
    order = np.argsort(norms, kind="stable")
    return p[order].astype(np.int16 if ell < 2 ** 14 else np.int64), norms[order]


def _l1_count(m: int, ell: int) -> int:
    return sum(2 ** k * math.comb(m, k) * math.comb(ell, k) for k in range(min(m, ell) + 1))


def _ball_values(V: np.ndarray, ell: int) -> tuple[np.ndarray, np.ndarray]:
    """Torus values of all words of l1 norm <= ell (wrapped) and their norms."""
    m = V.shape[0]
    if m == 1:
        p, norms = _l1_ball(1, ell)
        return _wrap01(p.astype(float) @ V), norms
    a, na = _l1_ball(m // 2, ell)
    b, nb = _l1_ball(m - m // 2, ell)
    va = a.astype(float) @ V[: m // 2]
    vb = b.astype(float) @ V[m // 2:]
    vals, norms = [], []
    for s in range(ell + 1):
        ia = np.nonzero(na == s)[0]
        jb = np.searchsorted(nb, ell - s, side="right")
        if ia.size == 0 or jb == 0:
            continue
        vals.append((va[ia][:, None, :] + vb[None, :jb, :]).reshape(-1, V.shape[1]))
        norms.append((s + nb[None, :jb] + 0 * ia[:, None]).ravel())
    return _wrap01(np.concatenate(vals)), np.concatenate(norms)


class DimensionResult(NamedTuple):
    radii: np.ndarray
    covering: np.ndarray
    d_fit: float
    c_fit: float
    residual: float


def dimension_estimate(rhos, l_max: int, grid: int = 64, budget: float = 5e7,
                       fit_from: int = 2) -> DimensionResult:
    """Covering-rate dimension of the subgroup generated by the rows of ``rhos``.

    ``r(l)`` is the largest distance from a grid target to the nearest word of
    l1 length at most ``l``, for dyadic ``l`` up to ``l_max``; the dimension is
    minus the log-log slope and ``c_fit`` the prefactor ``r ~ c l^(-d)``.
    """
    V = np.atleast_2d(np.asarray(rhos, float))
    m, N = V.shape
    count = _l1_count(m, l_max)
    if count > budget:
        raise BudgetExceeded(f"word ball of radius {l_max} has {count} elements (budget {budget:.3g})")
    vals, norms = _ball_values(V, l_max)
    order = np.argsort(norms, kind="stable")
    vals, norms = vals[order], norms[order]
    ax = (np.arange(grid) + 0.5) / grid
    targets = np.stack(np.meshgrid(*([ax] * N), indexing="ij"), axis=-1).reshape(-1, N)
    radii = np.array(_dyadic_radii(l_max))
    cover = []
    for ell in radii:
        k = np.searchsorted(norms, ell, side="right")
        d, _ = cKDTree(vals[:k], boxsize=1.0).query(targets)
        cover.append(float(np.max(d)))
    cover = np.array(cover)
    spacing = 1.0 / grid
    if cover[-1] > spacing and len(cover) > 1 and cover[-1] >= 0.9 * cover[-2]:
        raise NotGenerating(f"covering radius stalls at {cover[-1]:.3g} above the grid spacing")
    sel = radii >= fit_from
    fit = loglog_fit(radii[sel], cover[sel])
    return DimensionResult(radii, cover, -fit.slope, float(np.exp(fit.intercept)), fit.residual)


@dataclass(frozen=True)
class DyadicNet:
    level: int
    c: float
    d: float
    coefficients: np.ndarray
    values: np.ndarray
    norms: np.ndarray
    generators: np.ndarray
    covering_radius: float

    @property
    def inner(self) -> float:
        return self.c * 2.0 ** (-self.d * (self.level + 1) / 2)

    @property
    def outer(self) -> float:
        return self.c * 2.0 ** (-self.d * self.level / 2)

    @property
    def cardinality(self) -> int:
        return int(self.coefficients.shape[0])

    @property
    def empty(self) -> bool:
        return self.cardinality == 0

    def verify(self) -> bool:
        """Recompute each element's torus and word norms and re-check the shell."""
        if self.empty:
            return True
        p = self.coefficients
        tn = torus_distance(_word_values(p, self.generators), 0.0)
        wn = np.sum(np.abs(p), axis=1)
        return bool(np.all(tn > self.inner) and np.all(tn <= self.outer)
                    and np.all(wn <= 2 ** self.level) and np.array_equal(tn, self.norms))


def dyadic_net_build(rhos, c: float, d: float, m: int, budget: float = 5e7,
                     samples: int = 2048, seed: int = 0) -> DyadicNet:
    """Words of length <= 2^m whose torus norm lies in the shell of level m."""
    V = np.atleast_2d(np.asarray(rhos, float))
    k, N = V.shape
    ell = 2 ** m
    if _l1_count(k, ell) > budget:
        raise BudgetExceeded(f"word ball of radius {ell} exceeds the budget {budget:.3g}")
    inner = c * 2.0 ** (-d * (m + 1) / 2)
    outer = c * 2.0 ** (-d * m / 2)
    p, _ = _l1_ball(k, ell)
    p = p.astype(np.int64)
    # coarse filter in chunks, then exact recomputation
    keep = []
    for s in range(0, p.shape[0], 1 << 20):
        q = p[s:s + (1 << 20)]
        tn = torus_distance(_word_values(q, V), 0.0)
        keep.append(s + np.nonzero((tn > inner * (1 - 1e-9)) & (tn <= outer * (1 + 1e-9)))[0])
    p = p[np.concatenate(keep)] if keep else p[:0]
    tn = torus_distance(_word_values(p, V), 0.0)
    ok = (tn > inner) & (tn <= outer)
    p, tn = p[ok], tn[ok]
    order = np.lexsort(p.T[::-1])
    p, tn = p[order], tn[order]
    vals = _word_values(p, V)
    vals = vals - np.rint(vals)
    if p.shape[0] == 0:
        cov = math.inf
    else:
        rng = np.random.default_rng(seed)
        u = rng.normal(size=(samples, N))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = (inner ** N + rng.random(samples) * (outer ** N - inner ** N)) ** (1.0 / N)
        tg = u * rad[:, None]
        dist, _ = cKDTree(_wrap01(vals), boxsize=1.0).query(_wrap01(tg))
        cov = float(np.max(dist))
    return DyadicNet(m, float(c), float(d), p, vals, tn, V, cov)


def k0_for(eta: float, N: int) -> tuple[int, float]:
    """``K0 = ceil(2N / eta^2) + 1`` and the dimension target ``d = K0 / N`` (so 2/d < eta^2)."""
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    x = 2 * N / eta ** 2
    base = round(x) if abs(x - round(x)) < 1e-9 else math.ceil(x)
    K0 = int(base) + 1
    return K0, K0 / N
