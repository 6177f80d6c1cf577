"""Hyperbolic toolkit: Franks conjugacy, rotation vectors, oscillation,
Fourier-decay diagnostics, Lyapunov exponents and invariant splittings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .algebra import GroupWord, IntMatrix
from .errors import (FoliationNotInvariant, NoHyperbolicity, NotContractive, NotInvertible)
from .fitting import LogLogFit, loglog_fit
from .torus import (FoliationField, FourierMap, _PointEvaluator, _extract, _spectrum, _wrap,
                    default_grid, derivative_sups, grid_points, inverse_points, lift_track,
                    torus_distance)

HYPERBOLIC_MARGIN = 1e-9


# ---------------------------------------------------------------------------
# spectral data


def _matrix(M) -> np.ndarray:
    if isinstance(M, IntMatrix):
        return M.entries
    if isinstance(M, FourierMap):
        return M.linear
    return np.asarray(M)


@dataclass(frozen=True)
class SpectralSplit:
    """Stable/unstable eigenvalues of one matrix and the matching projectors.

    Stable eigenvalues are ordered from the weakest (closest to the unit
    circle) to the strongest contraction, unstable ones from the weakest to
    the strongest expansion.
    """

    matrix: np.ndarray
    eig: tuple
    stable: np.ndarray
    unstable: np.ndarray
    proj_s: np.ndarray
    proj_u: np.ndarray
    basis_s: np.ndarray
    basis_u: np.ndarray

    @classmethod
    def of(cls, M) -> "SpectralSplit":
        M = np.asarray(_matrix(M), float)
        w, V = np.linalg.eig(M)
        mod = np.abs(w)
        if np.any(np.abs(mod - 1.0) <= HYPERBOLIC_MARGIN):
            raise NoHyperbolicity("matrix has an eigenvalue on the unit circle")
        s, u = mod < 1, mod > 1
        Vinv = np.linalg.inv(V)
        Ps = np.real(V[:, s] @ Vinv[s])
        Pu = np.real(V[:, u] @ Vinv[u])
        ws = w[s][np.argsort(-mod[s], kind="stable")]
        wu = w[u][np.argsort(mod[u], kind="stable")]
        return cls(M, (w, V, Vinv, s, u), ws, wu, Ps, Pu,
                   _range_basis(Ps, int(s.sum())), _range_basis(Pu, int(u.sum())))

    def power(self, n: int, part: str) -> np.ndarray:
        """``M^n`` restricted to the stable ("s") or unstable ("u") eigenspace.

        Built from the eigendecomposition: forming ``M^n P`` by matrix powers
        loses all accuracy once the other eigenspace dominates ``M^n``.
        """
        w, V, Vinv, s, u = self.eig
        sel = s if part == "s" else u
        return np.real((V[:, sel] * w[sel] ** n) @ Vinv[sel])

    @property
    def contraction(self) -> float:
        """Worst one-step contraction rate of the split geometric series."""
        return float(max(1.0 / np.min(np.abs(self.unstable)), np.max(np.abs(self.stable))))

    @property
    def condition(self) -> float:
        """Norm of the projectors, the cost of splitting a vector."""
        return float(max(np.linalg.norm(self.proj_s, 2), np.linalg.norm(self.proj_u, 2)))


def _range_basis(P: np.ndarray, r: int) -> np.ndarray:
    U, _, _ = np.linalg.svd(P)
    return U[:, :r]


@dataclass(frozen=True)
class SpectralData:
    A: SpectralSplit
    B: SpectralSplit

    @classmethod
    def of(cls, Abar, Bbar=None) -> "SpectralData":
        sa = SpectralSplit.of(Abar)
        return cls(sa, sa if Bbar is None else SpectralSplit.of(Bbar))


def cslow_bound(spec: SpectralData) -> float:
    """Supremum of admissible slow-oscillation exponents c.

    ``min(ln|lam_1^u| / ln|mu_max^u|, ln|lam_1^s| / ln|mu_min^s|)`` where
    lam_1 are the weakest eigenvalues of A and mu the extreme ones of B.
    """
    a, b = spec.A, spec.B
    up = math.log(abs(a.unstable[0])) / math.log(abs(b.unstable[-1]))
    down = math.log(abs(a.stable[0])) / math.log(abs(b.stable[-1]))
    return float(min(up, down))


# ---------------------------------------------------------------------------
# Franks conjugacy


def _torus_step(f: FourierMap, Y: np.ndarray) -> np.ndarray:
    return _wrap(f(Y))


def _torus_back(f: FourierMap, Y: np.ndarray) -> np.ndarray:
    return _wrap(inverse_points(f, Y))


class FranksConjugacy:
    """``h = id + u`` with ``A_bar u(x) - u(A x) = A(x) - A_bar x``, evaluated pointwise.

    The unstable component of u is the forward series
    ``sum_{j>=0} A_bar^{-(j+1)} P_u a(A^j x)`` and the stable one the backward
    series ``-sum_{j>=1} A_bar^{j-1} P_s a(A^{-j} x)``, both truncated once
    the remaining terms drop below ``eps``.
    """

    def __init__(self, A: FourierMap, split: SpectralSplit, contraction: float, eps: float = 1e-17):
        self.A = A
        self.split = split
        self.contraction = contraction
        self.periodic = A.periodic_part(include_constant=True)
        amp = max(derivative_sups(A.coeffs, 0, None, A.constant)[0], np.finfo(float).tiny)
        self.terms = max(1, int(math.ceil(math.log(eps / amp) / math.log(split.contraction))) + 1)
        self._fwd = [split.power(-(j + 1), "u") for j in range(self.terms)]
        self._bwd = [split.power(j - 1, "s") for j in range(1, self.terms + 1)]

    @property
    def dim(self) -> int:
        return self.A.dim

    def displacement(self, X) -> np.ndarray:
        """Periodic part u at points X, shape (P, N)."""
        X = np.asarray(X, float).reshape(-1, self.dim)
        if self.A.is_affine and not np.any(self.A.constant):
            return np.zeros_like(X)
        u = np.zeros_like(X)
        Y = _wrap(X)
        for M in self._fwd:
            u += self.periodic(Y) @ M.T
            Y = _torus_step(self.A, Y)
        Y = _wrap(X)
        for M in self._bwd:
            Y = _torus_back(self.A, Y)
            u -= self.periodic(Y) @ M.T
        return u

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        out = X.reshape(-1, self.dim) + self.displacement(X)
        return out[0] if X.ndim == 1 else out

    def residual(self, X) -> float:
        """``max dist(h(A x), A_bar h(x))`` at the points X."""
        X = np.asarray(X, float).reshape(-1, self.dim)
        lhs = self(self.A(X))
        rhs = self(X) @ self.split.matrix.T
        return float(np.max(torus_distance(lhs, rhs)))

    def to_fourier(self, G: int | None = None, degree: int | None = None) -> FourierMap:
        """Fourier projection of h from its values on the G-grid."""
        G = default_grid(self.dim) if G is None else G
        X = grid_points(self.dim, G)
        u = self.displacement(X)
        return FourierMap.from_grid_values(np.eye(self.dim, dtype=int),
                                           u.T.reshape((self.dim,) + (G,) * self.dim), degree)


def franks_conjugacy(A: FourierMap, Abar=None, tol: float = 1e-8, samples: int = 1024,
                     seed: int = 0) -> FranksConjugacy:
    """Topological conjugacy h (homotopic to id) with ``h A = A_bar h``.

    Contractivity of the split fixed point is checked through
    ``kappa + delta * cond < 1`` where kappa is the linear contraction rate,
    delta the sup of ``||D(A - A_bar)||`` and cond the projector norm.
    Raises NotContractive otherwise and NotInvertible when the conjugacy
    residual exceeds tol.
    """
    Ab = A.linear if Abar is None else np.asarray(_matrix(Abar))
    if not np.array_equal(Ab, A.linear):
        raise ValueError("A must be homotopic to A_bar")
    split = SpectralSplit.of(Ab)
    delta = derivative_sups(A.coeffs, 1)[1] if not A.is_affine else 0.0
    kappa = split.contraction + delta * split.condition
    if kappa >= 1.0:
        raise NotContractive(f"split fixed point is not contractive (factor {kappa:.3f})")
    h = FranksConjugacy(A, split, kappa)
    rng = np.random.default_rng(seed)
    r = h.residual(rng.random((samples, A.dim)))
    if r > tol:
        raise NotInvertible(f"conjugacy residual {r:.3e} exceeds {tol:.1e}")
    return h


class C1Obstruction(NamedTuple):
    fixed_point: np.ndarray
    trace: float
    linear_trace: float
    determinant: float
    obstructed: bool


def fixed_point_trace(A: FourierMap, x0=None, tol: float = 1e-10, max_iter: int = 50) -> C1Obstruction:
    """Derivative trace at a fixed point of A, compared with the linear part.

    A C^1 conjugacy to A_bar preserves the derivative at fixed points up to
    similarity, so a trace mismatch rules it out.
    """
    x = np.zeros(A.dim) if x0 is None else np.asarray(x0, float).copy()
    I = np.eye(A.dim)
    for _ in range(max_iter):
        r = A(x) - x
        r -= np.rint(r)
        if np.max(np.abs(r)) < 1e-15:
            break
        x = x - np.linalg.solve(A.jacobian(x) - I, r)
    else:
        r = A(x) - x
        if np.max(np.abs(r - np.rint(r))) > 1e-12:
            raise NotInvertible("fixed-point Newton iteration did not converge")
    D = A.jacobian(x)
    tr = float(np.trace(D))
    lin = float(np.trace(A.linear))
    return C1Obstruction(_wrap(x), tr, lin, float(np.linalg.det(D)), abs(tr - lin) > tol)


# ---------------------------------------------------------------------------
# rotation vectors and oscillation


class MeasureEstimate(NamedTuple):
    base_point: np.ndarray
    length: int
    rotation: np.ndarray
    error: float


def rotation_vector(T: FourierMap, x0=None, orbit_len: int = 100_000) -> MeasureEstimate:
    """Birkhoff average of lifted displacements along one orbit.

    The error bar is the largest deviation of the running average from the
    final value over the last quarter of the orbit.
    """
    if not np.array_equal(T.linear, np.eye(T.dim, dtype=int)):
        raise ValueError("rotation vectors need a map homotopic to the identity")
    x0 = np.zeros(T.dim) if x0 is None else np.asarray(x0, float)
    orbit = lift_track(T, x0, orbit_len)
    n = np.arange(1, orbit_len + 1)[:, None]
    avg = (orbit - x0) / n
    rho = avg[-1]
    tail = avg[3 * orbit_len // 4:]
    return MeasureEstimate(x0, orbit_len, rho, float(np.max(np.abs(tail - rho))))


class _Family:
    """Pointwise action ``p -> T^p`` of commuting generators (lifted)."""

    def __init__(self, maps: Sequence[FourierMap]):
        self.maps = list(maps)

    def apply(self, p, X: np.ndarray, jacobian: bool = False):
        X = np.asarray(X, float)
        D = np.broadcast_to(np.eye(X.shape[1]), (X.shape[0],) + (X.shape[1],) * 2).copy() if jacobian else None
        for T, c in zip(self.maps, np.asarray(p, int)):
            for _ in range(abs(int(c))):
                if c > 0:
                    if jacobian:
                        D = T.jacobian(X) @ D
                    X = T(X)
                else:
                    X = inverse_points(T, X)
                    if jacobian:
                        D = np.linalg.solve(T.jacobian(X), D)
        return (X, D) if jacobian else X


class OscillationReport(NamedTuple):
    p: np.ndarray
    p_norm: np.ndarray
    osc: np.ndarray
    osc_upper: np.ndarray
    fit: LogLogFit
    bound: float | None


def oscillation(T_family, p_list, grid: int = 64, spectral: SpectralData | None = None) -> OscillationReport:
    """Grid oscillation of ``T^p`` for each p, with a Lipschitz upper pad.

    Oscillation is taken component by component: for each coordinate the
    spread ``max_x - min_x`` of the lifted displacement, then the largest
    spread over coordinates.
    """
    fam = _Family(T_family)
    dim = fam.maps[0].dim
    X = grid_points(dim, grid)
    P = np.atleast_2d(np.asarray(p_list, int))
    pad_scale = math.sqrt(dim) / grid
    osc, upper = [], []
    for p in P:
        Y, D = fam.apply(p, X, jacobian=True)
        disp = Y - X
        o = float(np.max(np.ptp(disp, axis=0)))
        lip = float(np.max(np.linalg.norm(D - np.eye(dim), ord=2, axis=(1, 2))))
        osc.append(o)
        upper.append(o + lip * pad_scale)
    norms = np.linalg.norm(P, axis=1)
    osc = np.asarray(osc)
    fit = loglog_fit(norms, osc)
    if np.max(osc) < 1e-12:
        fit = LogLogFit(float("nan"), float("nan"), float("nan"), True)
    bound = cslow_bound(spectral) if spectral is not None else None
    return OscillationReport(P, norms, osc, np.asarray(upper), fit, bound)


# ---------------------------------------------------------------------------
# Fourier decay of R^p = h T^p h^-1


class DecayRow(NamedTuple):
    p: tuple
    max_mode: float
    constant: np.ndarray
    relation_residual: float


def _displacement_modes(fam: _Family, h: FourierMap, p, X: np.ndarray, G: int, J: int) -> np.ndarray:
    Y = inverse_points(h, X)
    R = h(fam.apply(p, Y))
    disp = R - X
    return _extract(_spectrum(disp.T.reshape((h.dim,) + (G,) * h.dim)), J)


def fourier_decay_diagnostic(T_family, h: FourierMap, Abar, Bbar, modes_up_to: int, p_list,
                             grid: int | None = None, check_relation: bool = True) -> list[DecayRow]:
    """Nonzero Fourier modes of ``h T^p h^{-1} - id`` for each p.

    With ``check_relation`` the modes are also compared with the group
    relation ``c_k(p) = A_bar^{-1} c_{A_bar^{-T} k}(B_bar p)`` over the
    modes for which both sides are available.
    """
    dim = h.dim
    G = grid or max(32, 1 << (4 * modes_up_to + 3).bit_length())
    J = min(modes_up_to, G // 2 - 1)
    fam = _Family(T_family)
    X = grid_points(dim, G)
    Ab = np.asarray(_matrix(Abar), float)
    Bb = np.asarray(_matrix(Bbar), int)
    Ainv = np.linalg.inv(Ab)
    centre = (J,) * dim
    rows = []
    for p in np.atleast_2d(np.asarray(p_list, int)):
        c = _displacement_modes(fam, h, p, X, G, J)
        mag = np.sqrt(np.sum(np.abs(c) ** 2, axis=0))
        const = c[(slice(None),) + centre].real.copy()
        mag[centre] = 0.0
        rel = math.nan
        if check_relation:
            cB = _displacement_modes(fam, h, Bb @ p, X, G, J)
            AinvT = np.rint(np.linalg.inv(Ab).T).astype(int)
            rel = 0.0
            for k in np.ndindex(*(2 * J + 1,) * dim):
                kk = np.asarray(k) - J
                if not np.any(kk):
                    continue
                m = AinvT @ kk
                if np.max(np.abs(m)) > J:
                    continue
                diff = c[(slice(None),) + k] - Ainv @ cB[(slice(None),) + tuple(m + J)]
                rel = max(rel, float(np.linalg.norm(diff)))
        rows.append(DecayRow(tuple(int(v) for v in p), float(np.max(mag)), const, rel))
    return rows


# ---------------------------------------------------------------------------
# Lyapunov exponents


def _frac_orbit(f: FourierMap, x0, steps: int) -> np.ndarray:
    ev = _PointEvaluator(f)
    out = np.empty((steps, f.dim))
    u = _wrap(np.asarray(x0, float).reshape(f.dim))
    for s in range(steps):
        out[s] = u
        y = ev(u)
        u = y - np.floor(y)
    return out


def _qr_exponents(jacs: np.ndarray) -> np.ndarray:
    N = jacs.shape[1]
    Q = np.eye(N)
    acc = np.zeros(N)
    for Jm in jacs:
        Q, R = np.linalg.qr(Jm @ Q)
        acc += np.log(np.abs(np.diag(R)))
    return acc


class LyapunovEstimate(NamedTuple):
    exponents: np.ndarray
    error: float
    orbit_len: int


def lyapunov_exponents(T: FourierMap, x0=None, orbit_len: int = 100_000) -> LyapunovEstimate:
    """Exponents by QR re-orthonormalisation at every step, sorted descending.

    The error bar is the largest difference between the two half-orbit
    estimates.
    """
    if orbit_len < 1000:
        raise ValueError("orbit length must be at least 1000")
    x0 = np.full(T.dim, 0.1234567) if x0 is None else np.asarray(x0, float)
    pts = _frac_orbit(T, x0, orbit_len)
    jacs = T.jacobian(pts)
    half = orbit_len // 2
    a = _qr_exponents(jacs[:half])
    b = _qr_exponents(jacs[half:])
    lam = np.sort((a + b) / orbit_len)[::-1]
    err = float(np.max(np.abs(np.sort(a / half)[::-1] - np.sort(b / (orbit_len - half))[::-1])))
    return LyapunovEstimate(lam, err, orbit_len)


# ---------------------------------------------------------------------------
# splittings


@dataclass(frozen=True)
class SplittingEstimate:
    points: np.ndarray
    unstable: np.ndarray  # (P, N, k) orthonormal bases, strongest direction first
    stable: np.ndarray    # (P, N, l)
    growth_u: float
    growth_s: float
    converged_angle: float
    equivariance: float


def _subspace_angle(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Largest principal angle between the column spans (batched)."""
    s = np.linalg.svd(np.swapaxes(U, -1, -2) @ V, compute_uv=False)
    return np.arccos(np.clip(np.min(s, axis=-1), -1.0, 1.0))


def _push(A: FourierMap, X: np.ndarray, basis: np.ndarray, iters: int, forward: bool):
    """Transport a frame to X along an orbit segment of length iters.

    Forward: start at A^{-iters} X and push by DA.  Backward: start at
    A^{iters} X and pull back by DA^{-1}.  Returns the frame at X, the
    change during the last step and the mean log growth per step.
    """
    P = X.shape[0]
    orbit = [X]
    Y = X
    for _ in range(iters):
        Y = _wrap(inverse_points(A, Y)) if forward else _wrap(A(Y))
        orbit.append(Y)
    Q = np.broadcast_to(basis, (P,) + basis.shape).copy()
    growth = np.zeros(P)
    prev = Q
    for Y in reversed(orbit[1:]):
        if forward:
            W = A.jacobian(Y) @ Q
        else:
            W = np.linalg.solve(A.jacobian(_wrap(inverse_points(A, Y))), Q)
        prev = Q
        Q, R = np.linalg.qr(W)
        growth += np.sum(np.log(np.abs(np.diagonal(R, axis1=1, axis2=2))), axis=1)
    return Q, prev, growth / max(iters, 1)


def splitting_estimate(A: FourierMap, iters: int = 40, grid: int = 32, points=None,
                       tol: float = 1e-6) -> SplittingEstimate:
    """Unstable and stable directions of A by power iteration of DA.

    The unstable frame is pushed forward from ``A^{-iters} x``, the stable
    one backward from ``A^{iters} x``; both start from the linear
    eigenspaces.  Raises NoHyperbolicity if the linear part is not
    hyperbolic, the growth rates do not separate or the frames fail to
    settle within ``tol``.
    """
    split = SpectralSplit.of(A.linear)
    dim = A.dim
    X = grid_points(dim, grid) if points is None else np.asarray(points, float).reshape(-1, dim)
    Eu, prev_u, gu = _push(A, X, split.basis_u, iters, True)
    Es, prev_s, gs = _push(A, X, split.basis_s, iters, False)
    k = split.basis_u.shape[1]
    gu_mean = float(np.min(gu)) / k
    gs_mean = float(np.min(gs)) / (dim - k)
    if gu_mean <= 1e-6 or gs_mean <= 1e-6:
        raise NoHyperbolicity(f"no exponential growth separation (rates {gu_mean:.2e}, {gs_mean:.2e})")
    change = float(max(np.max(_subspace_angle(Eu, prev_u)), np.max(_subspace_angle(Es, prev_s))))
    # equivariance: DA(x) E(x) against E(A x), both estimated
    AX = _wrap(A(X))
    Eu2, _, _ = _push(A, AX, split.basis_u, iters, True)
    Es2, _, _ = _push(A, AX, split.basis_s, iters, False)
    J = A.jacobian(X)
    imu, _ = np.linalg.qr(J @ Eu)
    ims, _ = np.linalg.qr(J @ Es)
    equi = float(max(np.max(_subspace_angle(imu, Eu2)), np.max(_subspace_angle(ims, Es2))))
    if equi > tol:
        raise NoHyperbolicity(f"splitting did not converge (equivariance defect {equi:.2e})")
    return SplittingEstimate(X, Eu, Es, gu_mean, gs_mean, change, equi)


# ---------------------------------------------------------------------------
# leafwise cocycle


def _letters(word: GroupWord) -> list[tuple[int, int]]:
    out = []
    for i, c in enumerate(word.coefficients):
        out.extend([(i, 1 if c > 0 else -1)] * abs(int(c)))
    return out


def foliation_defect(T_family, F: FoliationField) -> float:
    """Largest angle between ``DT_i v(x)`` and ``v(T_i x)`` over grid points."""
    X = F.points()
    V = F.at(X)
    worst = 0.0
    for T in T_family:
        W = np.einsum("pij,pj->pi", T.jacobian(X), V)
        Vt = F.at(T(X))
        cos = np.abs(np.sum(W * Vt, axis=1)) / (np.linalg.norm(W, axis=1) * np.linalg.norm(Vt, axis=1))
        worst = max(worst, float(np.max(np.arccos(np.clip(cos, -1.0, 1.0)))))
    return worst


def cocycle_sum(T_family, word: GroupWord, F: FoliationField, points=None) -> np.ndarray:
    """Telescoping sum of ``log(||D T_i v(x_j)|| / ||v(x_j)||)`` along the word at each point."""
    maps = list(T_family)
    X = F.points() if points is None else np.asarray(points, float)
    total = np.zeros(X.shape[0])
    for i, s in _letters(word):
        T = maps[i]
        V = F.at(X)
        if s > 0:
            W = np.einsum("pij,pj->pi", T.jacobian(X), V)
            X = T(X)
        else:
            Y = inverse_points(T, X)
            W = np.linalg.solve(T.jacobian(Y), V[..., None])[..., 0]
            X = Y
        total += np.log(np.linalg.norm(W, axis=1) / np.linalg.norm(V, axis=1))
    return total


def cocycle_log_norm(T_family, word: GroupWord, F: FoliationField, angle_tol: float = 1e-4) -> float:
    """Grid sup of the absolute leafwise log-derivative of ``T_word``.

    Raises FoliationNotInvariant when some generator moves the field by
    more than ``angle_tol``.
    """
    defect = foliation_defect(T_family, F)
    if defect > angle_tol:
        raise FoliationNotInvariant(f"field is not invariant (angle defect {defect:.2e})")
    return float(np.max(np.abs(cocycle_sum(T_family, word, F))))
