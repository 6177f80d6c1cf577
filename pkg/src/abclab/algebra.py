"""Affine actions of abelian-by-cyclic groups on the torus.

An affine action is given by a hyperbolic-or-not integer matrix ``A`` acting
linearly, a second integer matrix ``B`` encoding the group presentation and
rotation matrices ``rho_1..rho_K`` whose columns are translation vectors.
The presentation relations hold exactly when ``A rho = rho B`` modulo
integer matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import Derogatory, DimensionMismatch, NotCertified
from .torus import FourierMap, inverse_points, torus_distance

HYPERBOLIC_MARGIN = 1e-9
FINITE_ORDER_BOUND = 12
COMMUTE_TOL = 1e-9


def _int_det(M: np.ndarray) -> int:
    """Exact integer determinant by fraction-free (Bareiss) elimination."""
    a = [[int(v) for v in row] for row in M]
    n = len(a)
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1] if n else 1


@dataclass(frozen=True)
class IntMatrix:
    """An element of SL(N, Z) with cached spectral data."""

    entries: np.ndarray
    order_bound: int = FINITE_ORDER_BOUND

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("matrix must be square")
        if not np.all(e == np.rint(e)):
            raise ValueError("matrix must have integer entries")
        e = np.array(np.rint(e), dtype=np.int64)
        if _int_det(e) != 1:
            raise ValueError(f"determinant is {_int_det(e)}, expected 1")
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        ev = np.linalg.eigvals(self.entries.astype(float))
        return ev[np.argsort(np.abs(ev), kind="stable")]

    @cached_property
    def is_hyperbolic(self) -> bool:
        return bool(np.all(np.abs(np.abs(self.eigenvalues) - 1.0) > HYPERBOLIC_MARGIN))

    @cached_property
    def finite_order(self) -> int | None:
        """Smallest k <= order_bound with A^k = I, or None."""
        if self.is_hyperbolic:
            return None
        eye = np.eye(self.dim, dtype=np.int64)
        P = eye.copy()
        for k in range(1, self.order_bound + 1):
            P = P @ self.entries
            if np.array_equal(P, eye):
                return k
        return None

    @cached_property
    def is_nonderogatory(self) -> bool:
        return _krylov_rank(self.entries.astype(float)) == self.dim

    def __array__(self, dtype=None, copy=None):
        return self.entries.astype(dtype) if dtype is not None else self.entries.copy()


def as_int_matrix(A) -> IntMatrix:
    return A if isinstance(A, IntMatrix) else IntMatrix(np.asarray(A))


def _krylov_rank(A: np.ndarray) -> int:
    N = A.shape[0]
    powers = [np.eye(N)]
    for _ in range(N - 1):
        powers.append(powers[-1] @ A)
    K = np.stack([p.ravel() / max(np.linalg.norm(p), 1.0) for p in powers], axis=1)
    s = np.linalg.svd(K, compute_uv=False)
    return int(np.sum(s > 1e-10 * s[0]))


def _reduce_half_open(r: np.ndarray) -> np.ndarray:
    """Reduce entries into (-1/2, 1/2]."""
    return r - np.ceil(r - 0.5)


class CommutationCheck(NamedTuple):
    residue: np.ndarray
    integer_part: np.ndarray
    max_residue: float
    passed: bool


def check_commutation(A, B, rho, tol: float = COMMUTE_TOL) -> CommutationCheck:
    """Residue of ``A rho - rho B`` reduced entrywise into (-1/2, 1/2]."""
    A = np.asarray(as_int_matrix(A).entries, float)
    B = np.asarray(as_int_matrix(B).entries, float)
    rho = np.asarray(rho, float)
    if A.shape != B.shape or rho.shape != A.shape:
        raise DimensionMismatch("A, B and rho must all be N x N")
    raw = A @ rho - rho @ B
    res = _reduce_half_open(raw)
    P = np.rint(raw - res).astype(np.int64)
    m = float(np.max(np.abs(res))) if res.size else 0.0
    return CommutationCheck(res, P, m, m <= tol)


@dataclass(frozen=True)
class RotationMatrix:
    """Rotation matrix with its audited commutation residue.

    ``values`` holds the representative given by the caller (columns are the
    translation vectors); ``integer_part`` records the integer matrix P with
    ``A rho = rho B + P`` up to ``residue``.
    """

    values: np.ndarray
    residue: np.ndarray
    integer_part: np.ndarray
    certified: bool

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def columns(self) -> np.ndarray:
        """Translation vectors as rows, shape (N, N)."""
        return self.values.T.copy()


def certify_rotation(A, B, rho, tol: float = COMMUTE_TOL) -> RotationMatrix:
    chk = check_commutation(A, B, rho, tol)
    v = np.array(rho, float)
    v.flags.writeable = False
    return RotationMatrix(v, chk.residue, chk.integer_part, chk.passed)


def rho_matrix(a, A) -> np.ndarray:
    """``sum_i a_i A^(i-1)``, the general element of the commutant of a nonderogatory A."""
    basis = commutant_basis(A)
    a = np.asarray(a, float)
    if a.size != len(basis):
        raise DimensionMismatch(f"need {len(basis)} coefficients")
    return sum(ai * b for ai, b in zip(a, basis))


@dataclass(frozen=True)
class AffineABCAction:
    """Affine action: ``g0 -> A x`` and ``g_{i,k} -> x + rho_k[:, i]``."""

    A: IntMatrix
    B: IntMatrix
    rhos: tuple = field(default_factory=tuple)

    @classmethod
    def build(cls, A, B, rhos, tol: float = COMMUTE_TOL) -> "AffineABCAction":
        """Assemble and certify; raises NotCertified when a rotation matrix fails."""
        A, B = as_int_matrix(A), as_int_matrix(B)
        if A.dim != B.dim:
            raise DimensionMismatch("A and B must have the same size")
        if isinstance(rhos, np.ndarray) and rhos.ndim == 2:
            rhos = [rhos]
        certs = []
        for k, r in enumerate(rhos):
            rm = r if isinstance(r, RotationMatrix) else certify_rotation(A, B, r, tol)
            if not rm.certified:
                raise NotCertified(
                    f"rotation matrix {k} fails A rho = rho B mod Z (residue {np.max(np.abs(rm.residue)):.3e})")
            certs.append(rm)
        if not certs:
            raise ValueError("at least one rotation matrix is required")
        return cls(A, B, tuple(certs))

    @property
    def N(self) -> int:
        return self.A.dim

    @property
    def K(self) -> int:
        return len(self.rhos)

    def rotation_vectors(self) -> np.ndarray:
        """All translation vectors, shape (K*N, N), ordered block by block."""
        return np.concatenate([r.values.T for r in self.rhos], axis=0)

    def anosov_generator(self) -> FourierMap:
        return FourierMap.linear_map(self.A.entries)

    def translations(self) -> list[list[FourierMap]]:
        return [[FourierMap.translation(r.values[:, i]) for i in range(self.N)] for r in self.rhos]

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "K": self.K,
            "A": self.A.entries.tolist(),
            "B": self.B.entries.tolist(),
            "rho": [r.values.tolist() for r in self.rhos],
        }


def action_from_dict(d: dict, tol: float = COMMUTE_TOL) -> AffineABCAction:
    N, K = int(d["N"]), int(d["K"])
    A = np.asarray(d["A"])
    B = np.asarray(d["B"])
    rho = np.asarray(d["rho"], float)
    if rho.ndim == 2:
        rho = rho[None]
    if A.shape != (N, N) or B.shape != (N, N) or rho.shape != (K, N, N):
        raise DimensionMismatch("action file shapes do not match N and K")
    return AffineABCAction.build(A, B, list(rho), tol)


def load_action(path, tol: float = COMMUTE_TOL) -> AffineABCAction:
    with open(path) as fh:
        return action_from_dict(json.load(fh), tol)


def dump_action(action: AffineABCAction, path) -> None:
    with open(path, "w") as fh:
        json.dump(action.to_dict(), fh, indent=1)


@dataclass(frozen=True)
class GroupWord:
    """Element ``sum_i p_i v_i`` of the translation subgroup.

    ``generators`` holds the translation vectors as rows (m, N).
    """

    coefficients: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.coefficients, dtype=np.int64).ravel()
        g = np.asarray(self.generators, float)
        if g.ndim != 2 or g.shape[0] != p.size:
            raise DimensionMismatch("one coefficient per generator is required")
        object.__setattr__(self, "coefficients", p)
        object.__setattr__(self, "generators", g)

    @property
    def word_norm(self) -> int:
        return int(np.sum(np.abs(self.coefficients)))

    @property
    def value(self) -> np.ndarray:
        v = self.coefficients @ self.generators
        return v - np.floor(v)

    @property
    def torus_norm(self) -> float:
        return float(torus_distance(self.coefficients @ self.generators, 0.0))


# ---------------------------------------------------------------------------
# linear algebra


def commutant_basis(A) -> list[np.ndarray]:
    """``[I, A, ..., A^(N-1)]``; raises Derogatory when these are dependent."""
    M = np.asarray(as_int_matrix(A).entries if not isinstance(A, np.ndarray) else A, float)
    N = M.shape[0]
    if _krylov_rank(M) < N:
        raise Derogatory("matrix is derogatory; its commutant is larger than the polynomial algebra")
    out = [np.eye(N)]
    for _ in range(N - 1):
        out.append(out[-1] @ M)
    return out


class SylvesterSolution(NamedTuple):
    particular: np.ndarray | None
    solvable: bool
    residual: float
    homogeneous_basis: list


def solve_sylvester_mod(A, B, P, rank_tol: float = 1e-8, solve_tol: float = 1e-8) -> SylvesterSolution:
    """Solve ``A X - X B = P`` through the Kronecker system ``(I kron A - B^T kron I) vec X``.

    The null space of the operator is returned as a list of matrices; an
    unsolvable right-hand side is reported with ``solvable=False``.
    """
    A = np.asarray(A.entries if isinstance(A, IntMatrix) else A, float)
    B = np.asarray(B.entries if isinstance(B, IntMatrix) else B, float)
    P = np.asarray(P, float)
    if A.shape != B.shape or P.shape != A.shape:
        raise DimensionMismatch("A, B and P must be N x N")
    N = A.shape[0]
    I = np.eye(N)
    L = np.kron(I, A) - np.kron(B.T, I)
    U, s, Vt = np.linalg.svd(L)
    cut = rank_tol * (s[0] if s.size and s[0] > 0 else 1.0)
    rank = int(np.sum(s > cut))
    rhs = P.ravel(order="F")
    coef = (U[:, :rank].T @ rhs) / s[:rank]
    x = Vt[:rank].T @ coef
    X = x.reshape(N, N, order="F")
    resid = float(np.max(np.abs(A @ X - X @ B - P))) if N else 0.0
    basis = [Vt[i].reshape(N, N, order="F") for i in range(rank, N * N)]
    ok = resid <= solve_tol
    return SylvesterSolution(X if ok else None, ok, resid, basis)


# ---------------------------------------------------------------------------
# faithfulness


class FaithfulnessReport(NamedTuple):
    faithful: bool
    relation: np.ndarray | None
    bound_searched: int
    finite_order: int | None


def _box(m: int, r: int) -> np.ndarray:
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)
    ax = np.arange(-r, r + 1)
    return np.stack(np.meshgrid(*([ax] * m), indexing="ij"), axis=-1).reshape(-1, m)


def _relation_key(p: np.ndarray):
    return (int(np.sum(np.abs(p))), tuple(-abs(int(v)) for v in p), tuple(-int(v) for v in p))


def _relations_in_box(V: np.ndarray, r: int, tol: float, max_pairs: int = 200000):
    """Integer p with |p|_inf <= r and ``p @ V`` within tol of Z^N (meet in the middle)."""
    m = V.shape[0]
    ma = m // 2
    Pa, Pb = _box(ma, r), _box(m - ma, r)
    va = Pa @ V[:ma]
    vb = Pb @ V[ma:]
    ta = np.mod(-va[:, 0], 1.0)
    tb = np.mod(vb[:, 0], 1.0)
    order = np.argsort(tb, kind="stable")
    tb_s = tb[order]
    found = []
    for shift in (-1.0, 0.0, 1.0):
        lo = np.searchsorted(tb_s, ta + shift - tol, side="left")
        hi = np.searchsorted(tb_s, ta + shift + tol, side="right")
        hits = np.nonzero(hi > lo)[0]
        for i in hits:
            for j in order[lo[i]:hi[i]]:
                p = np.concatenate([Pa[i], Pb[j]])
                if not p.any():
                    continue
                if torus_distance(va[i] + vb[j], 0.0) <= tol:
                    found.append(p)
                if len(found) >= max_pairs:
                    return found
    return found


def check_faithful(action, denom_bound: int, tol: float = 1e-9, budget: int = 2_000_000) -> FaithfulnessReport:
    """Bounded search for integer relations among the translation vectors.

    Relations ``sum_i p_i v_i = 0 mod Z^N`` with ``|p|_inf <= denom_bound`` are
    searched by meet in the middle over doubling radii; each half of the
    search is limited to ``budget`` candidates, and the bound actually
    covered is reported.  The smallest relation found (l1 norm, then earlier
    nonzero entries) is returned.
    """
    if isinstance(action, AffineABCAction):
        V = action.rotation_vectors()
        order = action.A.finite_order
    else:
        V = np.atleast_2d(np.asarray(action, float))
        order = None
    m = V.shape[0]
    half = m - m // 2
    cap = int((budget ** (1.0 / half) - 1) // 2) if half > 0 else denom_bound
    bound = max(1, min(int(denom_bound), cap))
    r = 1
    while True:
        rr = min(r, bound)
        rel = _relations_in_box(V, rr, tol)
        if rel:
            best = min(rel, key=_relation_key)
            if best[np.nonzero(best)[0][0]] < 0:
                best = -best
            return FaithfulnessReport(False, best, rr, order)
        if rr >= bound:
            break
        r *= 2
    return FaithfulnessReport(order is None, None, bound, order)


# ---------------------------------------------------------------------------
# relations


def _apply_power(f: FourierMap, finv, b: int, X: np.ndarray) -> np.ndarray:
    for _ in range(abs(int(b))):
        X = f(X) if b > 0 else finv(X)
    return X


def relation_residual(g0: FourierMap, translations, B, points: np.ndarray) -> float:
    """Max torus distance between both sides of every presentation relation.

    ``translations[k][i]`` is the image of ``g_{i,k}``.  Checks
    ``g0 g_{i,k} = (prod_j g_{j,k}^{b_ji}) g0`` and pairwise commutation of all
    translation generators at the given points.
    """
    B = np.asarray(B.entries if isinstance(B, IntMatrix) else B)
    gens = [g for block in translations for g in block]
    inv = {}

    def inverse(f):
        key = id(f)
        if key not in inv:
            if f.is_affine:
                Minv = np.rint(np.linalg.inv(f.linear)).astype(int)
                fi = FourierMap(Minv, -(Minv @ f.constant))
                inv[key] = fi.evaluate
            else:
                inv[key] = lambda X, f=f: inverse_points(f, X)
        return inv[key]

    worst = 0.0
    for block in translations:
        N = len(block)
        for i in range(N):
            lhs = g0(block[i](points))
            rhs = g0(points)
            for j in range(N):
                rhs = _apply_power(block[j], inverse(block[j]), B[j, i], rhs)
            worst = max(worst, float(np.max(torus_distance(lhs, rhs))))
    for a in range(len(gens)):
        for b in range(a + 1, len(gens)):
            lhs = gens[a](gens[b](points))
            rhs = gens[b](gens[a](points))
            worst = max(worst, float(np.max(torus_distance(lhs, rhs))))
    return worst


def verify_relations(action: AffineABCAction, samples: int = 1000, seed: int = 0) -> float:
    """Max relation residual of the affine action at random points."""
    pts = np.random.default_rng(seed).random((samples, action.N))
    return relation_residual(action.anosov_generator(), action.translations(), action.B, pts)


def compare_affine(a1: AffineABCAction, a2: AffineABCAction, tol: float = 1e-9) -> bool:
    """True iff both actions have the same rotation matrices modulo 1."""
    if (a1.N != a2.N or a1.K != a2.K or not np.array_equal(a1.A.entries, a2.A.entries)
            or not np.array_equal(a1.B.entries, a2.B.entries)):
        raise DimensionMismatch("actions must share A, B and K")
    for r1, r2 in zip(a1.rhos, a2.rhos):
        d = _reduce_half_open(r1.values - r2.values)
        if np.max(np.abs(d)) > tol:
            return False
    return True
