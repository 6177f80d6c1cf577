"""Smooth maps of the torus T^N = R^N / Z^N.

A map is stored as ``x -> M x + c + P(x)`` where ``M`` is an integer matrix,
``c`` a real vector and ``P`` a real trigonometric polynomial whose Fourier
coefficients live in a dense box ``|n|_inf <= J``.  Nonlinear operations
(composition, inversion, conjugation) go through a uniform FFT grid.
Off-grid evaluation uses a type-2 nonuniform FFT when ``finufft`` is
available and direct summation otherwise.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, GridTooCoarse, NotInvertible

try:  # optional fast path for off-grid evaluation
    import finufft
except ImportError:  # pragma: no cover
    finufft = None

DEFAULT_GRID = {1: 1024, 2: 256, 3: 64}
TRIM_TOL = 1e-16
ALIAS_TOL = 1e-10
NUFFT_EPS = 1e-15
_NUFFT_MIN_POINTS = 128
_threads = 1


def set_threads(n: int) -> None:
    """Cap the worker threads used by the nonuniform FFT."""
    global _threads
    _threads = max(1, int(n))


def default_grid(dim: int) -> int:
    return DEFAULT_GRID.get(dim, 32)


def mode_vectors(J: int, dim: int) -> np.ndarray:
    """Integer modes of the box ``|n|_inf <= J`` as an array (dim, D, ..., D)."""
    ax = np.arange(-J, J + 1)
    return np.stack(np.meshgrid(*([ax] * dim), indexing="ij"))


def grid_points(dim: int, G: int) -> np.ndarray:
    """Uniform grid ``j / G`` flattened to shape (G**dim, dim), C order."""
    ax = np.arange(G) / G
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def torus_distance(a, b) -> np.ndarray:
    """Euclidean distance on T^N between points (broadcast over leading axes)."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d - np.rint(d)
    return np.sqrt(np.sum(d * d, axis=-1))


def _wrap(x: np.ndarray) -> np.ndarray:
    r = np.mod(x, 1.0)
    r[r >= 1.0] = 0.0
    return r


# ---------------------------------------------------------------------------
# trigonometric series kernels


def _degree(coeffs: np.ndarray) -> int:
    return (coeffs.shape[1] - 1) // 2


def _series(coeffs: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Evaluate K real trig polynomials at points X (P, dim); returns (P, K)."""
    K = coeffs.shape[0]
    dim = coeffs.ndim - 1
    X = np.asarray(X, float).reshape(-1, dim)
    P = X.shape[0]
    D = coeffs.shape[1]
    if D == 1:
        return np.broadcast_to(coeffs.reshape(K).real, (P, K)).copy()
    if finufft is not None and P >= _NUFFT_MIN_POINTS and dim <= 3 and D ** dim > 256:
        theta = 2.0 * np.pi * _wrap(X)
        fn = (finufft.nufft1d2, finufft.nufft2d2, finufft.nufft3d2)[dim - 1]
        args = [np.ascontiguousarray(theta[:, d]) for d in range(dim)]
        out = fn(*args, np.ascontiguousarray(coeffs), isign=1, eps=NUFFT_EPS,
                 nthreads=_threads)
        return np.asarray(out).reshape(K, P).real.T.copy()
    return _series_direct(coeffs, X)


def _series_direct(coeffs: np.ndarray, X: np.ndarray) -> np.ndarray:
    K = coeffs.shape[0]
    dim = coeffs.ndim - 1
    D = coeffs.shape[1]
    J = (D - 1) // 2
    n = np.arange(-J, J + 1)
    P = X.shape[0]
    out = np.empty((P, K))
    chunk = max(1, int(4e6 // (K * D ** max(dim - 1, 1))))
    for s in range(0, P, chunk):
        Xs = _wrap(X[s:s + chunk])
        E = [np.exp(2j * np.pi * np.outer(Xs[:, d], n)) for d in range(dim)]
        t = np.tensordot(E[-1], coeffs, axes=([1], [dim]))  # (p, K, D...)
        for d in range(dim - 2, -1, -1):
            shape = (t.shape[0], 1) + (1,) * d + (D,)
            t = (t * E[d].reshape(shape)).sum(axis=-1)
        out[s:s + chunk] = t.real
    return out


def _derivative_coeffs(coeffs: np.ndarray) -> np.ndarray:
    """Coefficients of the partial derivatives, shape (K, dim, D...)."""
    dim = coeffs.ndim - 1
    n = mode_vectors(_degree(coeffs), dim)
    return coeffs[:, None] * (2j * np.pi * n)[None]


def _to_grid(coeffs: np.ndarray, G: int) -> np.ndarray:
    """Samples on the G^dim grid, shape (K, G, ..., G)."""
    K = coeffs.shape[0]
    dim = coeffs.ndim - 1
    J = _degree(coeffs)
    if J > G // 2 - 1:
        raise GridTooCoarse(f"degree {J} needs a grid finer than {G}")
    full = np.zeros((K,) + (G,) * dim, dtype=complex)
    idx = np.arange(-J, J + 1) % G
    full[(slice(None),) + np.ix_(*([idx] * dim))] = coeffs
    axes = tuple(range(1, dim + 1))
    return np.fft.ifftn(full, axes=axes).real * G ** dim


def _spectrum(values: np.ndarray) -> np.ndarray:
    dim = values.ndim - 1
    G = values.shape[1]
    return np.fft.fftn(values, axes=tuple(range(1, dim + 1))) / G ** dim


def _extract(spec: np.ndarray, J: int) -> np.ndarray:
    dim = spec.ndim - 1
    G = spec.shape[1]
    idx = np.arange(-J, J + 1) % G
    return spec[(slice(None),) + np.ix_(*([idx] * dim))]


def _chebyshev_index(G: int, dim: int) -> np.ndarray:
    f = np.abs(np.fft.fftfreq(G, 1.0 / G)).astype(int)
    mesh = np.meshgrid(*([f] * dim), indexing="ij")
    return np.max(np.stack(mesh), axis=0)


def _trim(coeffs: np.ndarray, tol: float) -> np.ndarray:
    """Shrink the coefficient box to the last shell holding a mode above tol."""
    dim = coeffs.ndim - 1
    J = _degree(coeffs)
    if J == 0:
        return coeffs
    mag = np.max(np.abs(coeffs), axis=0)
    linf = np.max(np.abs(mode_vectors(J, dim)), axis=0)
    shell = np.zeros(J + 1)
    np.maximum.at(shell, linf.ravel(), mag.ravel())
    keep = np.nonzero(shell[1:] > tol)[0]
    Jn = int(keep[-1]) + 1 if keep.size else 0
    if Jn == J:
        return coeffs
    sl = (slice(None),) + (slice(J - Jn, J + Jn + 1),) * dim
    return coeffs[sl]


def _resize(coeffs: np.ndarray, J: int) -> np.ndarray:
    dim = coeffs.ndim - 1
    J0 = _degree(coeffs)
    if J == J0:
        return coeffs
    if J < J0:
        return coeffs[(slice(None),) + (slice(J0 - J, J0 + J + 1),) * dim]
    out = np.zeros((coeffs.shape[0],) + (2 * J + 1,) * dim, dtype=complex)
    out[(slice(None),) + (slice(J - J0, J + J0 + 1),) * dim] = coeffs
    return out


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class TorusPoint:
    """A point of T^N with coordinates reduced into [0, 1)."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coords, float)).copy()
        if c.ndim != 1 or c.size < 1:
            raise ValueError("a torus point needs N >= 1 coordinates")
        c = _wrap(c)
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.size


class FourierMap:
    """Torus map ``x -> M x + c + sum_n c_n exp(2 pi i <n, x>)``.

    Parameters
    ----------
    linear : (N, N) integer array
        Linear part M.  A zero matrix describes a plain periodic function.
    constant : (N,) array, optional
    coeffs : (N, 2J+1, ..., 2J+1) complex array, optional
        Dense Fourier box indexed by ``n + J``.  The zero mode is folded into
        the constant and the box is projected onto real-valued series, so
        ``coeffs[-n] == conj(coeffs[n])`` holds exactly.
    """

    __slots__ = ("linear", "constant", "coeffs")

    def __init__(self, linear, constant=None, coeffs=None):
        lin = np.asarray(linear)
        if lin.ndim != 2 or lin.shape[0] != lin.shape[1]:
            raise ValueError("linear part must be square")
        if not np.all(lin == np.rint(lin)):
            raise ValueError("linear part must be an integer matrix")
        lin = np.array(np.rint(lin), dtype=np.int64)
        dim = lin.shape[0]
        const = np.zeros(dim) if constant is None else np.array(constant, float).reshape(dim)
        if coeffs is None:
            c = np.zeros((dim,) + (1,) * dim, dtype=complex)
        else:
            c = np.array(coeffs, dtype=complex)
            if c.ndim != dim + 1 or c.shape[0] != dim:
                raise ValueError(f"coefficient array must have shape (N, D...) with N={dim}")
            D = c.shape[1]
            if any(s != D for s in c.shape[1:]) or D % 2 == 0:
                raise ValueError("coefficient box must be a cube of odd side")
        J = _degree(c)
        centre = (slice(None),) + (J,) * dim
        const = const + c[centre].real
        c[centre] = 0.0
        c = 0.5 * (c + np.conj(np.flip(c, axis=tuple(range(1, dim + 1)))))
        for a in (lin, const, c):
            a.flags.writeable = False
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "constant", const)
        object.__setattr__(self, "coeffs", c)

    def __setattr__(self, name, value):
        raise AttributeError("FourierMap is immutable")

    def __reduce__(self):
        return (FourierMap, (self.linear, self.constant, self.coeffs))

    # -- constructors ------------------------------------------------------
    @classmethod
    def identity(cls, dim: int) -> "FourierMap":
        return cls(np.eye(dim, dtype=int))

    @classmethod
    def translation(cls, vector) -> "FourierMap":
        v = np.atleast_1d(np.asarray(vector, float))
        return cls(np.eye(v.size, dtype=int), v)

    @classmethod
    def linear_map(cls, matrix, constant=None) -> "FourierMap":
        return cls(np.asarray(matrix), constant)

    @classmethod
    def from_modes(cls, modes: dict, linear=None, constant=None, dim=None) -> "FourierMap":
        """Build from ``{n: c_n}``; each given mode is paired with its conjugate at -n."""
        if dim is None:
            dim = np.asarray(linear).shape[0] if linear is not None else len(next(iter(modes)))
        if linear is None:
            linear = np.eye(dim, dtype=int)
        J = max([int(np.max(np.abs(n))) for n in modes] + [0])
        c = np.zeros((dim,) + (2 * J + 1,) * dim, dtype=complex)
        for n, val in modes.items():
            n = tuple(int(v) for v in n)
            if len(n) != dim:
                raise DimensionMismatch("mode index has wrong dimension")
            val = np.asarray(val, dtype=complex).reshape(dim)
            pos = (slice(None),) + tuple(J + v for v in n)
            neg = (slice(None),) + tuple(J - v for v in n)
            if all(v == 0 for v in n):
                c[pos] += val
            else:
                c[pos] = val
                c[neg] = np.conj(val)
        return cls(linear, constant, c)

    @classmethod
    def from_grid_values(cls, linear, values: np.ndarray, degree: int | None = None,
                         trim_tol: float = TRIM_TOL) -> "FourierMap":
        """Map with the given linear part and periodic part sampled as (N, G, ..., G)."""
        values = np.asarray(values, float)
        G = values.shape[1]
        J = G // 2 - 1 if degree is None else degree
        spec = _spectrum(values)
        coeffs = _trim(_extract(spec, J), trim_tol)
        return cls(linear, None, coeffs)

    # -- basic properties ----------------------------------------------------
    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    @property
    def degree(self) -> int:
        return _degree(self.coeffs)

    @property
    def is_affine(self) -> bool:
        return not np.any(self.coeffs)

    def mode(self, n) -> np.ndarray:
        """Coefficient vector of mode n (zero outside the stored box)."""
        n = tuple(int(v) for v in n)
        J = self.degree
        if n == (0,) * self.dim:
            return self.constant.astype(complex)
        if max(abs(v) for v in n) > J:
            return np.zeros(self.dim, dtype=complex)
        return self.coeffs[(slice(None),) + tuple(J + v for v in n)].copy()

    def max_mode(self) -> float:
        """Largest Euclidean norm of a nonzero-mode coefficient."""
        return float(np.max(np.linalg.norm(self.coeffs, axis=0)))

    # -- derived maps ----------------------------------------------------------
    def resized(self, J: int) -> "FourierMap":
        return FourierMap(self.linear, self.constant, _resize(self.coeffs, J))

    def trimmed(self, tol: float = TRIM_TOL) -> "FourierMap":
        return FourierMap(self.linear, self.constant, _trim(self.coeffs, tol))

    def shifted(self, v) -> "FourierMap":
        """Add a constant vector (post-composition with a translation)."""
        return FourierMap(self.linear, self.constant + np.asarray(v, float), self.coeffs)

    def with_linear(self, linear) -> "FourierMap":
        return FourierMap(linear, self.constant, self.coeffs)

    def periodic_part(self, include_constant: bool = False) -> "FourierMap":
        """The periodic function ``P`` (optionally ``c + P``) with zero linear part."""
        const = self.constant if include_constant else None
        return FourierMap(np.zeros_like(self.linear), const, self.coeffs)

    def __add__(self, other: "FourierMap") -> "FourierMap":
        if other.dim != self.dim:
            raise DimensionMismatch("dimensions differ")
        J = max(self.degree, other.degree)
        return FourierMap(self.linear + other.linear, self.constant + other.constant,
                          _resize(self.coeffs, J) + _resize(other.coeffs, J))

    def __sub__(self, other: "FourierMap") -> "FourierMap":
        if other.dim != self.dim:
            raise DimensionMismatch("dimensions differ")
        J = max(self.degree, other.degree)
        return FourierMap(self.linear - other.linear, self.constant - other.constant,
                          _resize(self.coeffs, J) - _resize(other.coeffs, J))

    def scaled_periodic(self, s: float) -> "FourierMap":
        """Same linear part and constant with the periodic part multiplied by s."""
        return FourierMap(self.linear, self.constant, s * self.coeffs)

    # -- evaluation ------------------------------------------------------------
    def evaluate(self, x, lifted: bool = True) -> np.ndarray:
        """Evaluate at x, shape (N,) or (P, N).  Unlifted values are reduced mod 1."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        X = x.reshape(-1, self.dim)
        out = X @ self.linear.T + self.constant
        if not self.is_affine:
            out = out + _series(self.coeffs, X)
        if not lifted:
            out = _wrap(out)
        return out[0] if single else out

    __call__ = evaluate

    def jacobian(self, x) -> np.ndarray:
        """Derivative matrices at x, shape (N, N) or (P, N, N)."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        X = x.reshape(-1, self.dim)
        N = self.dim
        jac = np.broadcast_to(self.linear.astype(float), (X.shape[0], N, N)).copy()
        if not self.is_affine:
            dc = _derivative_coeffs(self.coeffs).reshape((N * N,) + self.coeffs.shape[1:])
            jac += _series(dc, X).reshape(-1, N, N)
        return jac[0] if single else jac

    def value_and_jacobian(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, float).reshape(-1, self.dim)
        N = self.dim
        val = X @ self.linear.T + self.constant
        jac = np.broadcast_to(self.linear.astype(float), (X.shape[0], N, N)).copy()
        if not self.is_affine:
            stack = np.concatenate(
                [self.coeffs, _derivative_coeffs(self.coeffs).reshape((N * N,) + self.coeffs.shape[1:])])
            S = _series(stack, X)
            val += S[:, :N]
            jac += S[:, N:].reshape(-1, N, N)
        return val, jac

    def periodic_on_grid(self, G: int) -> np.ndarray:
        """Periodic part (without the constant) sampled on the grid, (N, G, ..., G)."""
        if self.degree <= G // 2 - 1:
            return _to_grid(self.coeffs, G)
        X = grid_points(self.dim, G)
        return _series(self.coeffs, X).T.reshape((self.dim,) + (G,) * self.dim)

    # -- serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        J = self.degree
        modes = []
        nz = np.argwhere(np.any(self.coeffs != 0, axis=0))
        for idx in nz:
            n = [int(i) - J for i in idx]
            v = self.coeffs[(slice(None),) + tuple(idx)]
            modes.append([n, [float(a) for a in v.real], [float(a) for a in v.imag]])
        return {
            "dim": self.dim,
            "linear": self.linear.tolist(),
            "constant": [float(a) for a in self.constant],
            "modes": modes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FourierMap":
        dim = int(d["dim"])
        modes = d.get("modes", [])
        J = max([max(abs(int(v)) for v in m[0]) for m in modes] + [0])
        c = np.zeros((dim,) + (2 * J + 1,) * dim, dtype=complex)
        for n, re, im in modes:
            c[(slice(None),) + tuple(J + int(v) for v in n)] = np.asarray(re) + 1j * np.asarray(im)
        return cls(np.asarray(d["linear"]).reshape(dim, dim), d["constant"], c)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "FourierMap":
        return cls.from_dict(json.loads(s))

    def __repr__(self) -> str:
        return (f"FourierMap(dim={self.dim}, linear={self.linear.tolist()}, "
                f"constant={self.constant.tolist()}, degree={self.degree})")


def evaluate(f: FourierMap, x, lifted: bool = False) -> np.ndarray:
    """Evaluate ``f`` at x (a TorusPoint or array); unlifted values are reduced mod 1."""
    if isinstance(x, TorusPoint):
        x = x.coords
    return f.evaluate(x, lifted=lifted)


# ---------------------------------------------------------------------------
# grid carriers


@dataclass(frozen=True)
class GridFunction:
    """Vector-valued samples on the uniform grid, values of shape (M, G, ..., G)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, float)
        if v.ndim < 2:
            raise ValueError("values need a component axis and at least one grid axis")
        G = v.shape[1]
        if any(s != G for s in v.shape[1:]):
            raise ValueError("grid must be a cube")
        if G & (G - 1):
            raise ValueError("grid resolution must be a power of two")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.ndim - 1

    @property
    def resolution(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_map(cls, f: FourierMap, G: int, include_constant: bool = False) -> "GridFunction":
        v = f.periodic_on_grid(G)
        if include_constant:
            v = v + f.constant.reshape((-1,) + (1,) * f.dim)
        return cls(v)

    @classmethod
    def from_modes(cls, coeffs: np.ndarray, G: int) -> "GridFunction":
        return cls(_to_grid(np.asarray(coeffs, complex), G))

    def to_modes(self, J: int | None = None) -> np.ndarray:
        J = self.resolution // 2 - 1 if J is None else J
        if J > self.resolution // 2 - 1:
            raise GridTooCoarse("requested degree exceeds the grid Nyquist band")
        return _extract(_spectrum(self.values), J)

    def points(self) -> np.ndarray:
        return grid_points(self.dim, self.resolution)

    def at(self, X: np.ndarray) -> np.ndarray:
        """Periodic cubic-spline interpolation at points X (P, dim); returns (P, M)."""
        return _interp(self.values, X)


def _interp(values: np.ndarray, X: np.ndarray) -> np.ndarray:
    G = values.shape[1]
    coords = (_wrap(np.asarray(X, float)) * G).T
    return np.stack([ndimage.map_coordinates(v, coords, order=3, mode="grid-wrap")
                     for v in values], axis=1)


@dataclass(frozen=True)
class FoliationField:
    """Unit direction field v(x) on the grid, vectors of shape (N, G, ..., G).

    ``max_angle`` bounds the angle between directions at adjacent grid points.
    """

    vectors: np.ndarray
    max_angle: float = math.pi / 4

    def __post_init__(self):
        v = np.array(self.vectors, float)
        dim = v.ndim - 1
        if v.shape[0] != dim:
            raise DimensionMismatch("field must have N components on an N-dimensional grid")
        norms = np.sqrt(np.sum(v * v, axis=0))
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("foliation vectors must have unit length")
        for ax in range(1, dim + 1):
            cos = np.sum(v * np.roll(v, -1, axis=ax), axis=0)
            if np.min(cos) < math.cos(self.max_angle):
                raise ValueError("foliation field is not continuous/orientation-consistent on the grid")
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def resolution(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def constant(cls, direction, G: int) -> "FoliationField":
        d = np.asarray(direction, float)
        d = d / np.linalg.norm(d)
        return cls(np.broadcast_to(d.reshape((-1,) + (1,) * d.size), (d.size,) + (G,) * d.size))

    @classmethod
    def pullback(cls, g: FourierMap, direction, G: int) -> "FoliationField":
        """Field tangent to ``g^{-1}`` of the straight lines along ``direction``."""
        d = np.asarray(direction, float)
        X = grid_points(g.dim, G)
        v = np.linalg.solve(g.jacobian(X), np.broadcast_to(d, X.shape)[..., None])[..., 0]
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return cls(v.T.reshape((g.dim,) + (G,) * g.dim))

    def at(self, X: np.ndarray) -> np.ndarray:
        """Interpolated (not renormalized) directions at points X, shape (P, N)."""
        return _interp(self.vectors, X)

    def points(self) -> np.ndarray:
        return grid_points(self.dim, self.resolution)


# ---------------------------------------------------------------------------
# composition, inversion and conjugation


def _int_inverse(M: np.ndarray) -> np.ndarray:
    det = int(round(np.linalg.det(M)))
    if abs(det) != 1:
        raise NotInvertible(f"linear part has determinant {det}")
    inv = np.rint(np.linalg.inv(M)).astype(np.int64)
    if not np.array_equal(M @ inv, np.eye(M.shape[0], dtype=np.int64)):
        raise NotInvertible("linear part is not unimodular")
    return inv


def _lifted_on_grid(f: FourierMap, G: int, X: np.ndarray) -> np.ndarray:
    out = X @ f.linear.T + f.constant
    if not f.is_affine:
        out += f.periodic_on_grid(G).reshape(f.dim, -1).T
    return out


def _from_lifted_grid(linear, per: np.ndarray, G: int, J: int, alias_tol: float | None):
    """Project periodic grid values (P, N) to a FourierMap; report tail and alias level."""
    dim = per.shape[1]
    values = per.T.reshape((dim,) + (G,) * dim)
    spec = _spectrum(values)
    linf = _chebyshev_index(G, dim)
    mag2 = np.sum(np.abs(spec) ** 2, axis=0)
    tail = float(np.sqrt(np.sum(mag2[linf > J])))
    band = linf > (3 * G) // 8
    alias = float(np.sqrt(np.max(mag2[band]))) if np.any(band) else 0.0
    if alias_tol is not None and alias > alias_tol:
        raise GridTooCoarse(f"spectral content {alias:.3e} near the Nyquist band exceeds {alias_tol:.1e}")
    coeffs = _trim(_extract(spec, J), TRIM_TOL)
    return FourierMap(linear, None, coeffs), tail, alias


def _check_grid(dim: int, grid: int | None, out_degree: int | None) -> tuple[int, int]:
    G = default_grid(dim) if grid is None else int(grid)
    J = G // 2 - 1 if out_degree is None else int(out_degree)
    if J > G // 2 - 1 or J < 0:
        raise GridTooCoarse(f"output degree {J} must be below G/2 = {G // 2}")
    return G, J


def compose(f: FourierMap, g: FourierMap, out_degree: int | None = None, grid: int | None = None,
            alias_tol: float | None = ALIAS_TOL, return_tail: bool = False):
    """Composition ``f o g`` truncated to ``out_degree``.

    Returns the map, or ``(map, tail)`` when ``return_tail`` is set, where
    ``tail`` is the l2 mass of the discarded Fourier modes.
    """
    if f.dim != g.dim:
        raise DimensionMismatch(f"cannot compose dimension {f.dim} with {g.dim}")
    G, J = _check_grid(f.dim, grid, out_degree)
    M = f.linear @ g.linear
    if f.is_affine and g.is_affine:
        h = FourierMap(M, f.linear @ g.constant + f.constant)
        return (h, 0.0) if return_tail else h
    X = grid_points(f.dim, G)
    fg = f.evaluate(_lifted_on_grid(g, G, X))
    h, tail, _ = _from_lifted_grid(M, fg - X @ M.T, G, J, alias_tol)
    return (h, tail) if return_tail else h


def inverse_points(f: FourierMap, X: np.ndarray, max_iter: int = 50) -> np.ndarray:
    """Solve ``f~(y) = x`` for each row of X by Newton's method (lifted)."""
    X = np.asarray(X, float).reshape(-1, f.dim)
    Minv = _int_inverse(f.linear)
    Y = (X - f.constant) @ Minv.T
    if f.is_affine:
        return Y
    atol = 64 * np.finfo(float).eps * (1.0 + np.max(np.abs(X)))
    prev = np.inf
    for _ in range(max_iter):
        val, jac = f.value_and_jacobian(Y)
        r = val - X
        err = float(np.max(np.abs(r)))
        if not np.isfinite(err):
            break
        if err <= atol or (err < 1e-11 and err > 0.5 * prev):
            return Y
        prev = err
        try:
            Y = Y - np.linalg.solve(jac, r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise NotInvertible("singular Jacobian during Newton inversion") from exc
    else:
        val = f.evaluate(Y)
        err = float(np.max(np.abs(val - X)))
        if err < 1e-11:
            return Y
    raise NotInvertible(f"Newton inversion did not converge within {max_iter} iterations")


def invert(f: FourierMap, tol: float = 1e-10, grid: int | None = None, max_iter: int = 50,
           out_degree: int | None = None) -> FourierMap:
    """Inverse map by pointwise Newton on the grid, re-projected to Fourier modes."""
    Minv = _int_inverse(f.linear)
    if f.is_affine:
        return FourierMap(Minv, -(Minv @ f.constant))
    G, J = _check_grid(f.dim, grid, out_degree)
    X = grid_points(f.dim, G)
    Y = inverse_points(f, X, max_iter)
    g, _, _ = _from_lifted_grid(Minv, Y - X @ Minv.T, G, J, None)
    rng = np.random.default_rng(20240607)
    pts = np.concatenate([rng.random((512, f.dim)), X[:: max(1, X.shape[0] // 512)]])
    r = max(float(np.max(torus_distance(f(g(pts)), pts))),
            float(np.max(torus_distance(g(f(pts)), pts))))
    if r > tol:
        raise GridTooCoarse(f"inverse residual {r:.3e} exceeds {tol:.1e} at grid {G}")
    return g


def conjugate(h: FourierMap, f: FourierMap, out_degree: int | None = None, grid: int | None = None,
              alias_tol: float | None = ALIAS_TOL, return_tail: bool = False):
    """``h o f o h^{-1}`` evaluated pointwise on the grid (Newton for ``h^{-1}``)."""
    if f.dim != h.dim:
        raise DimensionMismatch("dimensions differ")
    G, J = _check_grid(f.dim, grid, out_degree)
    X = grid_points(f.dim, G)
    Y = inverse_points(h, X)
    W = h(f(Y))
    M = h.linear @ f.linear @ _int_inverse(h.linear)
    out, tail, _ = _from_lifted_grid(M, W - X @ M.T, G, J, alias_tol)
    return (out, tail) if return_tail else out


# ---------------------------------------------------------------------------
# norms


def _norm_grid(dim: int, J: int) -> int:
    target = max(8, 4 * (J + 1) if dim <= 2 else 2 * (J + 1))
    return 1 << (target - 1).bit_length()


def derivative_sups(coeffs: np.ndarray, k: int, G: int | None = None, constant=None) -> list[float]:
    """Grid sups of ``||D^i P||`` for i = 0..k.

    The value uses the Euclidean norm, the first derivative the spectral norm
    and higher derivatives the Frobenius norm of the symmetric tensor.
    """
    dim = coeffs.ndim - 1
    N = coeffs.shape[0]
    J = _degree(coeffs)
    G = _norm_grid(dim, J) if G is None else G
    n = mode_vectors(J, dim) * (2j * np.pi)
    out = []
    vals = _to_grid(coeffs, G)
    if constant is not None:
        vals = vals + np.asarray(constant, float).reshape((N,) + (1,) * dim)
    out.append(float(np.sqrt(np.max(np.sum(vals ** 2, axis=0)))))
    if k >= 1:
        jc = (coeffs[:, None] * n[None]).reshape((N * dim,) + coeffs.shape[1:])
        jac = _to_grid(jc, G).reshape(N, dim, -1).transpose(2, 0, 1)
        out.append(float(np.max(np.linalg.svd(jac, compute_uv=False)[:, 0])) if jac.size else 0.0)
    for i in range(2, k + 1):
        total = np.zeros((G,) * dim)
        for combo in itertools.combinations_with_replacement(range(dim), i):
            counts = np.bincount(combo, minlength=dim)
            mult = math.factorial(i) // math.prod(math.factorial(c) for c in counts)
            w = np.prod(n[list(combo)], axis=0)
            total += mult * np.sum(_to_grid(coeffs * w[None], G) ** 2, axis=0)
        out.append(float(np.sqrt(np.max(total))))
    return out


def mode_bound(coeffs: np.ndarray, k: int, constant=None) -> list[float]:
    """Upper bounds ``sum_n |c_n| (2 pi |n|)^i`` for the sup of ``D^i P``, i = 0..k."""
    dim = coeffs.ndim - 1
    n = mode_vectors(_degree(coeffs), dim)
    rad = 2 * np.pi * np.sqrt(np.sum(n.astype(float) ** 2, axis=0))
    amp = np.linalg.norm(coeffs, axis=0)
    out = [float(np.sum(amp * rad ** i)) for i in range(k + 1)]
    if constant is not None:
        out[0] += float(np.linalg.norm(constant))
    return out


def norm_ck(f: FourierMap, k: int, grid: int | None = None) -> float:
    """``sum_{i<=k} sup_x ||D^i P(x)||`` for the periodic part P of f (grid sup)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if f.is_affine:
        return 0.0
    return float(sum(derivative_sups(f.coeffs, k, grid)))


def norm_ck_foliation(phi: GridFunction, k: int, F: FoliationField) -> float:
    """C^k norm of phi along the leaves of F by centred differences of step 1/G."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if phi.resolution != F.resolution or phi.dim != F.dim:
        raise DimensionMismatch("function and foliation must share the grid")
    G = phi.resolution
    h = 1.0 / G
    X = F.points()
    V = F.vectors.reshape(F.dim, -1).T
    total = float(np.sqrt(np.max(np.sum(phi.values ** 2, axis=0))))
    for i in range(1, k + 1):
        acc = 0.0
        for j in range(i + 1):
            w = (-1) ** (i - j) * math.comb(i, j)
            acc = acc + w * _interp(phi.values, X + (j - i / 2) * h * V)
        acc = acc / h ** i
        total += float(np.sqrt(np.max(np.sum(acc ** 2, axis=1))))
    return total


# ---------------------------------------------------------------------------
# orbits


class _PointEvaluator:
    """Fast single-point evaluation of a map, used by long sequential orbits."""

    def __init__(self, f: FourierMap, jacobian: bool = False):
        self.f = f
        self.M = f.linear.astype(float)
        self.c = f.constant
        self.dim = f.dim
        J = f.degree
        self.n = 2j * np.pi * np.arange(-J, J + 1)
        stack = f.coeffs
        if jacobian:
            stack = np.concatenate([stack, _derivative_coeffs(f.coeffs).reshape(
                (f.dim * f.dim,) + f.coeffs.shape[1:])])
        self.K = stack.shape[0]
        self.C = np.moveaxis(stack, 0, -1).copy()  # (D, ..., D, K)
        self.affine = f.is_affine

    def series(self, x: np.ndarray) -> np.ndarray:
        t = self.C
        D = t.shape[0]
        for d in range(self.dim):
            e = np.exp(self.n * x[d])
            t = e @ t.reshape(D, -1)
        return t.real

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = self.M @ x + self.c
        if not self.affine:
            out = out + self.series(x)[: self.dim]
        return out


def _orbit(f: FourierMap, x0, steps: int, return_offsets: bool = False):
    """Lifted orbit x_0..x_steps with integer parts tracked separately."""
    x0 = np.asarray(x0.coords if isinstance(x0, TorusPoint) else x0, float).reshape(f.dim)
    ev = _PointEvaluator(f)
    M = f.linear
    frac = np.empty((steps + 1, f.dim))
    off = np.empty((steps + 1, f.dim), dtype=np.int64)
    k = np.floor(x0).astype(np.int64)
    u = x0 - k
    frac[0], off[0] = u, k
    for s in range(1, steps + 1):
        y = ev(u)
        fl = np.floor(y)
        k = M @ k + fl.astype(np.int64)
        u = y - fl
        frac[s], off[s] = u, k
    if return_offsets:
        return frac, off
    return frac + off


def lift_track(f: FourierMap, x0, steps: int) -> np.ndarray:
    """Lifted orbit ``f~^n(x0)`` for n = 1..steps, shape (steps, N).

    The lift is the one fixed by the stored constant; integer parts are carried
    exactly, so displacements ``f~^n(x0) - x0`` are ``orbit - x0``.
    """
    return _orbit(f, x0, steps)[1:]
