"""Smooth perturbations of affine actions by conjugation.

Conjugating an affine action by ``g = id + (small trigonometric polynomial)``
gives a nonlinear action with the same rotation vectors whose linearising
conjugacy is known exactly, the standard construct-then-recover benchmark.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .algebra import RotationMatrix
from .torus import FourierMap, conjugate, invert


def trig_perturbation(modes: Sequence[Sequence[int]], amplitude: float, seed: int = 0,
                      dim: int | None = None) -> FourierMap:
    """``id + sum_n amplitude * u_n cos(2 pi <n, x> + theta_n)``.

    Each listed mode gets a random unit direction ``u_n`` and phase drawn
    from ``seed``; modes are paired with their negatives so the map is real.
    """
    modes = [tuple(int(v) for v in n) for n in modes]
    dim = len(modes[0]) if dim is None else dim
    rng = np.random.default_rng(seed)
    coeffs = {}
    for n in modes:
        u = rng.normal(size=dim)
        u /= np.linalg.norm(u)
        theta = rng.uniform(0.0, 2 * np.pi)
        coeffs[n] = 0.5 * amplitude * u * np.exp(1j * theta)
    if amplitude == 0:
        return FourierMap.identity(dim)
    return FourierMap.from_modes(coeffs, dim=dim)


class PerturbedAction(NamedTuple):
    g: FourierMap
    anosov: FourierMap
    translations: list
    rho: np.ndarray


def conjugated_action(g: FourierMap, Abar, rho, grid: int | None = None,
                      degree: int | None = None, anosov: bool = True) -> PerturbedAction:
    """``g^{-1} A_bar g`` and ``g^{-1}(g + rho_k)`` for each column of rho.

    With ``anosov=False`` the hyperbolic generator is left affine; its
    conjugate needs much finer grids than the translations at large amplitude.
    """
    R = rho.values if isinstance(rho, RotationMatrix) else np.asarray(rho, float)
    Ab = np.asarray(getattr(Abar, "entries", Abar))
    if g.is_affine and not np.any(g.constant):
        return PerturbedAction(g, FourierMap.linear_map(Ab),
                               [FourierMap.translation(R[:, k]) for k in range(R.shape[1])], R)
    gi = invert(g, grid=grid)
    Ts = [conjugate(gi, FourierMap.translation(R[:, k]), out_degree=degree, grid=grid)
          for k in range(R.shape[1])]
    A = FourierMap.linear_map(Ab)
    if anosov:
        A = conjugate(gi, A, out_degree=degree, grid=grid)
    return PerturbedAction(g, A, Ts, R)
