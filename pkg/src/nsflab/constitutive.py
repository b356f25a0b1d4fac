"""Pointwise constitutive laws for a Boyle-Mariotte gas with Newtonian stress and Fourier flux.

The stress law is the three-dimensional one (bulk factor 2/3).  On one- and
two-dimensional grids the fields are treated as a slice of a 3D flow whose
missing velocity components and derivatives vanish, so the 3D formula is
applied verbatim to the in-plane block.  The out-of-plane diagonal entry of
the stress, ``(lambda - 2 mu / 3) div u``, is available through
``stress(..., embed3=True)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, TensorField, VectorField


@dataclass(frozen=True)
class FluidParams:
    mu: float
    lam: float
    kappa: float
    cv: float
    G: ScalarField | None = None
    G_reg: str = "W1q"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"viscosity mu must be > 0, got {self.mu}")
        if not self.lam >= 0:
            raise ValueError(f"bulk viscosity lambda must be >= 0, got {self.lam}")
        if not self.kappa > 0:
            raise ValueError(f"conductivity kappa must be > 0, got {self.kappa}")
        if not self.cv > 0:
            raise ValueError(f"heat capacity c_v must be > 0, got {self.cv}")
        if self.G_reg not in ("W1q", "W2q"):
            raise ValueError(f"G_reg must be 'W1q' or 'W2q', got {self.G_reg!r}")

    @property
    def bulk_coefficient(self) -> float:
        """Coefficient of grad div u in div S: ``mu / 3 + lambda``."""
        return self.mu / 3.0 + self.lam

    def potential(self, grid) -> np.ndarray:
        if self.G is None:
            return np.zeros(grid.node_shape)
        return self.G.values


def _require_positive(f: ScalarField, name: str) -> None:
    bad = f.values <= 0
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{name} must be positive; node {idx} has {name} = {f.values[idx]!r}")


def pressure(rho: ScalarField, theta: ScalarField) -> ScalarField:
    _require_positive(rho, "rho")
    _require_positive(theta, "theta")
    return ScalarField(rho.grid, rho.values * theta.values)


def internal_energy(theta: ScalarField, params: FluidParams) -> ScalarField:
    _require_positive(theta, "theta")
    return ScalarField(theta.grid, params.cv * theta.values)


def stress_array(J: np.ndarray, mu: float, lam: float, embed3: bool = False) -> np.ndarray:
    """Stress from a velocity gradient of shape ``(d, d, ...)``."""
    d = J.shape[0]
    divu = np.trace(J, axis1=0, axis2=1)
    eye = np.eye(d).reshape((d, d) + (1,) * (J.ndim - 2))
    S = mu * (J + np.swapaxes(J, 0, 1) - (2.0 / 3.0) * divu * eye) + lam * divu * eye
    if not embed3 or d == 3:
        return S
    out = np.zeros((3, 3, *J.shape[2:]))
    out[:d, :d] = S
    for k in range(d, 3):
        out[k, k] = (lam - 2.0 * mu / 3.0) * divu
    return out


def dissipation_array(J: np.ndarray, mu: float, lam: float) -> np.ndarray:
    """``S(D) : D``; out-of-plane entries of D vanish so the in-plane contraction is exact."""
    D = 0.5 * (J + np.swapaxes(J, 0, 1))
    return np.einsum("ij...,ij...->...", stress_array(J, mu, lam), D)


def stress(grad_u: TensorField, params: FluidParams, embed3: bool = False) -> TensorField | np.ndarray:
    S = stress_array(grad_u.values, params.mu, params.lam, embed3=embed3)
    if embed3 and grad_u.grid.dim < 3:
        return S
    return TensorField(grad_u.grid, S, symmetric=True)


def heat_flux(grad_theta: VectorField, params: FluidParams) -> VectorField:
    return VectorField(grad_theta.grid, -params.kappa * grad_theta.values)


def dissipation(grad_u: TensorField, params: FluidParams) -> ScalarField:
    return ScalarField(grad_u.grid, dissipation_array(grad_u.values, params.mu, params.lam))
