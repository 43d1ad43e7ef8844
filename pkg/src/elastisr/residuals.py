"""Differentiable physics residuals on cell-centered field grids.

All operators act on torch tensors shaped ``(5, ny, nx)`` or batched
``(B, 5, ny, nx)`` in the fixed channel order (ux, uy, sxx, syy, sxy), and are
built from slicing and arithmetic only, so gradients flow to the grid values.
Derivatives use second-order central differences inside and second-order
one-sided stencils on the first and last row/column.

Boundary terms compare a linear extrapolation of the outermost two node
rows/columns onto the physical boundary against the prescribed boundary data
there; cell-centered grids have no nodes on the boundary itself. Body force
and boundary data are affine in the load parameter q, so their q-coefficients
are precomputed once per (resolution, material) and reused across samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .elasticity import (
    DIRICHLET,
    EDGE_NORMALS,
    DomainSpec,
    LoadCase,
    MaterialParams,
    analytical_displacement,
    analytical_traction,
    body_force,
)


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the four physics loss terms."""

    pde: float
    constitutive: float
    dirichlet: float
    neumann: float

    @classmethod
    def from_problem(
        cls,
        mat: MaterialParams,
        domain: DomainSpec | None = None,
        u_ref: float = 1.0,
    ) -> "LossWeights":
        """Balance the terms by physical scale.

        PDE residual scales like stress / length, constitutive like stress,
        Dirichlet like displacement; the boundary terms get an extra factor
        of 20 so the reconstruction honors the data it is anchored to.
        """
        domain = DomainSpec() if domain is None else domain
        h = domain.height
        mu = mat.lame_mu
        return cls(
            pde=h / mu,
            constitutive=1.0 / mu,
            dirichlet=20.0 / u_ref,
            neumann=20.0 / mu,
        )


@dataclass
class LossBreakdown:
    """Weighted physics loss and its unweighted components (torch scalars)."""

    pde: torch.Tensor
    constitutive: torch.Tensor
    dirichlet: torch.Tensor
    neumann: torch.Tensor
    total: torch.Tensor

    def floats(self) -> dict[str, float]:
        return {
            "pde": float(self.pde.detach()),
            "constitutive": float(self.constitutive.detach()),
            "dirichlet": float(self.dirichlet.detach()),
            "neumann": float(self.neumann.detach()),
            "total": float(self.total.detach()),
        }


def _diff_last(f: torch.Tensor, h: float) -> torch.Tensor:
    """Second-order d/dx along the last dimension."""
    if f.shape[-1] < 3:
        raise ValueError("need at least 3 nodes along each axis for fd_gradient")
    left = -3.0 * f[..., 0:1] + 4.0 * f[..., 1:2] - f[..., 2:3]
    mid = f[..., 2:] - f[..., :-2]
    right = 3.0 * f[..., -1:] - 4.0 * f[..., -2:-1] + f[..., -3:-2]
    return torch.cat([left, mid, right], dim=-1) / (2.0 * h)


def fd_gradient(field: torch.Tensor, spacing) -> tuple[torch.Tensor, torch.Tensor]:
    """(d/dx, d/dy) of a grid field with shape (..., ny, nx)."""
    hx, hy = spacing
    ddx = _diff_last(field, hx)
    ddy = _diff_last(field.transpose(-1, -2), hy).transpose(-1, -2)
    return ddx, ddy


def _as_batch(values: torch.Tensor, loads) -> tuple[torch.Tensor, list[LoadCase], bool]:
    if values.ndim == 3:
        batched = False
        values = values.unsqueeze(0)
    elif values.ndim == 4:
        batched = True
    else:
        raise ValueError(f"expected (5, ny, nx) or (B, 5, ny, nx), got {tuple(values.shape)}")
    if values.shape[1] != 5:
        raise ValueError(f"expected 5 channels, got {values.shape[1]}")
    if loads is None:
        cases = None
    elif isinstance(loads, LoadCase):
        cases = [loads] * values.shape[0]
    else:
        cases = list(loads)
        if len(cases) != values.shape[0]:
            raise ValueError(
                f"got {len(cases)} load cases for a batch of {values.shape[0]}"
            )
    return values, cases, batched


def _q_tensor(cases: list[LoadCase], like: torch.Tensor, extra_dims: int) -> torch.Tensor:
    q = torch.tensor([c.q for c in cases], dtype=like.dtype, device=like.device)
    return q.reshape(-1, *([1] * extra_dims))


@lru_cache(maxsize=128)
def _body_coeffs(nx: int, ny: int, hx: float, hy: float, mat: MaterialParams):
    """Numpy q-affine coefficients of the body force on the grid: B = b0 + q b1."""
    x = (np.arange(nx) + 0.5) * hx
    y = (np.arange(ny) + 0.5) * hy
    X, Y = np.meshgrid(x, y)
    b0 = np.stack(body_force(X, Y, LoadCase(0.0), mat))
    b1 = np.stack(body_force(X, Y, LoadCase(1.0), mat)) - b0
    return b0, b1


@lru_cache(maxsize=256)
def _edge_coeffs(nx: int, ny: int, hx: float, hy: float, mat: MaterialParams, edge: str):
    """q-affine boundary data on one physical edge, at outermost-node abscissas."""
    if edge in ("bottom", "top"):
        xs = (np.arange(nx) + 0.5) * hx
        ys = np.full(nx, 0.0 if edge == "bottom" else ny * hy)
    else:
        xs = np.full(ny, 0.0 if edge == "left" else nx * hx)
        ys = (np.arange(ny) + 0.5) * hy
    normal = EDGE_NORMALS[edge]
    u0 = np.stack(analytical_displacement(xs, ys, LoadCase(0.0)))
    u1 = np.stack(analytical_displacement(xs, ys, LoadCase(1.0))) - u0
    t0 = np.stack(analytical_traction(xs, ys, normal, LoadCase(0.0), mat))
    t1 = np.stack(analytical_traction(xs, ys, normal, LoadCase(1.0), mat)) - t0
    return u0, u1, t0, t1


def _affine(c0: np.ndarray, c1: np.ndarray, cases, like: torch.Tensor) -> torch.Tensor:
    t0 = torch.as_tensor(c0, dtype=like.dtype, device=like.device)
    t1 = torch.as_tensor(c1, dtype=like.dtype, device=like.device)
    q = _q_tensor(cases, like, t0.ndim)
    return t0 + q * t1


def pde_residual(values: torch.Tensor, spacing, mat: MaterialParams, loads):
    """Momentum-balance residual (rx, ry) = div(sigma) + B on every grid node."""
    vals, cases, batched = _as_batch(values, loads)
    hx, hy = spacing
    sxx, syy, sxy = vals[:, 2], vals[:, 3], vals[:, 4]
    b0, b1 = _body_coeffs(vals.shape[3], vals.shape[2], float(hx), float(hy), mat)
    b = _affine(b0, b1, cases, vals)  # (B, 2, ny, nx)
    rx = _diff_last(sxx, hx) + _diff_last(sxy.transpose(-1, -2), hy).transpose(-1, -2) + b[:, 0]
    ry = _diff_last(sxy, hx) + _diff_last(syy.transpose(-1, -2), hy).transpose(-1, -2) + b[:, 1]
    if not batched:
        rx, ry = rx[0], ry[0]
    return rx, ry


def constitutive_residual(values: torch.Tensor, spacing, mat: MaterialParams):
    """Hooke's-law mismatch: stress channels minus stress of the FD strain.

    Returns (rxx, ryy, rxy) stacked along a channel dimension.
    """
    vals, _, batched = _as_batch(values, None)
    dux_dx, dux_dy = fd_gradient(vals[:, 0], spacing)
    duy_dx, duy_dy = fd_gradient(vals[:, 1], spacing)
    lam, mu = mat.lame_lambda, mat.lame_mu
    tr = dux_dx + duy_dy
    rxx = vals[:, 2] - (lam * tr + 2.0 * mu * dux_dx)
    ryy = vals[:, 3] - (lam * tr + 2.0 * mu * duy_dy)
    rxy = vals[:, 4] - mu * (dux_dy + duy_dx)
    out = torch.stack([rxx, ryy, rxy], dim=1)
    return out if batched else out[0]


def _edge_trace(f: torch.Tensor, edge: str) -> torch.Tensor:
    """Linear extrapolation of (B, ny, nx) node values onto one physical edge."""
    if edge == "bottom":
        return 1.5 * f[:, 0, :] - 0.5 * f[:, 1, :]
    if edge == "top":
        return 1.5 * f[:, -1, :] - 0.5 * f[:, -2, :]
    if edge == "left":
        return 1.5 * f[:, :, 0] - 0.5 * f[:, :, 1]
    if edge == "right":
        return 1.5 * f[:, :, -1] - 0.5 * f[:, :, -2]
    raise ValueError(f"unknown edge {edge!r}")


def bc_residual(values: torch.Tensor, spacing, domain: DomainSpec, mat: MaterialParams, loads):
    """Per-edge boundary residuals.

    Returns two dicts keyed by edge name: Dirichlet edges map to
    (u_trace - u_bc) and Neumann edges to (sigma.n trace - t_bc), each of
    shape (B, 2, L) (batch dim dropped for unbatched input).
    """
    vals, cases, batched = _as_batch(values, loads)
    if vals.shape[2] < 2 or vals.shape[3] < 2:
        raise ValueError("boundary extrapolation needs at least 2 nodes per axis")
    hx, hy = spacing
    nx, ny = vals.shape[3], vals.shape[2]
    dirichlet: dict[str, torch.Tensor] = {}
    neumann: dict[str, torch.Tensor] = {}
    for edge, kind in domain.partition.items():
        u0, u1, t0, t1 = _edge_coeffs(nx, ny, float(hx), float(hy), mat, edge)
        if kind == DIRICHLET:
            trace = torch.stack(
                [_edge_trace(vals[:, 0], edge), _edge_trace(vals[:, 1], edge)], dim=1
            )
            res = trace - _affine(u0, u1, cases, vals)
            dirichlet[edge] = res if batched else res[0]
        else:
            n1, n2 = EDGE_NORMALS[edge]
            sxx = _edge_trace(vals[:, 2], edge)
            syy = _edge_trace(vals[:, 3], edge)
            sxy = _edge_trace(vals[:, 4], edge)
            trace = torch.stack([sxx * n1 + sxy * n2, sxy * n1 + syy * n2], dim=1)
            res = trace - _affine(t0, t1, cases, vals)
            neumann[edge] = res if batched else res[0]
    return dirichlet, neumann


def total_loss(
    values: torch.Tensor,
    spacing,
    weights: LossWeights,
    mat: MaterialParams,
    domain: DomainSpec,
    loads,
) -> LossBreakdown:
    """Weighted mean-absolute physics loss over a grid or batch of grids."""
    vals, cases, _ = _as_batch(values, loads)
    rx, ry = pde_residual(vals, spacing, mat, cases)
    pde = torch.stack([rx, ry], dim=1).abs().mean()
    cons = constitutive_residual(vals, spacing, mat).abs().mean()
    dir_res, neu_res = bc_residual(vals, spacing, domain, mat, cases)
    zero = vals.new_zeros(())
    if dir_res:
        dirichlet = torch.cat([r.reshape(-1) for r in dir_res.values()]).abs().mean()
    else:
        dirichlet = zero
    if neu_res:
        neumann = torch.cat([r.reshape(-1) for r in neu_res.values()]).abs().mean()
    else:
        neumann = zero
    total = (
        weights.pde * pde
        + weights.constitutive * cons
        + weights.dirichlet * dirichlet
        + weights.neumann * neumann
    )
    return LossBreakdown(
        pde=pde, constitutive=cons, dirichlet=dirichlet, neumann=neumann, total=total
    )
