"""Plane-strain linear elasticity on a rectangle: problem definition and closed-form fields.

The benchmark problem is a unit square (configurable rectangle) of homogeneous
isotropic material loaded by a manufactured body force. The displacement field

    u_x = cos(2 pi x) sin(pi y)
    u_y = Q sin(pi x) y^4 / 4

satisfies equilibrium  div(sigma) + B = 0  exactly for the body force returned
by :func:`body_force`, for any Lame parameters. ``Q`` is the load-case knob that
parametrizes the dataset. Everything here is pure numpy and vectorized; these
functions are the ground-truth oracle for the FEM solver and the residual
engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Edge names in counter-clockwise order, and their outward unit normals.
EDGES = ("bottom", "right", "top", "left")
EDGE_NORMALS = {
    "bottom": (0.0, -1.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
}

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


def _default_partition() -> dict[str, str]:
    return {"bottom": DIRICHLET, "left": DIRICHLET, "right": DIRICHLET, "top": NEUMANN}


@dataclass(frozen=True)
class MaterialParams:
    """Lame parameters of a homogeneous isotropic material (plane strain)."""

    lame_lambda: float = 1.0
    lame_mu: float = 0.5

    def __post_init__(self):
        if not (self.lame_mu > 0.0):
            raise ValueError(f"shear modulus must be positive, got {self.lame_mu}")
        if not (self.lame_lambda + self.lame_mu > 0.0):
            raise ValueError(
                f"lambda + mu must be positive, got {self.lame_lambda + self.lame_mu}"
            )


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned rectangle [0, width] x [0, height] with a per-edge BC partition."""

    width: float = 1.0
    height: float = 1.0
    bc_partition: tuple[tuple[str, str], ...] = field(
        default_factory=lambda: tuple(sorted(_default_partition().items()))
    )

    def __post_init__(self):
        if not (self.width > 0.0 and self.height > 0.0):
            raise ValueError("domain width and height must be positive")
        part = dict(self.bc_partition)
        if set(part) != set(EDGES):
            raise ValueError(f"bc_partition must cover exactly {EDGES}, got {sorted(part)}")
        for edge, kind in part.items():
            if kind not in (DIRICHLET, NEUMANN):
                raise ValueError(f"unknown BC kind {kind!r} on edge {edge!r}")
        # normalize ordering so equality/hashing ignore construction order
        object.__setattr__(self, "bc_partition", tuple(sorted(part.items())))

    @classmethod
    def unit_square(cls, partition: dict[str, str] | None = None) -> "DomainSpec":
        part = _default_partition() if partition is None else partition
        return cls(1.0, 1.0, tuple(sorted(part.items())))

    @property
    def partition(self) -> dict[str, str]:
        return dict(self.bc_partition)

    @property
    def dirichlet_edges(self) -> tuple[str, ...]:
        return tuple(e for e in EDGES if self.partition[e] == DIRICHLET)

    @property
    def neumann_edges(self) -> tuple[str, ...]:
        return tuple(e for e in EDGES if self.partition[e] == NEUMANN)


@dataclass(frozen=True)
class LoadCase:
    """One load configuration.

    ``q`` scales the vertical displacement mode; ``u_ref`` is the displacement
    scale used to weight the Dirichlet loss term (the maximum vertical
    displacement on the top edge at the largest load).
    """

    q: float
    u_ref: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.q <= 4.0):
            raise ValueError(f"load parameter q must lie in [0, 4], got {self.q}")
        if not (self.u_ref > 0.0):
            raise ValueError(f"u_ref must be positive, got {self.u_ref}")


def analytical_displacement(x, y, load: LoadCase):
    """Manufactured displacement field (u_x, u_y) at points (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ux = np.cos(2.0 * np.pi * x) * np.sin(np.pi * y)
    uy = load.q * np.sin(np.pi * x) * y**4 / 4.0
    return ux, uy


def analytical_strain(x, y, load: LoadCase):
    """Infinitesimal strain (eps_xx, eps_yy, eps_xy) of the manufactured field."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pi = np.pi
    exx = -2.0 * pi * np.sin(2.0 * pi * x) * np.sin(pi * y)
    eyy = load.q * np.sin(pi * x) * y**3
    # eps_xy = (du_x/dy + du_y/dx) / 2
    exy = 0.5 * (
        pi * np.cos(2.0 * pi * x) * np.cos(pi * y)
        + load.q * pi * np.cos(pi * x) * y**4 / 4.0
    )
    return exx, eyy, exy


def constitutive_stress(exx, eyy, exy, mat: MaterialParams):
    """Plane-strain Hooke's law: strain components to stress components."""
    exx = np.asarray(exx, dtype=float)
    eyy = np.asarray(eyy, dtype=float)
    exy = np.asarray(exy, dtype=float)
    lam, mu = mat.lame_lambda, mat.lame_mu
    tr = exx + eyy
    sxx = lam * tr + 2.0 * mu * exx
    syy = lam * tr + 2.0 * mu * eyy
    sxy = 2.0 * mu * exy
    return sxx, syy, sxy


def strain_from_grad(dux_dx, dux_dy, duy_dx, duy_dy):
    """Symmetrized strain from the four displacement-gradient components."""
    exx = np.asarray(dux_dx, dtype=float)
    eyy = np.asarray(duy_dy, dtype=float)
    exy = 0.5 * (np.asarray(dux_dy, dtype=float) + np.asarray(duy_dx, dtype=float))
    return exx, eyy, exy


def analytical_stress(x, y, load: LoadCase, mat: MaterialParams):
    """Stress (s_xx, s_yy, s_xy) of the manufactured field under plane strain."""
    exx, eyy, exy = analytical_strain(x, y, load)
    return constitutive_stress(exx, eyy, exy, mat)


def analytical_traction(x, y, normal, load: LoadCase, mat: MaterialParams):
    """Traction t = sigma . n of the manufactured field for a fixed unit normal."""
    sxx, syy, sxy = analytical_stress(x, y, load, mat)
    nx, ny = normal
    tx = sxx * nx + sxy * ny
    ty = sxy * nx + syy * ny
    return tx, ty


def body_force(x, y, load: LoadCase, mat: MaterialParams):
    """Body force (B_x, B_y) that balances the manufactured displacement field.

    Satisfies div(sigma(u)) + B = 0 identically for any (lambda, mu) and any q.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lam, mu = mat.lame_lambda, mat.lame_mu
    q = load.q
    pi = np.pi
    cos2x = np.cos(2.0 * pi * x)
    sin2x = np.sin(2.0 * pi * x)
    cosx = np.cos(pi * x)
    sinx = np.sin(pi * x)
    siny = np.sin(pi * y)
    cosy = np.cos(pi * y)
    bx = lam * (4.0 * pi**2 * cos2x * siny - pi * cosx * q * y**3) + mu * (
        9.0 * pi**2 * cos2x * siny - pi * cosx * q * y**3
    )
    by = lam * (2.0 * pi**2 * sin2x * cosy - 3.0 * sinx * q * y**2) + mu * (
        -6.0 * sinx * q * y**2
        + 2.0 * pi**2 * sin2x * cosy
        + 0.25 * pi**2 * sinx * q * y**4
    )
    return bx, by
