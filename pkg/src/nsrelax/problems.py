"""Benchmark problems: domains, closed-form data, and exact solutions.

Every field function takes numpy arrays (x, y) and a time t and returns
values with a trailing component axis for vectors.  Velocity boundary data is
given per boundary tag so the schemes can evaluate traces at whatever time
level they need.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import os

import numpy as np

from .mesh import TriMesh, generate_rect_mesh, generate_channel_step_mesh, load_gmsh

__all__ = [
    "ProblemDef",
    "taylor_green_problem",
    "manufactured_problem",
    "offset_circles_problem",
    "channel_step_problem",
    "asset_path",
]


@dataclasses.dataclass(frozen=True)
class ProblemDef:
    """A benchmark: mesh, Reynolds number, data, and optional exact fields.

    ``initial`` is either a (u0, p0) pair of field functions or the string
    "stokes" (start from the steady Stokes solution of the same data).
    ``dirichlet`` maps every boundary tag to a velocity trace function.
    """

    name: str
    mesh: TriMesh
    re: float
    initial: object
    dirichlet: dict
    force: object
    exact: tuple | None = None
    all_dirichlet: bool = True

    def __post_init__(self):
        if self.re <= 0:
            raise ValueError("Re must be positive")
        tags = set(int(t) for t in np.unique(self.mesh.boundary_tags))
        given = set(int(t) for t in self.dirichlet)
        if tags - given:
            raise ValueError(f"boundary tags {sorted(tags - given)} have no BC entry")

    @property
    def nu(self) -> float:
        return 1.0 / self.re


def _zero_velocity(x, y, t):
    return np.stack([np.zeros_like(x), np.zeros_like(y)], axis=-1)


def _freeze(fn):
    def frozen(x, y, t):
        return fn(x, y, 0.0)

    return frozen


def taylor_green_problem(re: float = 1.0, nx: int = 16, ny: int = 16,
                         bc_time_frozen: bool = False) -> ProblemDef:
    """Decaying vortex on the unit square with zero body force.

    u = e^{-2t/Re} (cos x sin y, -cos y sin x),
    p = -1/4 e^{-4t/Re} (cos 2x + cos 2y); an exact solution with nu = 1/Re.
    Boundary data is the exact trace; ``bc_time_frozen`` evaluates it at t=0
    for the whole run instead.
    """
    re = float(re)

    def u(x, y, t):
        decay = np.exp(-2.0 * t / re)
        return np.stack([decay * np.cos(x) * np.sin(y), -decay * np.cos(y) * np.sin(x)], axis=-1)

    def p(x, y, t):
        return -0.25 * np.exp(-4.0 * t / re) * (np.cos(2 * x) + np.cos(2 * y))

    bc = _freeze(u) if bc_time_frozen else u
    mesh = generate_rect_mesh((0.0, 1.0), (0.0, 1.0), nx, ny)
    return ProblemDef(
        name="taylor_green",
        mesh=mesh,
        re=re,
        initial=(u, p),
        dirichlet={1: bc, 2: bc, 3: bc, 4: bc},
        force=_zero_velocity,
        exact=(u, p),
    )


def taylor_green_decay_problem(re: float = 1.0, nx: int = 8, ny: int = 8) -> ProblemDef:
    """Taylor-Green initial data with homogeneous no-slip walls and f=0.

    Not an exact-solution benchmark; used for energy-identity and stability
    checks, which require zero boundary data.
    """
    base = taylor_green_problem(re=re, nx=nx, ny=ny)
    return ProblemDef(
        name="taylor_green_decay",
        mesh=base.mesh,
        re=base.re,
        initial=base.initial,
        dirichlet={1: _zero_velocity, 2: _zero_velocity, 3: _zero_velocity, 4: _zero_velocity},
        force=_zero_velocity,
        exact=None,
    )


def manufactured_problem(nx: int = 32, ny: int = 32) -> ProblemDef:
    """Forced flow with a known smooth solution on the unit square, Re=1.

    u = e^t (cos y, sin x) (divergence-free), p = (x - y)(1 + t).
    The body force below is u_t + u.grad u - nu lap u + grad p for nu=1,
    derived symbolically and frozen here:
    f = (1+nu) e^t (cos y, sin x) + e^{2t} (-sin x sin y, cos x cos y) + (1+t)(1,-1).
    """
    nu = 1.0

    def u(x, y, t):
        et = np.exp(t)
        return np.stack([et * np.cos(y), et * np.sin(x)], axis=-1)

    def p(x, y, t):
        return (x - y) * (1.0 + t)

    def f(x, y, t):
        et = np.exp(t)
        e2t = np.exp(2.0 * t)
        fx = (1.0 + nu) * et * np.cos(y) - e2t * np.sin(x) * np.sin(y) + (1.0 + t)
        fy = (1.0 + nu) * et * np.sin(x) + e2t * np.cos(x) * np.cos(y) - (1.0 + t)
        return np.stack([fx, fy], axis=-1)

    mesh = generate_rect_mesh((0.0, 1.0), (0.0, 1.0), nx, ny)
    return ProblemDef(
        name="manufactured",
        mesh=mesh,
        re=1.0,
        initial=(u, p),
        dirichlet={1: u, 2: u, 3: u, 4: u},
        force=f,
        exact=(u, p),
    )


def _asset_root():
    return importlib.resources.files("nsrelax") / "assets"


def asset_path(name: str) -> str:
    """Resolve a mesh asset shipped with the package."""
    p = _asset_root() / name
    return os.fspath(p)


def offset_circles_problem(re: float = 1000.0, mesh_source: str = "offset_circles.msh") -> ProblemDef:
    """Disk of radius 1 with a small off-center hole (radius 0.1 at (0.5, 0)),
    both circles no-slip, driven by the rotational force
    f = (-4y(1-x^2-y^2), 4x(1-x^2-y^2)); starts from steady Stokes.

    ``mesh_source`` is an asset name (resolved inside the package) or a path
    to an MSH file.
    """

    def f(x, y, t):
        s = 1.0 - x * x - y * y
        return np.stack([-4.0 * y * s, 4.0 * x * s], axis=-1)

    path = mesh_source if os.path.exists(mesh_source) else asset_path(mesh_source)
    if not os.path.exists(path):
        raise FileNotFoundError(f"mesh asset not found: {mesh_source}")
    mesh = load_gmsh(path)
    return ProblemDef(
        name="offset_circles",
        mesh=mesh,
        re=float(re),
        initial="stokes",
        dirichlet={1: _zero_velocity, 2: _zero_velocity},
        force=f,
        exact=None,
    )


def channel_step_problem(re: float = 600.0, nx: int = 120, ny: int = 30,
                         step_x0: float = 5.0) -> ProblemDef:
    """Channel [0,40]x[0,10] with a unit step; parabolic profile
    u = (y(10-y)/25, 0) as initial condition and as Dirichlet data at inflow
    and outflow; no-slip on walls and step; f = 0."""

    def profile(x, y, t):
        return np.stack([y * (10.0 - y) / 25.0, np.zeros_like(y)], axis=-1)

    def p0(x, y, t):
        return np.zeros_like(x)

    mesh = generate_channel_step_mesh(nx, ny, step_x0=step_x0)
    return ProblemDef(
        name="channel_step",
        mesh=mesh,
        re=float(re),
        initial=(profile, p0),
        dirichlet={1: _zero_velocity, 2: profile, 3: _zero_velocity, 4: profile},
        force=_zero_velocity,
        exact=None,
    )
