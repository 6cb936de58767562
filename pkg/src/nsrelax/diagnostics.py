"""Norms, curvature/oscillation indicators, error measures, and file writers.

All norm helpers are pure functions of coefficient vectors and assembled
matrices or a :class:`~nsrelax.fespace.DofMap`.  The writers emit the two
stable on-disk formats of the package: a fixed-schema CSV time series and
legacy ASCII VTK snapshots.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .fespace import (
    DofMap,
    divergence_at_quadrature,
    pressure_at_quadrature,
    velocity_at_quadrature,
)

__all__ = [
    "TimeSeriesRecord",
    "CSV_HEADER",
    "l2_norm",
    "div_norm",
    "discrete_curvature",
    "discrete_curvature_quadrature",
    "spacetime_l2",
    "convergence_rates",
    "velocity_error_l2",
    "pressure_error_l2",
    "write_csv",
    "write_vtk_snapshot",
]

CSV_HEADER = "t,norm_w,norm_grad_w,norm_div_w,norm_lambda,kappa,energy_residual,solver_iterations"


@dataclasses.dataclass(frozen=True)
class TimeSeriesRecord:
    """One CSV row: norms and per-step diagnostics at time ``t``.

    ``kappa`` is ``None`` for rows where fewer than three pressure levels
    exist (the initial state and the first step).
    """

    t: float
    norm_w: float
    norm_grad_w: float
    norm_div_w: float
    norm_lambda: float
    kappa: float | None
    energy_residual: float
    solver_iterations: int


def l2_norm(coefficients: np.ndarray, matrix) -> float:
    """sqrt(c^T M c) for a mass-like (symmetric positive semidefinite) matrix."""
    c = np.asarray(coefficients, dtype=float)
    val = float(c @ (matrix @ c))
    return math.sqrt(max(val, 0.0))


def div_norm(w: np.ndarray, mesh, dofmap: DofMap) -> float:
    """L2 norm of div w_h by elementwise quadrature (no projection applied;
    the divergence of a P2 field is discontinuous across elements)."""
    d = divergence_at_quadrature(dofmap, w)
    return math.sqrt(max(float(np.sum(dofmap.quad_w * d * d)), 0.0))


def discrete_curvature(levels, pressure_mass) -> np.ndarray:
    """Norms of second time-differences of a pressure-space coefficient series.

    ``levels`` holds >= 3 consecutive coefficient vectors; entry i of the
    result is ||levels[i+2] - 2 levels[i+1] + levels[i]|| in the norm induced
    by ``pressure_mass``.
    """
    levels = [np.asarray(v, dtype=float) for v in levels]
    if len(levels) < 3:
        raise ValueError("discrete curvature needs at least 3 consecutive levels")
    return np.array([
        l2_norm(levels[i + 2] - 2.0 * levels[i + 1] + levels[i], pressure_mass)
        for i in range(len(levels) - 2)
    ])


def discrete_curvature_quadrature(dofmap: DofMap, lam_levels, w_levels, beta: float) -> np.ndarray:
    """Curvature of the raw modified pressure lam + 2*beta*div w, evaluated
    directly at quadrature points without projecting div w into the pressure
    space.  The gap between this and :func:`discrete_curvature` applied to the
    projected series measures how far div w sits from the pressure space.
    """
    lam_levels = list(lam_levels)
    w_levels = list(w_levels)
    if len(lam_levels) != len(w_levels):
        raise ValueError("lambda and velocity level counts differ")
    if len(lam_levels) < 3:
        raise ValueError("discrete curvature needs at least 3 consecutive levels")
    vals = [
        pressure_at_quadrature(dofmap, lam) + 2.0 * beta * divergence_at_quadrature(dofmap, w)
        for lam, w in zip(lam_levels, w_levels)
    ]
    out = []
    for i in range(len(vals) - 2):
        d = vals[i + 2] - 2.0 * vals[i + 1] + vals[i]
        out.append(math.sqrt(max(float(np.sum(dofmap.quad_w * d * d)), 0.0)))
    return np.array(out)


def spacetime_l2(spatial_norms, dt: float) -> float:
    """Composite trapezoidal rule in time over squared spatial norms:
    (integral of norm(t)^2 dt)^(1/2).  ``spatial_norms`` covers t=0 through
    t=T inclusive at uniform spacing ``dt``."""
    e = np.asarray(list(spatial_norms), dtype=float)
    if e.size < 2:
        raise ValueError("need norms at two or more time levels")
    if dt <= 0:
        raise ValueError("dt must be positive")
    sq = e * e
    integral = dt * (0.5 * sq[0] + np.sum(sq[1:-1]) + 0.5 * sq[-1])
    return math.sqrt(max(float(integral), 0.0))


def convergence_rates(errors, dts) -> list:
    """rate_i = log2(e_i / e_{i+1}) for step sizes halving between rows."""
    errors = [float(e) for e in errors]
    dts = [float(d) for d in dts]
    if len(errors) != len(dts):
        raise ValueError("errors and dts must have equal length")
    for a, b in zip(dts, dts[1:]):
        if not b < a:
            raise ValueError("dts must be strictly decreasing")
        if abs(a / b - 2.0) > 1e-9:
            raise ValueError("dts must halve between consecutive entries")
    return [math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]


def velocity_error_l2(dofmap: DofMap, w: np.ndarray, exact_u, t: float) -> float:
    """L2 norm of w_h - u(x, t) by quadrature against the exact field."""
    wh = velocity_at_quadrature(dofmap, w)
    xy = dofmap.quad_xy
    ue = np.asarray(exact_u(xy[..., 0], xy[..., 1], t), dtype=float)
    diff = wh - ue
    val = float(np.sum(dofmap.quad_w * np.sum(diff * diff, axis=-1)))
    return math.sqrt(max(val, 0.0))


def pressure_error_l2(dofmap: DofMap, lam: np.ndarray, exact_p, t: float,
                      zero_mean: bool = True) -> float:
    """L2 norm of lam_h - p(x, t) by quadrature.  With ``zero_mean`` (the
    default) the comparison is modulo constants, matching the gauge freedom of
    pressure in fully Dirichlet problems."""
    ph = pressure_at_quadrature(dofmap, lam)
    xy = dofmap.quad_xy
    pe = np.asarray(exact_p(xy[..., 0], xy[..., 1], t), dtype=float)
    diff = ph - pe
    if zero_mean:
        area = float(np.sum(dofmap.quad_w))
        diff = diff - float(np.sum(dofmap.quad_w * diff)) / area
    val = float(np.sum(dofmap.quad_w * diff * diff))
    return math.sqrt(max(val, 0.0))


def _fmt(x: float) -> str:
    return "%.16e" % float(x)


def write_csv(records, path) -> None:
    """Write time-series records with the fixed header.  Floats use scientific
    notation with 17 significant digits and a decimal point regardless of
    locale; a missing curvature value becomes an empty field."""
    lines = [CSV_HEADER]
    for r in records:
        kappa = "" if r.kappa is None else _fmt(r.kappa)
        lines.append(",".join([
            _fmt(r.t), _fmt(r.norm_w), _fmt(r.norm_grad_w), _fmt(r.norm_div_w),
            _fmt(r.norm_lambda), kappa, _fmt(r.energy_residual),
            str(int(r.solver_iterations)),
        ]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_vtk_snapshot(mesh, state, path) -> None:
    """Legacy VTK 2.0 ASCII UNSTRUCTURED_GRID snapshot with point data
    ``velocity`` (quadratic velocity sampled at the mesh vertices) and
    ``pressure``.  ``state`` needs ``w`` and ``lam`` coefficient vectors."""
    nv = mesh.n_vertices
    n_scalar = nv + mesh.n_edges
    w = np.asarray(state.w, dtype=float)
    lam = np.asarray(state.lam, dtype=float)
    if w.shape[0] != 2 * n_scalar:
        raise ValueError("velocity coefficient length does not match the mesh")
    if lam.shape[0] != nv:
        raise ValueError("pressure coefficient length does not match the mesh")
    ux, uy = w[:nv], w[n_scalar:n_scalar + nv]

    lines = [
        "# vtk DataFile Version 2.0",
        "nsrelax snapshot",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{_fmt(x)} {_fmt(y)} {_fmt(0.0)}")
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    lines.append(f"POINT_DATA {nv}")
    lines.append("VECTORS velocity double")
    for i in range(nv):
        lines.append(f"{_fmt(ux[i])} {_fmt(uy[i])} {_fmt(0.0)}")
    lines.append("SCALARS pressure double 1")
    lines.append("LOOKUP_TABLE default")
    for i in range(nv):
        lines.append(_fmt(lam[i]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
