"""Quadratic/linear element pair: quadrature, assembly oracles, interpolation."""

import math

import numpy as np
import pytest

from nsrelax.fespace import (
    DofMap,
    assemble_convection,
    assemble_divergence,
    assemble_graddiv,
    assemble_load,
    assemble_pressure_mass,
    assemble_pressure_stiffness,
    assemble_stiffness,
    assemble_velocity_mass,
    default_rule,
    divergence_at_quadrature,
    interpolate,
    p1_values,
    p2_values,
    project_pressure,
    velocity_at_quadrature,
)
from nsrelax.mesh import generate_rect_mesh


def square(n=4):
    return generate_rect_mesh((0.0, 1.0), (0.0, 1.0), n, n)


# -- quadrature -----------------------------------------------------------------


def test_quadrature_exact_through_degree_five():
    """Reference-triangle monomial integrals: ∫ x^a y^b = a! b! / (a+b+2)!."""
    rule = default_rule()
    pts = rule.points  # barycentric (nq, 3)
    x = pts[:, 1]
    y = pts[:, 2]
    for a in range(6):
        for b in range(6 - a):
            exact = (
                math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            )
            approx = float(np.sum(rule.weights * x**a * y**b))
            assert approx == pytest.approx(exact, rel=1e-13), (a, b)


def test_quadrature_inexact_at_degree_six():
    rule = default_rule()
    x = rule.points[:, 1]
    exact = math.factorial(6) * math.factorial(0) / math.factorial(8)
    approx = float(np.sum(rule.weights * x**6))
    assert abs(approx - exact) > 1e-9


def test_basis_partition_of_unity():
    rule = default_rule()
    assert np.allclose(p2_values(rule.points).sum(axis=1), 1.0)
    assert np.allclose(p1_values(rule.points).sum(axis=1), 1.0)


def test_quad_weights_sum_to_area():
    dm = DofMap(square(3))
    assert float(dm.quad_w.sum()) == pytest.approx(1.0, abs=1e-14)


# -- assembled matrices against integral oracles -----------------------------------


def test_velocity_mass_total():
    """1^T M 1 over one component = area; full vector of ones -> 2*area."""
    mesh = square(4)
    dm = DofMap(mesh)
    M = assemble_velocity_mass(mesh, dm)
    ones = np.ones(dm.n_velocity)
    assert float(ones @ (M @ ones)) == pytest.approx(2.0, rel=1e-13)


def test_velocity_mass_quadratic_field():
    """Interpolating (x^2, 0): w^T M w = ∫ x^4 = 1/5 exactly (P2 exact)."""
    mesh = square(5)
    dm = DofMap(mesh)
    M = assemble_velocity_mass(mesh, dm)
    w = interpolate(dm, lambda x, y, t: np.stack([x**2, 0.0 * x], axis=-1), 0.0)
    assert float(w @ (M @ w)) == pytest.approx(0.2, rel=1e-12)


def test_stiffness_linear_field():
    """w = (x, y): ∫ |grad w|^2 = 2 * area."""
    mesh = square(4)
    dm = DofMap(mesh)
    A = assemble_stiffness(mesh, dm)
    w = interpolate(dm, lambda x, y, t: np.stack([x, y], axis=-1), 0.0)
    assert float(w @ (A @ w)) == pytest.approx(2.0, rel=1e-12)
    # constants are in the kernel
    ones = np.ones(dm.n_velocity)
    assert np.linalg.norm(A @ ones) < 1e-12


def test_divergence_oracle_linear_field():
    """q^T B w = ∫ q div w; with w=(x,y), div w=2: for q=1, value 2*area."""
    mesh = square(4)
    dm = DofMap(mesh)
    B = assemble_divergence(mesh, dm)
    w = interpolate(dm, lambda x, y, t: np.stack([x, y], axis=-1), 0.0)
    q = np.ones(dm.n_pressure)
    assert float(q @ (B @ w)) == pytest.approx(2.0, rel=1e-12)


def test_divergence_free_field_in_kernel():
    """w = (y, -x) is divergence-free; B w = 0 (exactly representable)."""
    mesh = square(3)
    dm = DofMap(mesh)
    B = assemble_divergence(mesh, dm)
    w = interpolate(dm, lambda x, y, t: np.stack([y, -x], axis=-1), 0.0)
    assert np.linalg.norm(B @ w) < 1e-13


def test_graddiv_oracle():
    """w = (x, y): w^T G w = ∫ (div w)^2 = 4 * area."""
    mesh = square(4)
    dm = DofMap(mesh)
    G = assemble_graddiv(mesh, dm)
    w = interpolate(dm, lambda x, y, t: np.stack([x, y], axis=-1), 0.0)
    assert float(w @ (G @ w)) == pytest.approx(4.0, rel=1e-12)


def test_graddiv_differs_from_projected_form():
    """G equals B^T Mp^{-1} B only when div w lies in the pressure space;
    for generic fields the projected form is a strict contraction."""
    mesh = square(4)
    dm = DofMap(mesh)
    B = assemble_divergence(mesh, dm)
    G = assemble_graddiv(mesh, dm)
    Mp = assemble_pressure_mass(mesh, dm)
    # div (x^2, y^2) = 2x + 2y is piecewise linear and continuous, so the
    # projection is exact and the two quadratic forms agree.
    w = interpolate(dm, lambda x, y, t: np.stack([x**2, y**2], axis=-1), 0.0)
    d = project_pressure(Mp, B @ w, tol=1e-14)
    assert float(w @ (G @ w)) == pytest.approx(float(d @ (B @ w)), rel=1e-10)
    # A generic coefficient vector has an element-wise discontinuous
    # divergence, outside the continuous pressure space.
    rng = np.random.default_rng(7)
    w = rng.standard_normal(dm.n_velocity)
    d = project_pressure(Mp, B @ w, tol=1e-14)
    direct = float(w @ (G @ w))
    projected = float(d @ (B @ w))
    assert direct > projected > 0  # projection is a contraction
    assert direct > 1.5 * projected


def test_pressure_mass_total():
    mesh = square(4)
    dm = DofMap(mesh)
    Mp = assemble_pressure_mass(mesh, dm)
    ones = np.ones(dm.n_pressure)
    assert float(ones @ (Mp @ ones)) == pytest.approx(1.0, rel=1e-13)


def test_pressure_stiffness_oracle():
    """P1 scalar Laplacian: q = x gives ∫|grad q|^2 = area; constants in kernel."""
    mesh = square(4)
    dm = DofMap(mesh)
    K = assemble_pressure_stiffness(mesh, dm)
    q = mesh.vertices[:, 0].copy()
    assert float(q @ (K @ q)) == pytest.approx(1.0, rel=1e-12)
    assert np.linalg.norm(K @ np.ones(dm.n_pressure)) < 1e-12


# -- convection -------------------------------------------------------------------


def test_convection_skew_symmetry_on_interior_fields():
    """v^T N(w) v = 0 for v supported away from the boundary (the
    skew-symmetrized trilinear form), regardless of w."""
    mesh = square(6)
    dm = DofMap(mesh)
    rng = np.random.default_rng(7)
    interior = ~(
        np.isclose(dm.coords[:, 0], 0.0) | np.isclose(dm.coords[:, 0], 1.0)
        | np.isclose(dm.coords[:, 1], 0.0) | np.isclose(dm.coords[:, 1], 1.0)
    )
    mask = np.concatenate([interior, interior]).astype(float)
    for _ in range(5):
        w = rng.standard_normal(dm.n_velocity)
        v = rng.standard_normal(dm.n_velocity) * mask
        N = assemble_convection(mesh, dm, w)
        val = abs(float(v @ (N @ v)))
        assert val <= 1e-12 * np.linalg.norm(w) * np.linalg.norm(v) ** 2


def test_convection_transport_oracle():
    """(w . grad v, u) part: with w=(1,0), v=(x,0), u=(1,0) on interior,
    b*(w,v,u) = ∫ dv1/dx * u1 = ∫ 1 over supported region; use exact fields
    and zero-divergence transport so the skew term vanishes: value = ∫ u1."""
    mesh = square(4)
    dm = DofMap(mesh)
    w = interpolate(dm, lambda x, y, t: np.stack([np.ones_like(x), 0 * x], axis=-1), 0.0)
    v = interpolate(dm, lambda x, y, t: np.stack([x, 0 * x], axis=-1), 0.0)
    u = interpolate(dm, lambda x, y, t: np.stack([np.ones_like(x), 0 * x], axis=-1), 0.0)
    N = assemble_convection(mesh, dm, w)
    # div w = 0 exactly, so b*(w, v, u) = (w . grad v, u) = ∫ 1 * 1 = 1
    assert float(u @ (N @ v)) == pytest.approx(1.0, rel=1e-12)


def test_convection_linear_in_transport():
    mesh = square(3)
    dm = DofMap(mesh)
    rng = np.random.default_rng(3)
    w1 = rng.standard_normal(dm.n_velocity)
    w2 = rng.standard_normal(dm.n_velocity)
    N1 = assemble_convection(mesh, dm, w1)
    N2 = assemble_convection(mesh, dm, w2)
    N12 = assemble_convection(mesh, dm, w1 + 2.0 * w2)
    diff = (N12 - (N1 + 2.0 * N2)).toarray()
    assert np.abs(diff).max() < 1e-12


# -- load, interpolation, evaluation ------------------------------------------------


def test_load_constant_force():
    """F_i = ∫ f . phi_i; summing one component's rows gives ∫ f_x = area."""
    mesh = square(4)
    dm = DofMap(mesh)
    F = assemble_load(mesh, dm, lambda x, y, t: np.stack([np.ones_like(x), 0 * x], axis=-1), 0.0)
    assert float(F[: dm.n_scalar].sum()) == pytest.approx(1.0, rel=1e-13)
    assert float(F[dm.n_scalar:].sum()) == pytest.approx(0.0, abs=1e-14)


def test_load_time_dependence():
    mesh = square(3)
    dm = DofMap(mesh)
    f = lambda x, y, t: np.stack([t * np.ones_like(x), 0 * x], axis=-1)
    F1 = assemble_load(mesh, dm, f, 1.0)
    F2 = assemble_load(mesh, dm, f, 2.0)
    assert np.allclose(F2, 2.0 * F1)


def test_interpolate_then_evaluate_quadratic_exact():
    mesh = square(3)
    dm = DofMap(mesh)
    g = lambda x, y, t: np.stack([x * y, x**2 - y**2], axis=-1)
    w = interpolate(dm, g, 0.0)
    vals = velocity_at_quadrature(dm, w)
    exact = np.asarray(g(dm.quad_xy[..., 0], dm.quad_xy[..., 1], 0.0))
    assert np.abs(vals - exact).max() < 1e-13


def test_divergence_at_quadrature_exact():
    mesh = square(3)
    dm = DofMap(mesh)
    w = interpolate(dm, lambda x, y, t: np.stack([x * x, -2 * x * y], axis=-1), 0.0)
    # div = 2x - 2x = 0
    assert np.abs(divergence_at_quadrature(dm, w)).max() < 1e-12


def test_interpolation_converges_quadratically_plus():
    """P2 interpolation error for a smooth non-polynomial field drops ~h^3."""
    errs = []
    for n in (4, 8):
        mesh = square(n)
        dm = DofMap(mesh)
        g = lambda x, y, t: np.stack([np.sin(np.pi * x), np.cos(np.pi * y)], axis=-1)
        w = interpolate(dm, g, 0.0)
        vals = velocity_at_quadrature(dm, w)
        exact = np.asarray(g(dm.quad_xy[..., 0], dm.quad_xy[..., 1], 0.0))
        err = np.sqrt(np.sum(dm.quad_w[..., None] * (vals - exact) ** 2))
        errs.append(err)
    rate = np.log2(errs[0] / errs[1])
    assert rate > 2.5


def test_project_pressure_reproduces_p1_fields():
    mesh = square(4)
    dm = DofMap(mesh)
    Mp = assemble_pressure_mass(mesh, dm)
    B = assemble_divergence(mesh, dm)
    w = interpolate(dm, lambda x, y, t: np.stack([x, y], axis=-1), 0.0)
    d = project_pressure(Mp, B @ w, tol=1e-14)
    # div w = 2 lies in the pressure space, so the projection is exact
    assert np.allclose(d, 2.0, atol=1e-10)
