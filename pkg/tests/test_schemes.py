"""Time steppers: fixed points, equivalences, energy balance, stability."""

import dataclasses

import numpy as np
import pytest

from nsrelax.diagnostics import velocity_error_l2
from nsrelax.fespace import (
    assemble_convection,
    assemble_stiffness,
    assemble_velocity_mass,
    interpolate,
)
from nsrelax.linalg import solve_spd
from nsrelax.mesh import generate_rect_mesh
from nsrelax.problems import (
    ProblemDef,
    offset_circles_problem,
    taylor_green_decay_problem,
    taylor_green_problem,
)
from nsrelax.schemes import (
    METHOD_NAMES,
    OperatorSet,
    SchemeConfig,
    SimulationError,
    State,
    apply_dirichlet_rows,
    apply_time_filter,
    be_velocity_matrix,
    build_operators,
    energy_functional,
    get_stepper,
    kappa_beta,
    modified_pressure,
    run_simulation,
    solve_steady_stokes,
)

BASE = dict(dt=0.1, alpha2=10.0, beta=10.0, nu=1.0,
            velocity_tol=1e-12, pressure_tol=1e-14)


def rel_diff(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture(scope="module")
def tg():
    prob = taylor_green_problem(re=1.0, nx=8, ny=8)
    return prob, build_operators(prob)


@pytest.fixture(scope="module")
def decay():
    prob = taylor_green_decay_problem(re=1.0, nx=8, ny=8)
    return prob, build_operators(prob)


def final_state(prob, ops, method, T=0.3, **kw):
    cfg = SchemeConfig(method=method, **{**BASE, **kw})
    return run_simulation(prob, cfg, T, operators=ops).final_state


# -- configuration and plumbing -----------------------------------------------


def test_scheme_config_validation():
    ok = dict(method="pp_be", dt=0.1, alpha2=1.0, beta=1.0, nu=1.0)
    SchemeConfig(**ok)
    for key, bad in [("method", "leapfrog"), ("dt", 0.0), ("alpha2", 0.0),
                     ("beta", -1.0), ("nu", 0.0), ("mu", 1.0), ("mu", -0.1),
                     ("velocity_tol", 0.0), ("pressure_tol", -1e-3)]:
        with pytest.raises(ValueError):
            SchemeConfig(**{**ok, key: bad})


def test_config_and_state_are_immutable():
    cfg = SchemeConfig(method="pp_be", dt=0.1, alpha2=1.0, beta=1.0, nu=1.0)
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.dt = 0.2
    st = State(w=np.zeros(2), lam=np.zeros(1), t=0.0)
    with pytest.raises(dataclasses.FrozenInstanceError):
        st.t = 1.0


def test_stepper_registry_covers_all_methods():
    for name in METHOD_NAMES:
        assert callable(get_stepper(name))
    with pytest.raises(ValueError):
        get_stepper("leapfrog")


def test_kappa_beta_dispatch():
    cfg = SchemeConfig(method="pp_be", dt=0.1, alpha2=1.0, beta=7.5, nu=1.0)
    for name in METHOD_NAMES:
        expected = 7.5 if name.startswith("hybrid") else 0.0
        assert kappa_beta(name, cfg) == expected


def test_build_operators_contract(tg):
    prob, ops = tg
    assert isinstance(ops, OperatorSet)
    n, m = ops.n_velocity, ops.n_pressure
    assert ops.M.shape == (n, n) and ops.A.shape == (n, n) and ops.G.shape == (n, n)
    assert ops.B.shape == (m, n) and ops.BT.shape == (n, m)
    assert (ops.BT - ops.B.T).nnz == 0
    for sym in (ops.M, ops.A, ops.G, ops.Mp):
        assert abs(sym - sym.T).max() <= 1e-14
    # grad-div is positive semidefinite
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    assert v @ (ops.G @ v) >= -1e-12
    # boundary bookkeeping: mask is the indicator of bc_dofs
    mask = np.zeros(n)
    mask[ops.bc_dofs] = 1.0
    assert np.array_equal(mask, ops.bc_mask)
    # unit square: area 1, mp_row integrates P1 fields, h_max is the diagonal
    assert ops.area == pytest.approx(1.0, rel=1e-12)
    assert ops.mp_row @ np.ones(m) == pytest.approx(1.0, rel=1e-12)
    assert ops.h_max == pytest.approx(np.hypot(1 / 8, 1 / 8), rel=1e-12)


def test_apply_dirichlet_rows_sets_identity_rows(tg):
    prob, ops = tg
    S = apply_dirichlet_rows(ops.M.copy(), ops.bc_mask)
    dense = S.toarray()
    for i in ops.bc_dofs[:10]:
        row = np.zeros(S.shape[0])
        row[i] = 1.0
        assert np.array_equal(dense[i], row)
    # interior rows untouched
    interior = np.where(ops.bc_mask == 0.0)[0][:10]
    assert np.allclose(dense[interior], ops.M.toarray()[interior])


def test_dirichlet_values_carry_exact_trace(tg):
    prob, ops = tg
    g = ops.dirichlet_values(0.7)
    u_exact, _ = prob.exact
    coords = ops.dofmap.coords
    n_scalar = ops.dofmap.n_scalar
    scalar_bc = ops.bc_dofs[ops.bc_dofs < n_scalar]
    vals = u_exact(coords[scalar_bc, 0], coords[scalar_bc, 1], 0.7)
    assert np.allclose(g[scalar_bc], vals[:, 0], atol=1e-15)
    assert np.allclose(g[scalar_bc + n_scalar], vals[:, 1], atol=1e-15)
    interior = np.where(ops.bc_mask == 0.0)[0]
    assert np.all(g[interior] == 0.0)


def test_be_velocity_matrix_linear_in_graddiv_coef(tg):
    prob, ops = tg
    cfg = SchemeConfig(method="hybrid_be_decoupled", **BASE)
    w = interpolate(ops.dofmap, lambda x, y, t: np.stack([y, x], axis=-1), 0.0)
    S0 = be_velocity_matrix(ops, cfg, w, 0.0)
    S3 = be_velocity_matrix(ops, cfg, w, 3.0)
    G_free = ops.G.multiply((1.0 - ops.bc_mask)[:, None])
    assert abs((S3 - S0) - 3.0 * G_free).max() <= 1e-12
    # coefficient 0 reproduces the plain implicit operator
    N = assemble_convection(ops.mesh, ops.dofmap, w)
    plain = ops.M + cfg.dt * N + cfg.dt * cfg.nu * ops.A
    assert abs(S0 - apply_dirichlet_rows(plain, ops.bc_mask)).max() <= 1e-12


def test_modified_pressure_oracles(tg):
    prob, ops = tg
    lam = np.linspace(0.0, 1.0, ops.n_pressure)
    w = interpolate(ops.dofmap, lambda x, y, t: np.stack([x, y], axis=-1), 0.0)
    # beta = 0: plain copy, not aliased
    q0 = modified_pressure(ops, lam, w, 0.0)
    assert np.array_equal(q0, lam) and q0 is not lam
    # div w = 2 is exactly representable, so Pi_Q(div w) = 2 and q = lam + 4 beta
    q = modified_pressure(ops, lam, w, 1.5)
    assert np.allclose(q, lam + 4.0 * 1.5, atol=1e-10)


def test_energy_functional_oracles(tg):
    prob, ops = tg
    cfg = SchemeConfig(method="hybrid_be_decoupled", **BASE)
    zero = State(w=np.zeros(ops.n_velocity), lam=np.zeros(ops.n_pressure), t=0.0)
    assert energy_functional(ops, cfg, zero) == 0.0
    # ||(x, y)||^2 = 2/3; divergence contributes (2 beta Pi div)^2/alpha2 with
    # Pi div = 2, i.e. (2*10*2)^2 / 10 = 160
    w = interpolate(ops.dofmap, lambda x, y, t: np.stack([x, y], axis=-1), 0.0)
    st = State(w=w, lam=np.zeros(ops.n_pressure), t=0.0)
    assert energy_functional(ops, cfg, st) == pytest.approx(2.0 / 3.0 + 160.0, rel=1e-9)
    # with beta forced to zero only the kinetic part remains
    assert energy_functional(ops, cfg, st, beta_eff=0.0) == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_time_filter_spike_and_smooth():
    prev, curr, nxt = np.zeros(3), np.ones(3), np.zeros(3)
    out = apply_time_filter((prev, curr, nxt), 0.1)
    # 0 - 0.05 * (0 - 2 + 0) = 0.1
    assert np.allclose(out, 0.1, atol=1e-16)
    # a linear-in-time sequence passes through unchanged
    a = np.array([1.0, 2.0])
    out = apply_time_filter((a, 2 * a, 3 * a), 0.3)
    assert np.allclose(out, 3 * a, atol=1e-15)


# -- fixed points and exact reductions ------------------------------------------


def zero_problem(nx=6):
    def zero_vec(x, y, t):
        return np.stack([np.zeros_like(x), np.zeros_like(y)], axis=-1)

    def zero_scalar(x, y, t):
        return np.zeros_like(x)

    mesh = generate_rect_mesh((0.0, 1.0), (0.0, 1.0), nx, nx)
    return ProblemDef(
        name="rest", mesh=mesh, re=2.0, initial=(zero_vec, zero_scalar),
        dirichlet={1: zero_vec, 2: zero_vec, 3: zero_vec, 4: zero_vec},
        force=zero_vec,
    )


@pytest.mark.parametrize("method", METHOD_NAMES)
def test_rest_state_is_exact_fixed_point(method):
    prob = zero_problem()
    cfg = SchemeConfig(method=method, dt=0.1, alpha2=4.0, beta=2.0, nu=0.5)
    res = run_simulation(prob, cfg, 0.3)
    assert len(res.records) == 4
    for r in res.records:
        assert r.norm_w == 0.0
        assert r.norm_lambda == 0.0
        assert r.norm_div_w == 0.0
        assert r.kappa in (None, 0.0)
    assert np.all(res.final_state.w == 0.0)
    assert np.all(res.final_state.lam == 0.0)


def test_beta_zero_hybrid_reduces_to_ac_bitwise(tg):
    prob, ops = tg
    for hybrid, ac in (("hybrid_be_decoupled", "ac_be"),
                       ("hybrid_trapezoidal", "ac_trapezoidal")):
        h = final_state(prob, ops, hybrid, beta=0.0)
        a = final_state(prob, ops, ac, beta=0.0)
        assert np.array_equal(h.w, a.w)
        assert np.array_equal(h.lam, a.lam)


def test_ac_ignores_configured_beta(tg):
    prob, ops = tg
    a0 = final_state(prob, ops, "ac_be", beta=0.0)
    a5 = final_state(prob, ops, "ac_be", beta=5.0)
    assert np.array_equal(a0.w, a5.w)
    assert np.array_equal(a0.lam, a5.lam)


# -- scheme equivalences ----------------------------------------------------------


def test_coupled_matches_projected_decoupled(tg):
    prob, ops = tg
    c = final_state(prob, ops, "hybrid_be_coupled")
    p = final_state(prob, ops, "hybrid_be_decoupled_proj")
    assert rel_diff(c.w, p.w) <= 1e-8
    assert rel_diff(c.lam, p.lam) <= 1e-7


def test_gform_close_to_projected_but_distinct(tg):
    prob, ops = tg
    p = final_state(prob, ops, "hybrid_be_decoupled_proj")
    g = final_state(prob, ops, "hybrid_be_decoupled")
    d = rel_diff(g.w, p.w)
    assert 1e-12 < d < 1e-2  # same method family, different grad-div operator
    assert rel_diff(g.lam, p.lam) > 1e-12


def test_filtered_first_step_is_unfiltered_then_diverges(tg):
    prob, ops = tg
    f1 = final_state(prob, ops, "hybrid_be_filtered", T=0.1)
    u1 = final_state(prob, ops, "hybrid_be_decoupled", T=0.1)
    assert np.array_equal(f1.w, u1.w)
    assert np.array_equal(f1.lam, u1.lam)
    f3 = final_state(prob, ops, "hybrid_be_filtered", T=0.3)
    u3 = final_state(prob, ops, "hybrid_be_decoupled", T=0.3)
    assert np.linalg.norm(f3.w - u3.w) > 1e-6


# -- energy balance and stability ---------------------------------------------------


def test_energy_identity_coupled_and_projected(decay):
    prob, ops = decay
    for method in ("hybrid_be_coupled", "hybrid_be_decoupled_proj"):
        cfg = SchemeConfig(method=method, **BASE)
        res = run_simulation(prob, cfg, 0.3, operators=ops)
        worst = max(r.energy_residual for r in res.records[1:])
        assert worst <= 1e-8, (method, worst)


@pytest.mark.parametrize("dt", [0.5, 0.1, 0.01])
def test_energy_functional_monotone_under_reciprocal_coupling(decay, dt):
    prob, ops = decay
    a2 = 1.0 / dt
    cfg = SchemeConfig(method="hybrid_be_coupled", dt=dt, alpha2=a2, beta=a2,
                       nu=1.0, velocity_tol=1e-12)
    energies = []
    res = run_simulation(
        prob, cfg, 10 * dt,
        callbacks=[lambda n, s, r: energies.append(energy_functional(ops, cfg, s))],
        operators=ops,
    )
    assert len(energies) == 11
    increases = np.diff(energies)
    assert increases.max() <= 1e-12 * energies[0]


def test_pp_divergence_monotone_in_beta(tg):
    prob, ops = tg
    divs = []
    for beta in (1.0, 10.0, 100.0):
        cfg = SchemeConfig(method="pp_be", dt=0.1, alpha2=1.0, beta=beta, nu=1.0)
        res = run_simulation(prob, cfg, 0.5, operators=ops)
        divs.append(res.records[-1].norm_div_w)
    assert divs[0] > divs[1] > divs[2] > 0


def test_ac_pressure_stays_bounded(decay):
    prob, ops = decay
    cfg = SchemeConfig(method="ac_be", dt=0.05, alpha2=20.0, beta=0.0, nu=1.0)
    res = run_simulation(prob, cfg, 5.0, operators=ops)  # 100 steps
    lams = [r.norm_lambda for r in res.records]
    assert all(np.isfinite(lams))
    assert max(lams) < 10.0 * (lams[0] + 1.0)
    # dissipation wins in the long run
    assert lams[-1] < 1e-3


def test_trapezoidal_is_second_order():
    prob = taylor_green_problem(re=1.0, nx=16, ny=16)
    ops = build_operators(prob)
    T = 0.4
    errs = []
    for dt in (0.2, 0.1, 0.05):
        a2 = 1.0 / dt**2
        cfg = SchemeConfig(method="hybrid_trapezoidal", dt=dt, alpha2=a2, beta=a2,
                           nu=prob.nu, velocity_tol=1e-12, pressure_tol=1e-13)
        res = run_simulation(prob, cfg, T, operators=ops)
        u_exact, _ = prob.exact
        errs.append(velocity_error_l2(ops.dofmap, res.final_state.w, u_exact, T))
    rates = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    for r in rates:
        assert abs(r - 2.0) <= 0.3, rates


# -- steady Stokes ------------------------------------------------------------------


def test_steady_stokes_zero_data_gives_rest():
    prob = zero_problem()
    prob = dataclasses.replace(prob, initial="stokes", re=1000.0)
    ops = build_operators(prob)
    st = solve_steady_stokes(prob, ops)
    assert np.all(st.w == 0.0)
    assert np.all(st.lam == 0.0)
    assert st.t == 0.0


def test_steady_stokes_on_offset_circles():
    prob = offset_circles_problem(re=1000.0, mesh_source="offset_circles_coarse.msh")
    ops = build_operators(prob)
    st = solve_steady_stokes(prob, ops, tol=1e-10)
    # nonzero swirl, exactly zero trace on both circles
    assert np.linalg.norm(st.w) > 1.0
    assert np.all(st.w[ops.bc_dofs] == 0.0)
    # discrete incompressibility: the pressure-space projection of div w vanishes
    d, _ = solve_spd(ops.Mp, ops.B @ st.w, tol=1e-13)
    assert np.sqrt(d @ (ops.Mp @ d)) <= 1e-6
    # pressure gauge: zero mean
    assert abs(ops.mp_row @ st.lam) <= 1e-10


def test_steady_stokes_honors_inhomogeneous_trace(tg):
    prob, ops = tg
    st = solve_steady_stokes(prob, ops, tol=1e-12)
    g = ops.dirichlet_values(0.0)
    assert np.allclose(st.w[ops.bc_dofs], g[ops.bc_dofs], atol=1e-10)


# -- simulation driver ---------------------------------------------------------------


def test_run_simulation_t_zero_is_initial_only(tg):
    prob, ops = tg
    cfg = SchemeConfig(method="hybrid_be_decoupled", **BASE)
    res = run_simulation(prob, cfg, 0.0, operators=ops)
    assert len(res.records) == 1
    assert res.final_state.t == 0.0
    assert res.records[0].kappa is None
    assert res.records[0].solver_iterations == 0
    # the initial record carries the interpolant's norms
    u0, _ = prob.initial
    w0 = interpolate(ops.dofmap, u0, 0.0)
    M = assemble_velocity_mass(ops.mesh, ops.dofmap)
    assert res.records[0].norm_w == pytest.approx(float(np.sqrt(w0 @ (M @ w0))), rel=1e-12)


def test_run_simulation_kappa_column_fills_from_third_level(tg):
    prob, ops = tg
    cfg = SchemeConfig(method="hybrid_be_decoupled", **BASE)
    res = run_simulation(prob, cfg, 0.4, operators=ops)
    assert len(res.records) == 5
    assert res.records[0].kappa is None
    assert res.records[1].kappa is None
    for r in res.records[2:]:
        assert isinstance(r.kappa, float) and r.kappa >= 0.0


def test_run_simulation_validates_time_grid(tg):
    prob, ops = tg
    cfg = SchemeConfig(method="hybrid_be_decoupled", **BASE)
    with pytest.raises(ValueError):
        run_simulation(prob, cfg, -0.1, operators=ops)
    with pytest.raises(ValueError):
        run_simulation(prob, cfg, 0.35, operators=ops)  # not a multiple of dt


def test_simulation_error_reports_step_and_partial_records():
    prob = taylor_green_problem(re=1.0, nx=12, ny=12)
    cfg = SchemeConfig(method="ac_be", dt=1.0, alpha2=1e14, beta=0.0, nu=1.0)
    with pytest.raises(SimulationError) as err:
        run_simulation(prob, cfg, 3.0)
    assert err.value.step_index == 1
    assert len(err.value.records) == 1  # the initial record survives
    assert "step 1" in str(err.value)


def test_run_simulation_bitwise_deterministic(tg):
    prob, ops = tg
    cfg = SchemeConfig(method="hybrid_be_filtered", **BASE)
    a = run_simulation(prob, cfg, 0.3, operators=ops)
    b = run_simulation(prob, cfg, 0.3, operators=ops)
    assert np.array_equal(a.final_state.w, b.final_state.w)
    assert np.array_equal(a.final_state.lam, b.final_state.lam)
    assert a.records == b.records


def test_callbacks_see_every_level(tg):
    prob, ops = tg
    cfg = SchemeConfig(method="pp_be", **BASE)
    seen = []
    run_simulation(prob, cfg, 0.3, operators=ops,
                   callbacks=[lambda n, s, r: seen.append((n, s.t, r.t))])
    assert [n for n, _, _ in seen] == [0, 1, 2, 3]
    for n, st_t, rec_t in seen:
        assert st_t == rec_t == pytest.approx(0.1 * n, abs=1e-12)
