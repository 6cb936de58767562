"""Time-stepping schemes for velocity-pressure relaxed incompressibility.

All methods share one velocity-operator structure per step,

    [M + k*N(transport) + k*nu*A + c_G*G] w_new = right-hand side,

differing only in the grad-div coefficient ``c_G`` and in how the pressure
variable is updated afterwards:

- ``hybrid_be_coupled``       monolithic backward-Euler saddle solve,
- ``hybrid_be_decoupled_proj``matrix-free projected grad-div (B^T Mp^-1 B),
- ``hybrid_be_decoupled``     grad-div matrix G in place of the projection,
- ``hybrid_be_filtered``      decoupled step + Robert-Asselin filter,
- ``hybrid_trapezoidal``      midpoint (trapezoidal) version, second order,
- ``pp_be`` / ``ac_be``       penalty-only / compression-only baselines,
- ``pp_be_filtered``, ``ac_be_filtered``, ``pp_trapezoidal``,
  ``ac_trapezoidal``          baseline variants under the other two time
                              discretizations, for side-by-side studies.

Steppers are pure functions ``(state, config, problem, operators) ->
(State, StepDiagnostics)``.  Systems are scaled by the time step k (every
residual row is k times the difference-quotient form) so that tolerances act
on well-scaled quantities.

The per-step ``energy_identity_residual`` diagnostic evaluates the discrete
energy balance of the coupled backward-Euler method.  For the coupled (and
the equivalent projected) scheme with homogeneous boundary data it vanishes
to solver precision; for the other methods it is reported as an indicator,
not an identity.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.sparse as sp

from .diagnostics import div_norm, l2_norm, TimeSeriesRecord
from .fespace import (
    DofMap,
    assemble_convection,
    assemble_divergence,
    assemble_graddiv,
    assemble_load,
    assemble_pressure_mass,
    assemble_stiffness,
    assemble_velocity_mass,
    interpolate,
)
from .linalg import (
    SolverFailure,
    SolverReport,
    cg,
    gmres,
    make_fill_preconditioner,
    make_preconditioner,
    solve_spd,
)
from .mesh import boundary_dofs

__all__ = [
    "METHOD_NAMES",
    "SchemeConfig",
    "State",
    "StepDiagnostics",
    "OperatorSet",
    "SimulationError",
    "SimulationResult",
    "build_operators",
    "apply_dirichlet_rows",
    "be_velocity_matrix",
    "modified_pressure",
    "energy_functional",
    "apply_time_filter",
    "step_hybrid_be_coupled",
    "step_hybrid_be_decoupled_proj",
    "step_hybrid_be_decoupled",
    "step_hybrid_be_filtered",
    "step_hybrid_trapezoidal",
    "step_pp_be",
    "step_ac_be",
    "step_pp_be_filtered",
    "step_ac_be_filtered",
    "step_pp_trapezoidal",
    "step_ac_trapezoidal",
    "get_stepper",
    "kappa_beta",
    "solve_steady_stokes",
    "run_simulation",
]

#: Methods selectable in SchemeConfig.  The first seven are the core set; the
#: last four put the PP/AC baselines under the filtered-BE and trapezoidal
#: time discretizations so comparative studies can hold the integrator fixed.
METHOD_NAMES = (
    "hybrid_be_coupled",
    "hybrid_be_decoupled_proj",
    "hybrid_be_decoupled",
    "hybrid_be_filtered",
    "hybrid_trapezoidal",
    "pp_be",
    "ac_be",
    "pp_be_filtered",
    "ac_be_filtered",
    "pp_trapezoidal",
    "ac_trapezoidal",
)


@dataclasses.dataclass(frozen=True)
class SchemeConfig:
    """Scheme selection and parameters.

    ``alpha2`` is the squared pressure-wave-speed parameter, ``beta`` the
    penalty coefficient, ``nu`` the kinematic viscosity, ``dt`` the time step
    and ``mu`` the filter strength.  ``beta`` may be zero (the compression
    limit of the hybrid family); the other physical parameters are positive.
    """

    method: str
    dt: float
    alpha2: float
    beta: float
    nu: float
    mu: float = 0.1
    velocity_tol: float = 1e-10
    pressure_tol: float = 1e-12

    def __post_init__(self):
        if self.method not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHOD_NAMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.alpha2 > 0:
            raise ValueError("alpha2 must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("mu must lie in [0, 1)")
        if not self.velocity_tol > 0 or not self.pressure_tol > 0:
            raise ValueError("solver tolerances must be positive")


@dataclasses.dataclass(frozen=True)
class State:
    """Velocity coefficients ``w``, pressure coefficients ``lam``, and the
    previous-step copies used by multi-level methods."""

    w: np.ndarray
    lam: np.ndarray
    t: float
    w_prev: np.ndarray | None = None
    lam_prev: np.ndarray | None = None


@dataclasses.dataclass(frozen=True)
class StepDiagnostics:
    """Per-step norms at the new time level plus solver and energy reports."""

    energy_identity_residual: float
    solver_report: SolverReport
    norm_w: float
    norm_grad_w: float
    norm_div_w: float
    norm_lambda: float


class SimulationError(RuntimeError):
    """A step failed; carries the 1-based failing step index and the records
    accumulated so far."""

    def __init__(self, step_index: int, records, message: str):
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index
        self.records = records


@dataclasses.dataclass
class SimulationResult:
    records: list
    final_state: State
    operators: "OperatorSet"


# -- operators ---------------------------------------------------------------


@dataclasses.dataclass
class OperatorSet:
    """Assembled matrices and boundary bookkeeping reused across steps."""

    problem: object
    dofmap: DofMap
    M: sp.csr_matrix
    A: sp.csr_matrix
    B: sp.csr_matrix
    BT: sp.csr_matrix
    G: sp.csr_matrix
    Mp: sp.csr_matrix
    bc_dofs: np.ndarray
    bc_mask: np.ndarray
    tag_nodes: list
    mp_row: np.ndarray
    area: float
    h_max: float

    @property
    def mesh(self):
        return self.problem.mesh

    @property
    def n_velocity(self) -> int:
        return self.M.shape[0]

    @property
    def n_pressure(self) -> int:
        return self.Mp.shape[0]

    def dirichlet_values(self, t: float) -> np.ndarray:
        """Full-length velocity vector with boundary trace values at the
        boundary dofs (zero elsewhere).  Tags are processed in ascending
        order; at corners shared by two tags the higher tag wins, which is
        immaterial when traces agree there."""
        g = np.zeros(self.n_velocity)
        n_scalar = self.dofmap.n_scalar
        for _tag, nodes, fn in self.tag_nodes:
            xy = self.dofmap.coords[nodes]
            vals = np.asarray(fn(xy[:, 0], xy[:, 1], t), dtype=float)
            g[nodes] = vals[:, 0]
            g[nodes + n_scalar] = vals[:, 1]
        return g

    def load(self, t: float) -> np.ndarray:
        return assemble_load(self.mesh, self.dofmap, self.problem.force, t)


def build_operators(problem) -> OperatorSet:
    """Assemble the time-independent matrices and boundary tables once."""
    mesh = problem.mesh
    dofmap = DofMap(mesh)
    M = assemble_velocity_mass(mesh, dofmap)
    A = assemble_stiffness(mesh, dofmap)
    B = assemble_divergence(mesh, dofmap)
    G = assemble_graddiv(mesh, dofmap)
    Mp = assemble_pressure_mass(mesh, dofmap)
    BT = B.T.tocsr()

    tag_nodes = []
    nv = mesh.n_vertices
    for tag in sorted(problem.dirichlet):
        idx = mesh.edges_with_tags([tag])
        scalar = set()
        for i in idx:
            a, b = (int(v) for v in mesh.boundary_edges[i])
            scalar.update((a, b, nv + mesh.edge_id(a, b)))
        tag_nodes.append((tag, np.array(sorted(scalar), dtype=np.int64), problem.dirichlet[tag]))

    bc_dofs = boundary_dofs(mesh, dofmap, sorted(problem.dirichlet))
    bc_mask = np.zeros(M.shape[0])
    bc_mask[bc_dofs] = 1.0
    mp_row = np.asarray(Mp @ np.ones(Mp.shape[0]))
    edge_vec = mesh.vertices[mesh.edges[:, 0]] - mesh.vertices[mesh.edges[:, 1]]
    h_max = float(np.linalg.norm(edge_vec, axis=1).max())
    return OperatorSet(
        problem=problem, dofmap=dofmap, M=M, A=A, B=B, BT=BT, G=G, Mp=Mp,
        bc_dofs=bc_dofs, bc_mask=bc_mask, tag_nodes=tag_nodes,
        mp_row=mp_row, area=mesh.area(), h_max=h_max,
    )


def apply_dirichlet_rows(matrix: sp.spmatrix, bc_mask: np.ndarray) -> sp.csr_matrix:
    """Replace the rows flagged by ``bc_mask`` (1.0 entries) with identity rows."""
    keep = sp.diags(1.0 - bc_mask)
    fix = sp.diags(bc_mask)
    return (keep @ matrix + fix).tocsr()


_SOLVE_MAX_ITER = 2000
_PROBE_MAX_ITER = 300
_STIFF_GRADDIV_RATIO = 10.0
_STIFF_PECLET = 100.0


def _is_stiff(operators: OperatorSet, config: SchemeConfig, transport_w,
              graddiv_ratio: float) -> bool:
    """ILU(0) starves on velocity systems whose grad-div block dominates the
    mass scale, and breaks down on strongly convection-dominated ones; both
    go straight to the threshold-ILU ladder rung."""
    if graddiv_ratio > _STIFF_GRADDIV_RATIO:
        return True
    peclet = float(np.abs(transport_w).max()) * operators.h_max / config.nu
    return peclet > _STIFF_PECLET


def _solve_system(matvec, rhs, tol, template, stiff, what):
    """GMRES with an escalating preconditioner ladder built from ``template``.

    Stiff systems start directly from the threshold-ILU; otherwise ILU(0) is
    tried first with a reduced iteration budget and the stronger factorization
    used only on a convergence failure."""
    if stiff:
        attempts = (
            (make_fill_preconditioner, {}),
            (make_fill_preconditioner, {"drop_tol": 1e-6, "fill_factor": 25.0}),
        )
    else:
        attempts = (
            (make_preconditioner, {}),
            (make_fill_preconditioner, {}),
        )
    report = None
    for i, (maker, kwargs) in enumerate(attempts):
        budget = _SOLVE_MAX_ITER if i == len(attempts) - 1 else _PROBE_MAX_ITER
        pre = maker(template, **kwargs)
        x, report = gmres(matvec, rhs, tol=tol, max_iter=budget, precondition=pre)
        if report.converged:
            return x, report
    raise SolverFailure(f"{what} solve did not converge", report)


def be_velocity_matrix(operators: OperatorSet, config: SchemeConfig,
                       transport_w: np.ndarray, graddiv_coef: float) -> sp.csr_matrix:
    """The k-scaled implicit velocity operator shared by the BE-family
    methods: M + k N(transport_w) + k nu A + graddiv_coef * G, with Dirichlet
    rows replaced.  ``graddiv_coef`` already includes every k factor."""
    k = config.dt
    N = assemble_convection(operators.mesh, operators.dofmap, transport_w)
    S = operators.M + k * N + (k * config.nu) * operators.A + graddiv_coef * operators.G
    return apply_dirichlet_rows(S, operators.bc_mask)


def modified_pressure(operators: OperatorSet, lam: np.ndarray, w: np.ndarray,
                      beta: float, tol: float = 1e-12) -> np.ndarray:
    """lam + 2*beta*Pi_Q(div w) — the quantity whose second time-difference
    measures pressure oscillation (Pi_Q = pressure-space L2 projection)."""
    if beta == 0.0:
        return np.array(lam, dtype=float, copy=True)
    d, _ = solve_spd(operators.Mp, operators.B @ w, tol=tol)
    return lam + 2.0 * beta * d


def energy_functional(operators: OperatorSet, config: SchemeConfig, state: State,
                      beta_eff: float | None = None) -> float:
    """Stability functional ||w||^2 + alpha^-2 ||lam + 2 beta Pi_Q div w||^2."""
    beta = config.beta if beta_eff is None else beta_eff
    q = modified_pressure(operators, state.lam, state.w, beta, tol=config.pressure_tol)
    return l2_norm(state.w, operators.M) ** 2 + l2_norm(q, operators.Mp) ** 2 / config.alpha2


def apply_time_filter(state_triplet, mu: float) -> np.ndarray:
    """Robert-Asselin update of the newest of three consecutive levels:
    next - (mu/2)(next - 2 curr + prev)."""
    prev, curr, nxt = state_triplet
    return nxt - 0.5 * mu * (nxt - 2.0 * curr + prev)


# -- shared step plumbing -----------------------------------------------------


def _gauge(operators: OperatorSet, lam: np.ndarray) -> np.ndarray:
    """Subtract the domain mean from the pressure for enclosed flows."""
    if getattr(operators.problem, "all_dirichlet", True):
        return lam - (operators.mp_row @ lam) / operators.area
    return lam


def _energy_identity_residual(operators: OperatorSet, config: SchemeConfig,
                              w_old, lam_old, w_new, lam_new, load_new) -> float:
    """Relative residual of the coupled-BE per-step energy balance:

    1/2||w1||^2 - 1/2||w0||^2 + 1/2||w1-w0||^2
      + (2 alpha^2)^-1 (||q1||^2 - ||q0||^2 + ||q1-q0||^2)
      + 2 k beta ||Pi_Q div w1||^2 + k nu ||grad w1||^2 - k (f1, w1) = 0,

    q = lam + 2 beta Pi_Q(div w), normalized by the largest term."""
    k, beta, a2 = config.dt, config.beta, config.alpha2
    M, A, Mp, B = operators.M, operators.A, operators.Mp, operators.B
    d_old, _ = solve_spd(Mp, B @ w_old, tol=config.pressure_tol)
    d_new, _ = solve_spd(Mp, B @ w_new, tol=config.pressure_tol)
    q_old = lam_old + 2.0 * beta * d_old
    q_new = lam_new + 2.0 * beta * d_new
    dw = w_new - w_old
    dq = q_new - q_old
    terms = [
        0.5 * float(w_new @ (M @ w_new)),
        -0.5 * float(w_old @ (M @ w_old)),
        0.5 * float(dw @ (M @ dw)),
        (0.5 / a2) * float(q_new @ (Mp @ q_new)),
        -(0.5 / a2) * float(q_old @ (Mp @ q_old)),
        (0.5 / a2) * float(dq @ (Mp @ dq)),
        2.0 * k * beta * float(d_new @ (Mp @ d_new)),
        k * config.nu * float(w_new @ (A @ w_new)),
        -k * float(load_new @ w_new),
    ]
    scale = max(max(abs(t) for t in terms), 1e-300)
    return abs(sum(terms)) / scale


def _make_step(operators, config, problem, state, w_new, lam_new, t_new,
               report, load_new):
    lam_new = _gauge(operators, lam_new)
    residual = _energy_identity_residual(
        operators, config, state.w, state.lam, w_new, lam_new, load_new)
    diag = StepDiagnostics(
        energy_identity_residual=residual,
        solver_report=report,
        norm_w=l2_norm(w_new, operators.M),
        norm_grad_w=l2_norm(w_new, operators.A),
        norm_div_w=div_norm(w_new, operators.mesh, operators.dofmap),
        norm_lambda=l2_norm(lam_new, operators.Mp),
    )
    new_state = State(w=w_new, lam=lam_new, t=t_new,
                      w_prev=state.w, lam_prev=state.lam)
    return new_state, diag


# -- backward-Euler steppers --------------------------------------------------


def step_hybrid_be_coupled(state: State, config: SchemeConfig, problem, operators: OperatorSet):
    """One monolithic backward-Euler step of the hybrid relaxation:
    momentum row (k-scaled) [M + kN(w0) + k nu A] w1 - k B^T lam1 = M w0 + k F1,
    pressure row Mp lam1 + (2 beta + k alpha^2) B w1 = Mp lam0 + 2 beta B w0,
    Dirichlet velocity rows replaced with trace values at t1."""
    ops = operators
    k, a2, beta = config.dt, config.alpha2, config.beta
    t_new = state.t + k
    N = assemble_convection(ops.mesh, ops.dofmap, state.w)
    S11 = ops.M + k * N + (k * config.nu) * ops.A
    full = sp.bmat(
        [[S11, (-k) * ops.BT], [(2.0 * beta + k * a2) * ops.B, ops.Mp]],
        format="csr",
    )
    nvel = ops.n_velocity
    mask = np.concatenate([ops.bc_mask, np.zeros(ops.n_pressure)])
    full = apply_dirichlet_rows(full, mask)

    load_new = ops.load(t_new)
    rhs = np.concatenate([
        ops.M @ state.w + k * load_new,
        ops.Mp @ state.lam + (2.0 * beta) * (ops.B @ state.w),
    ])
    g = ops.dirichlet_values(t_new)
    rhs[ops.bc_dofs] = g[ops.bc_dofs]

    x, report = _solve_system(lambda v: full @ v, rhs, config.velocity_tol,
                              full, _is_stiff(ops, config, state.w, 0.0),
                              "monolithic")
    w_new, lam_new = x[:nvel], x[nvel:]
    return _make_step(ops, config, problem, state, w_new, lam_new, t_new, report, load_new)


def step_hybrid_be_decoupled(state: State, config: SchemeConfig, problem,
                             operators: OperatorSet, _beta: float | None = None):
    """Decoupled BE step with the grad-div matrix G standing in for the
    projected operator B^T Mp^-1 B (the form used in practice):
    [M + kN + k nu A + k(k alpha^2 + 2 beta) G] w1
        = M w0 + k F1 + k B^T lam0 + 2 k beta G w0,
    then Mp lam1 = Mp lam0 - (k alpha^2 + 2 beta) B w1 + 2 beta B w0."""
    ops = operators
    k, a2 = config.dt, config.alpha2
    beta = config.beta if _beta is None else _beta
    t_new = state.t + k

    coef = k * (k * a2 + 2.0 * beta)
    S = be_velocity_matrix(ops, config, state.w, coef)
    load_new = ops.load(t_new)
    rhs = ops.M @ state.w + k * load_new + k * (ops.BT @ state.lam) \
        + (2.0 * k * beta) * (ops.G @ state.w)
    g = ops.dirichlet_values(t_new)
    rhs[ops.bc_dofs] = g[ops.bc_dofs]
    w_new, report = _solve_system(lambda v: S @ v, rhs, config.velocity_tol,
                                  S, _is_stiff(ops, config, state.w, coef),
                                  "velocity")

    rhs_p = ops.Mp @ state.lam - (k * a2 + 2.0 * beta) * (ops.B @ w_new) \
        + (2.0 * beta) * (ops.B @ state.w)
    lam_new, _ = solve_spd(ops.Mp, rhs_p, tol=config.pressure_tol)
    return _make_step(ops, config, problem, state, w_new, lam_new, t_new, report, load_new)


def step_hybrid_be_decoupled_proj(state: State, config: SchemeConfig, problem,
                                  operators: OperatorSet):
    """Decoupled BE step equivalent to the coupled solve: the grad-div term
    applies the pressure-space projection, realized matrix-free inside the
    Krylov product as B^T (Mp^-1 (B x)) with inner mass solves at 1e-12.  The
    G-form matrix serves as the preconditioner template."""
    ops = operators
    k, a2, beta = config.dt, config.alpha2, config.beta
    t_new = state.t + k
    coef = k * (k * a2 + 2.0 * beta)

    S_template = be_velocity_matrix(ops, config, state.w, coef)

    N = assemble_convection(ops.mesh, ops.dofmap, state.w)
    S_plain = ops.M + k * N + (k * config.nu) * ops.A
    keep = 1.0 - ops.bc_mask
    bc_dofs = ops.bc_dofs
    Mp, B, BT = ops.Mp, ops.B, ops.BT

    def project(rhs_p):
        x, rep = cg(lambda v: Mp @ v, rhs_p, tol=1e-12)
        if not rep.converged:
            raise SolverFailure("pressure mass solve did not converge", rep)
        return x

    def matvec(x):
        y = S_plain @ x + coef * (BT @ project(B @ x))
        y *= keep
        y[bc_dofs] += x[bc_dofs]
        return y

    load_new = ops.load(t_new)
    rhs = ops.M @ state.w + k * load_new + k * (BT @ state.lam) \
        + (2.0 * k * beta) * (BT @ project(B @ state.w))
    g = ops.dirichlet_values(t_new)
    rhs[bc_dofs] = g[bc_dofs]

    w_new, report = _solve_system(matvec, rhs, config.velocity_tol,
                                  S_template, _is_stiff(ops, config, state.w, coef),
                                  "projected velocity")

    delta = project(-(k * a2 + 2.0 * beta) * (B @ w_new) + (2.0 * beta) * (B @ state.w))
    lam_new = state.lam + delta
    return _make_step(ops, config, problem, state, w_new, lam_new, t_new, report, load_new)


def step_pp_be(state: State, config: SchemeConfig, problem, operators: OperatorSet):
    """Penalty-only BE step: [M + kN + k nu A + 2 k beta G] w1 = M w0 + k F1;
    the pressure is recovered as lam1 = -2 beta Pi_Q(div w1)."""
    ops = operators
    k, beta = config.dt, config.beta
    t_new = state.t + k

    coef = 2.0 * k * beta
    S = be_velocity_matrix(ops, config, state.w, coef)
    load_new = ops.load(t_new)
    rhs = ops.M @ state.w + k * load_new
    g = ops.dirichlet_values(t_new)
    rhs[ops.bc_dofs] = g[ops.bc_dofs]
    w_new, report = _solve_system(lambda v: S @ v, rhs, config.velocity_tol,
                                  S, _is_stiff(ops, config, state.w, coef),
                                  "velocity")

    d, _ = solve_spd(ops.Mp, ops.B @ w_new, tol=config.pressure_tol)
    lam_new = -2.0 * beta * d
    return _make_step(ops, config, problem, state, w_new, lam_new, t_new, report, load_new)


def step_ac_be(state: State, config: SchemeConfig, problem, operators: OperatorSet):
    """Compression-only BE step: the beta = 0 member of the hybrid family
    (delegates to the decoupled stepper so the reduction is exact):
    [M + kN + k nu A + k^2 alpha^2 G] w1 = M w0 + k F1 + k B^T lam0;
    Mp lam1 = Mp lam0 - k alpha^2 B w1."""
    return step_hybrid_be_decoupled(state, config, problem, operators, _beta=0.0)


# -- filtered steppers --------------------------------------------------------


def _filtered_step(inner):
    def step(state: State, config: SchemeConfig, problem, operators: OperatorSet):
        new_state, diag = inner(state, config, problem, operators)
        if state.w_prev is None:
            return new_state, diag
        w_f = apply_time_filter((state.w_prev, state.w, new_state.w), config.mu)
        lam_f = apply_time_filter((state.lam_prev, state.lam, new_state.lam), config.mu)
        lam_f = _gauge(operators, lam_f)
        load_new = operators.load(new_state.t)
        residual = _energy_identity_residual(
            operators, config, state.w, state.lam, w_f, lam_f, load_new)
        diag_f = StepDiagnostics(
            energy_identity_residual=residual,
            solver_report=diag.solver_report,
            norm_w=l2_norm(w_f, operators.M),
            norm_grad_w=l2_norm(w_f, operators.A),
            norm_div_w=div_norm(w_f, operators.mesh, operators.dofmap),
            norm_lambda=l2_norm(lam_f, operators.Mp),
        )
        return State(w=w_f, lam=lam_f, t=new_state.t,
                     w_prev=state.w, lam_prev=state.lam), diag_f

    return step


step_hybrid_be_filtered = _filtered_step(step_hybrid_be_decoupled)
step_pp_be_filtered = _filtered_step(step_pp_be)
step_ac_be_filtered = _filtered_step(step_ac_be)


# -- trapezoidal steppers -----------------------------------------------------


def _trapezoidal_core(state: State, config: SchemeConfig, problem,
                      operators: OperatorSet, beta: float, penalty_only: bool):
    """Midpoint-variable trapezoidal step.  The solve is posed in
    w_mid = (w0 + w1)/2 with convection transported by the extrapolation
    w* = (3/2) w0 - (1/2) w_prev (bootstrap w_prev := w0), so the Dirichlet
    rows carry the exact trace at the half step and second-order accuracy is
    preserved; afterwards w1 = 2 w_mid - w0."""
    ops = operators
    k, a2 = config.dt, config.alpha2
    t_mid = state.t + 0.5 * k
    t_new = state.t + k
    w_prev = state.w if state.w_prev is None else state.w_prev
    w_star = 1.5 * state.w - 0.5 * w_prev
    N = assemble_convection(ops.mesh, ops.dofmap, w_star)

    if penalty_only:
        graddiv = 2.0 * k * beta
    else:
        graddiv = 0.5 * k * k * a2 + 2.0 * k * beta

    S = 2.0 * ops.M + k * N + (k * config.nu) * ops.A + graddiv * ops.G
    S = apply_dirichlet_rows(S, ops.bc_mask)
    load_mid = ops.load(t_mid)
    rhs = 2.0 * (ops.M @ state.w) + k * load_mid
    if not penalty_only:
        rhs += (2.0 * k * beta) * (ops.G @ state.w) + k * (ops.BT @ state.lam)
    g_mid = ops.dirichlet_values(t_mid)
    rhs[ops.bc_dofs] = g_mid[ops.bc_dofs]

    w_mid, report = _solve_system(lambda v: S @ v, rhs, config.velocity_tol,
                                  S, _is_stiff(ops, config, w_star, 0.5 * graddiv),
                                  "velocity")
    w_new = 2.0 * w_mid - state.w

    if penalty_only:
        d, _ = solve_spd(ops.Mp, ops.B @ w_new, tol=config.pressure_tol)
        lam_new = -2.0 * beta * d
    else:
        rhs_p = -(k * a2) * (ops.B @ w_mid) - (2.0 * beta) * (ops.B @ (w_new - state.w))
        delta, _ = solve_spd(ops.Mp, rhs_p, tol=config.pressure_tol)
        lam_new = state.lam + delta
    return _make_step(ops, config, problem, state, w_new, lam_new, t_new, report, load_mid)


def step_hybrid_trapezoidal(state: State, config: SchemeConfig, problem, operators: OperatorSet):
    """Second-order trapezoidal step of the hybrid relaxation; pressure
    update Mp(lam1 - lam0) = -k alpha^2 B w_mid - 2 beta B (w1 - w0)."""
    return _trapezoidal_core(state, config, problem, operators, config.beta, False)


def step_ac_trapezoidal(state: State, config: SchemeConfig, problem, operators: OperatorSet):
    """Compression-only trapezoidal step (beta = 0 member of the hybrid form)."""
    return _trapezoidal_core(state, config, problem, operators, 0.0, False)


def step_pp_trapezoidal(state: State, config: SchemeConfig, problem, operators: OperatorSet):
    """Penalty-only trapezoidal step; pressure recovered from the end level."""
    return _trapezoidal_core(state, config, problem, operators, config.beta, True)


_STEPPERS = {
    "hybrid_be_coupled": step_hybrid_be_coupled,
    "hybrid_be_decoupled_proj": step_hybrid_be_decoupled_proj,
    "hybrid_be_decoupled": step_hybrid_be_decoupled,
    "hybrid_be_filtered": step_hybrid_be_filtered,
    "hybrid_trapezoidal": step_hybrid_trapezoidal,
    "pp_be": step_pp_be,
    "ac_be": step_ac_be,
    "pp_be_filtered": step_pp_be_filtered,
    "ac_be_filtered": step_ac_be_filtered,
    "pp_trapezoidal": step_pp_trapezoidal,
    "ac_trapezoidal": step_ac_trapezoidal,
}


def get_stepper(method: str):
    try:
        return _STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {METHOD_NAMES}") from None


#: beta value entering the oscillation indicator lam + 2 beta Pi_Q(div w):
#: the hybrid family uses its own beta; for AC the indicator is lam itself,
#: and for PP likewise (its lam + 2 beta Pi_Q div w would vanish identically
#: by construction, carrying no information).
def kappa_beta(method: str, config: SchemeConfig) -> float:
    if method.startswith("hybrid"):
        return config.beta
    return 0.0


# -- steady Stokes ------------------------------------------------------------


def solve_steady_stokes(problem, operators: OperatorSet, tol: float = 1e-10) -> State:
    """Steady Stokes solve nu A u - B^T p = F, B u = 0 with the problem's
    boundary data at t = 0; one pressure dof is pinned during the solve and
    the mean removed afterwards.

    Solved in the unit-viscosity variables (A u - B^T q = F/nu, p = nu q) so
    the Krylov behaviour does not degrade at small nu, with a grad-div
    augmented saddle template for the preconditioner; the linear system itself
    is the plain saddle system.
    """
    ops = operators
    nu = problem.nu
    nvel, npre = ops.n_velocity, ops.n_pressure
    zero_pp = sp.csr_matrix((npre, npre))
    full = sp.bmat([[ops.A, -ops.BT], [ops.B, zero_pp]], format="csr")
    mask = np.concatenate([ops.bc_mask, np.zeros(npre)])
    mask[nvel] = 1.0  # pin the first pressure dof
    full = apply_dirichlet_rows(full, mask)

    rhs = np.concatenate([ops.load(0.0) / nu, np.zeros(npre)])
    g = ops.dirichlet_values(0.0)
    rhs[ops.bc_dofs] = g[ops.bc_dofs]
    rhs[nvel] = 0.0

    pre_mat = sp.bmat([[ops.A + ops.G, -ops.BT], [ops.B, -ops.Mp]], format="csr")
    pre_mat = apply_dirichlet_rows(pre_mat, mask)

    matvec = lambda v: full @ v
    report = None
    for drop_tol, fill_factor in ((1e-6, 30.0), (1e-8, 60.0)):
        pre = make_fill_preconditioner(pre_mat, drop_tol=drop_tol, fill_factor=fill_factor)
        x, report = gmres(
            matvec, rhs, tol=tol, max_iter=_SOLVE_MAX_ITER, restart=200, precondition=pre
        )
        if report.converged:
            break
    else:
        raise SolverFailure("steady Stokes solve did not converge", report)
    w = x[:nvel]
    lam = _gauge(ops, nu * x[nvel:])
    return State(w=w, lam=lam, t=0.0)


# -- simulation driver --------------------------------------------------------


def _initial_state(problem, operators: OperatorSet, config: SchemeConfig) -> State:
    if isinstance(problem.initial, str):
        if problem.initial != "stokes":
            raise ValueError(f"unknown initial-condition mode {problem.initial!r}")
        return solve_steady_stokes(problem, operators, tol=config.velocity_tol)
    u0, p0 = problem.initial
    w = interpolate(operators.dofmap, u0, 0.0)
    lam = _gauge(operators, interpolate(operators.dofmap, p0, 0.0))
    return State(w=w, lam=lam, t=0.0)


def run_simulation(problem, config: SchemeConfig, T: float, callbacks=None,
                   operators: OperatorSet | None = None) -> SimulationResult:
    """Initialize from the problem, advance to time T, and collect one
    TimeSeriesRecord per time level (including t = 0).

    The curvature column is the norm of the second time-difference of the
    method's oscillation indicator (see :func:`kappa_beta`), defined from the
    third time level on.  Any step failure raises :class:`SimulationError`
    carrying the failing step index and the partial record list.
    """
    k = config.dt
    if T < 0:
        raise ValueError("T must be nonnegative")
    nsteps = int(round(T / k))
    if abs(nsteps * k - T) > 1e-12 * max(1.0, abs(T)):
        raise ValueError(f"final time {T} is not a multiple of dt {k}")

    ops = build_operators(problem) if operators is None else operators
    stepper = get_stepper(config.method)
    state = _initial_state(problem, ops, config)
    beta_q = kappa_beta(config.method, config)

    q_levels = [modified_pressure(ops, state.lam, state.w, beta_q, tol=config.pressure_tol)]
    records = [TimeSeriesRecord(
        t=state.t,
        norm_w=l2_norm(state.w, ops.M),
        norm_grad_w=l2_norm(state.w, ops.A),
        norm_div_w=div_norm(state.w, ops.mesh, ops.dofmap),
        norm_lambda=l2_norm(state.lam, ops.Mp),
        kappa=None,
        energy_residual=0.0,
        solver_iterations=0,
    )]
    callbacks = list(callbacks) if callbacks else []
    for cb in callbacks:
        cb(0, state, records[-1])

    for n in range(1, nsteps + 1):
        try:
            state, diag = stepper(state, config, problem, ops)
        except SolverFailure as exc:
            raise SimulationError(n, records, str(exc)) from exc
        q_levels.append(modified_pressure(ops, state.lam, state.w, beta_q,
                                          tol=config.pressure_tol))
        if len(q_levels) > 3:
            q_levels.pop(0)
        kappa = None
        if len(q_levels) == 3:
            kappa = l2_norm(q_levels[2] - 2.0 * q_levels[1] + q_levels[0], ops.Mp)
        records.append(TimeSeriesRecord(
            t=state.t,
            norm_w=diag.norm_w,
            norm_grad_w=diag.norm_grad_w,
            norm_div_w=diag.norm_div_w,
            norm_lambda=diag.norm_lambda,
            kappa=kappa,
            energy_residual=diag.energy_identity_residual,
            solver_iterations=diag.solver_report.iterations,
        ))
        for cb in callbacks:
            cb(n, state, records[-1])
    return SimulationResult(records=records, final_state=state, operators=ops)
