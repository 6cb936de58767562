"""Taylor-Hood (P2 velocity / P1 pressure) elements and operator assembly.

Velocity dofs are component-blocked: scalar node s holds its x-component at
index s and its y-component at index n_scalar + s.  Scalar nodes are the mesh
vertices followed by the edge midpoints.  Pressure dofs coincide with the
vertices.  All integrals use a 7-point rule exact through degree 5, which is
what makes the discrete skew-symmetry of the convection form exact.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh

__all__ = [
    "QuadratureRule",
    "default_rule",
    "DofMap",
    "assemble_velocity_mass",
    "assemble_stiffness",
    "assemble_divergence",
    "assemble_graddiv",
    "assemble_pressure_mass",
    "assemble_pressure_stiffness",
    "assemble_convection",
    "assemble_load",
    "interpolate",
    "project_pressure",
]


@dataclasses.dataclass(frozen=True)
class QuadratureRule:
    """Reference-triangle rule in barycentric coordinates; weights sum to 1/2."""

    points: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,)


def default_rule() -> QuadratureRule:
    """7-point rule, exact for bivariate polynomials of degree <= 5."""
    s = np.sqrt(15.0)
    a1 = (6.0 + s) / 21.0
    a2 = (6.0 - s) / 21.0
    w1 = (155.0 + s) / 2400.0
    w2 = (155.0 - s) / 2400.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 80.0]
    for a, w in ((a1, w1), (a2, w2)):
        pts += [(a, a, 1 - 2 * a), (a, 1 - 2 * a, a), (1 - 2 * a, a, a)]
        wts += [w, w, w]
    return QuadratureRule(np.array(pts), np.array(wts))


def p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 basis at barycentric points; local order v0,v1,v2,m01,m12,m20."""
    L1, L2, L3 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.column_stack([
        L1 * (2 * L1 - 1),
        L2 * (2 * L2 - 1),
        L3 * (2 * L3 - 1),
        4 * L1 * L2,
        4 * L2 * L3,
        4 * L3 * L1,
    ])


def p2_reference_gradients(bary: np.ndarray) -> np.ndarray:
    """Gradients wrt the reference coordinates (xi, eta) = (L2, L3); (nq, 6, 2)."""
    L1, L2, L3 = bary[:, 0], bary[:, 1], bary[:, 2]
    nq = len(bary)
    g = np.zeros((nq, 6, 2))
    dL1 = np.array([-1.0, -1.0])
    dL2 = np.array([1.0, 0.0])
    dL3 = np.array([0.0, 1.0])
    g[:, 0] = (4 * L1 - 1)[:, None] * dL1
    g[:, 1] = (4 * L2 - 1)[:, None] * dL2
    g[:, 2] = (4 * L3 - 1)[:, None] * dL3
    g[:, 3] = 4 * (L2[:, None] * dL1 + L1[:, None] * dL2)
    g[:, 4] = 4 * (L3[:, None] * dL2 + L2[:, None] * dL3)
    g[:, 5] = 4 * (L1[:, None] * dL3 + L3[:, None] * dL1)
    return g


def p1_values(bary: np.ndarray) -> np.ndarray:
    return bary.copy()


_P1_REF_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


class DofMap:
    """Node numbering plus cached per-element geometry and basis tables.

    Attributes
    ----------
    n_vertices, n_edges, n_scalar : counts; n_scalar = n_vertices + n_edges
    n_velocity : 2 * n_scalar (component-blocked ordering)
    n_pressure : n_vertices
    coords : (n_scalar, 2) coordinates of every scalar velocity node
    tri_scalar : (nt, 6) global scalar node ids per triangle
    """

    def __init__(self, mesh: TriMesh, rule: QuadratureRule | None = None):
        self.mesh = mesh
        self.rule = rule or default_rule()
        nv = mesh.n_vertices
        self.n_vertices = nv
        self.n_edges = mesh.n_edges
        self.n_scalar = nv + mesh.n_edges
        self.n_velocity = 2 * self.n_scalar
        self.n_pressure = nv

        midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        self.coords = np.vstack([mesh.vertices, midpoints])
        self.tri_scalar = np.hstack([mesh.triangles, nv + mesh.tri_edges])

        # geometry: affine map F(xi,eta) = p0 + J [xi, eta]
        p = mesh.vertices[mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # (nt, 2, 2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.areas = 0.5 * det
        invJ = np.empty_like(J)
        invJ[:, 0, 0] = J[:, 1, 1] / det
        invJ[:, 0, 1] = -J[:, 0, 1] / det
        invJ[:, 1, 0] = -J[:, 1, 0] / det
        invJ[:, 1, 1] = J[:, 0, 0] / det
        self.invJT = invJ.transpose(0, 2, 1)

        bary = self.rule.points
        self.phi = p2_values(bary)  # (nq, 6)
        self.psi = p1_values(bary)  # (nq, 3)
        gref = p2_reference_gradients(bary)  # (nq, 6, 2)
        # physical gradients per triangle and quad point: (nt, nq, 6, 2)
        self.grad = np.einsum("tcd,qid->tqic", self.invJT, gref)
        self.grad_p1 = np.einsum("tcd,id->tic", self.invJT, _P1_REF_GRAD)  # (nt, 3, 2)
        # physical quadrature points and weights (weights include |T| factor)
        self.quad_xy = np.einsum("qv,tvd->tqd", bary, p)  # (nt, nq, 2)
        self.quad_w = 2.0 * self.areas[:, None] * self.rule.weights[None, :]  # (nt, nq)


# -- scatter helpers ---------------------------------------------------------


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    out = m.tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def _scalar_block_to_velocity(dofmap: DofMap, elem: np.ndarray) -> sp.csr_matrix:
    """Scatter per-element (nt,6,6) scalar matrices block-diagonally over the
    two velocity components."""
    tri = dofmap.tri_scalar
    off = dofmap.n_scalar
    rows = np.repeat(tri[:, :, None], 6, axis=2)
    cols = np.repeat(tri[:, None, :], 6, axis=1)
    r = np.concatenate([rows.ravel(), rows.ravel() + off])
    c = np.concatenate([cols.ravel(), cols.ravel() + off])
    v = np.concatenate([elem.ravel(), elem.ravel()])
    return _scatter(r, c, v, (dofmap.n_velocity, dofmap.n_velocity))


# -- assembly ----------------------------------------------------------------


def assemble_velocity_mass(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    """M[i][j] = integral of phi_i phi_j, block-diagonal over components."""
    wq = dofmap.rule.weights
    mref = 2.0 * np.einsum("q,qi,qj->ij", wq, dofmap.phi, dofmap.phi)
    elem = dofmap.areas[:, None, None] * mref[None, :, :]
    return _scalar_block_to_velocity(dofmap, elem)


def assemble_stiffness(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    """A[i][j] = integral of grad phi_i . grad phi_j (no viscosity factor)."""
    elem = np.einsum("tq,tqic,tqjc->tij", dofmap.quad_w, dofmap.grad, dofmap.grad)
    return _scalar_block_to_velocity(dofmap, elem)


def assemble_divergence(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    """B[q][v] = integral of psi_q * div(phi_v); pressure rows, velocity cols."""
    elem = np.einsum("tq,qp,tqic->tpic", dofmap.quad_w, dofmap.psi, dofmap.grad)
    tri_p = mesh.triangles
    tri_s = dofmap.tri_scalar
    off = dofmap.n_scalar
    rows = np.broadcast_to(tri_p[:, :, None], elem.shape[:3])
    cols = np.broadcast_to(tri_s[:, None, :], elem.shape[:3])
    r = np.concatenate([rows.ravel(), rows.ravel()])
    c = np.concatenate([cols.ravel(), cols.ravel() + off])
    v = np.concatenate([elem[..., 0].ravel(), elem[..., 1].ravel()])
    return _scatter(r, c, v, (dofmap.n_pressure, dofmap.n_velocity))


def assemble_graddiv(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    """G[v][u] = integral of div(phi_u) div(phi_v); couples the components."""
    elem = np.einsum("tq,tqia,tqjb->tiajb", dofmap.quad_w, dofmap.grad, dofmap.grad)
    tri = dofmap.tri_scalar
    off = dofmap.n_scalar
    nt = len(tri)
    # rows: (t, i, a) ; cols: (t, j, b)
    rows = tri[:, :, None, None, None] + np.arange(2)[None, None, :, None, None] * off
    cols = tri[:, None, None, :, None] + np.arange(2)[None, None, None, None, :] * off
    rows = np.broadcast_to(rows, (nt, 6, 2, 6, 2))
    cols = np.broadcast_to(cols, (nt, 6, 2, 6, 2))
    return _scatter(rows, cols, elem, (dofmap.n_velocity, dofmap.n_velocity))


def assemble_pressure_mass(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    wq = dofmap.rule.weights
    mref = 2.0 * np.einsum("q,qi,qj->ij", wq, dofmap.psi, dofmap.psi)
    elem = dofmap.areas[:, None, None] * mref[None, :, :]
    tri = mesh.triangles
    rows = np.repeat(tri[:, :, None], 3, axis=2)
    cols = np.repeat(tri[:, None, :], 3, axis=1)
    return _scatter(rows, cols, elem, (dofmap.n_pressure, dofmap.n_pressure))


def assemble_pressure_stiffness(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    """P1 scalar Laplacian on the pressure space (used by the eigen check)."""
    elem = np.einsum("t,tic,tjc->tij", dofmap.areas, dofmap.grad_p1, dofmap.grad_p1)
    tri = mesh.triangles
    rows = np.repeat(tri[:, :, None], 3, axis=2)
    cols = np.repeat(tri[:, None, :], 3, axis=1)
    return _scatter(rows, cols, elem, (dofmap.n_pressure, dofmap.n_pressure))


def velocity_local_coefficients(dofmap: DofMap, w: np.ndarray) -> np.ndarray:
    """Per-element view of a velocity coefficient vector; (nt, 6, 2)."""
    off = dofmap.n_scalar
    return np.stack([w[dofmap.tri_scalar], w[dofmap.tri_scalar + off]], axis=-1)


def velocity_at_quadrature(dofmap: DofMap, w: np.ndarray) -> np.ndarray:
    """(nt, nq, 2) values of the P2 field at the quadrature points."""
    wloc = velocity_local_coefficients(dofmap, w)
    return np.einsum("tic,qi->tqc", wloc, dofmap.phi)


def divergence_at_quadrature(dofmap: DofMap, w: np.ndarray) -> np.ndarray:
    """(nt, nq) pointwise div of the P2 field at the quadrature points."""
    wloc = velocity_local_coefficients(dofmap, w)
    return np.einsum("tic,tqic->tq", wloc, dofmap.grad)


def pressure_at_quadrature(dofmap: DofMap, lam: np.ndarray) -> np.ndarray:
    return np.einsum("ti,qi->tq", lam[dofmap.mesh.triangles], dofmap.psi)


def assemble_convection(mesh: TriMesh, dofmap: DofMap, w: np.ndarray) -> sp.csr_matrix:
    """Skew-symmetrized convection N(w)[v][u] = (w . grad u, v) + 1/2 ((div w) u, v).

    Block-diagonal over components; linear in w; v' N(w) v vanishes to machine
    precision for v supported away from the boundary because the degree-5 rule
    integrates the degree-5 integrand exactly.
    """
    wq_field = velocity_at_quadrature(dofmap, w)  # (nt, nq, 2)
    divw = divergence_at_quadrature(dofmap, w)  # (nt, nq)
    conv = np.einsum("tqc,tqjc->tqj", wq_field, dofmap.grad)  # (nt, nq, 6)
    elem = np.einsum("tq,qi,tqj->tij", dofmap.quad_w, dofmap.phi, conv)
    elem += 0.5 * np.einsum("tq,tq,qi,qj->tij", dofmap.quad_w, divw, dofmap.phi, dofmap.phi)
    return _scalar_block_to_velocity(dofmap, elem)


def assemble_load(mesh: TriMesh, dofmap: DofMap, f, t: float) -> np.ndarray:
    """Load vector (f(., t), phi_i) per component; f is a vector FieldFn."""
    xq = dofmap.quad_xy
    fv = np.asarray(f(xq[..., 0], xq[..., 1], t), dtype=np.float64)  # (nt, nq, 2)
    coef = np.einsum("tq,tqc,qi->tic", dofmap.quad_w, fv, dofmap.phi)
    out = np.zeros(dofmap.n_velocity)
    off = dofmap.n_scalar
    np.add.at(out, dofmap.tri_scalar.ravel(), coef[..., 0].ravel())
    np.add.at(out, (dofmap.tri_scalar + off).ravel(), coef[..., 1].ravel())
    return out


def interpolate(dofmap: DofMap, g, t: float) -> np.ndarray:
    """Nodal interpolation: velocity fields at all P2 nodes (component-blocked),
    scalar fields at the P1 (vertex) nodes.  The field kind is probed from the
    shape g returns."""
    probe = np.asarray(g(dofmap.coords[:1, 0], dofmap.coords[:1, 1], t))
    if probe.ndim == 2 and probe.shape[-1] == 2:
        vals = np.asarray(g(dofmap.coords[:, 0], dofmap.coords[:, 1], t))
        return np.concatenate([vals[:, 0], vals[:, 1]])
    xy = dofmap.coords[: dofmap.n_pressure]
    return np.asarray(g(xy[:, 0], xy[:, 1], t), dtype=np.float64)


def project_pressure(Mp: sp.csr_matrix, rhs: np.ndarray, tol: float = 1e-12):
    """L2 projection onto the pressure space: solve Mp c = rhs by CG."""
    from .linalg import solve_spd

    x, _ = solve_spd(Mp, rhs, tol=tol)
    return x
