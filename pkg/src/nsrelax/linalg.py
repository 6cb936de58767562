"""Sparse solvers: restarted GMRES with ILU(0), CG, and the smallest
discrete-Laplacian eigenvalue used by the overdamping check.

SparseMatrix is scipy's CSR matrix; its index arrays satisfy the storage
invariants (sorted, duplicate-free columns per row).  All solvers start from
the zero vector and are deterministic for fixed inputs.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp
from numba import njit

SparseMatrix = sp.csr_matrix

__all__ = [
    "SparseMatrix",
    "SolverReport",
    "SolverFailure",
    "make_preconditioner",
    "make_fill_preconditioner",
    "gmres",
    "cg",
    "solve_nonsymmetric",
    "solve_spd",
    "smallest_laplacian_eigenvalue",
    "check_overdamping",
    "OverdampingResult",
]

DEFAULT_TOL = 1e-10
RESTART = 50


@dataclasses.dataclass
class SolverReport:
    iterations: int
    residual: float  # final relative residual
    converged: bool


class SolverFailure(RuntimeError):
    """A Krylov solve did not reach the requested tolerance."""

    def __init__(self, message: str, report: SolverReport):
        super().__init__(f"{message} (iterations={report.iterations}, residual={report.residual:.3e})")
        self.report = report


# -- ILU(0) ------------------------------------------------------------------


@njit(cache=True)
def _ilu0_kernel(n, indptr, indices, data, diag_pos):
    """In-place ILU(0) on CSR arrays.  Returns -1 on success or the row of the
    first (near-)zero pivot."""
    for i in range(n):
        for idx in range(indptr[i], indptr[i + 1]):
            k = indices[idx]
            if k >= i:
                break
            piv = data[diag_pos[k]]
            if abs(piv) < 1e-300:
                return k
            lik = data[idx] / piv
            data[idx] = lik
            for kidx in range(diag_pos[k] + 1, indptr[k + 1]):
                j = indices[kidx]
                lo = idx + 1
                hi = indptr[i + 1] - 1
                while lo <= hi:
                    mid = (lo + hi) // 2
                    jm = indices[mid]
                    if jm == j:
                        data[mid] -= lik * data[kidx]
                        break
                    elif jm < j:
                        lo = mid + 1
                    else:
                        hi = mid - 1
        if abs(data[diag_pos[i]]) < 1e-300:
            return i
    return -1


@njit(cache=True)
def _ilu0_apply(n, indptr, indices, data, diag_pos, b, x):
    # forward solve with unit lower factor, then backward with upper factor
    for i in range(n):
        s = b[i]
        for idx in range(indptr[i], diag_pos[i]):
            s -= data[idx] * x[indices[idx]]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for idx in range(diag_pos[i] + 1, indptr[i + 1]):
            s -= data[idx] * x[indices[idx]]
        x[i] = s / data[diag_pos[i]]


class _Ilu0:
    def __init__(self, A: sp.csr_matrix):
        A = A.tocsr()
        A.sort_indices()
        n = A.shape[0]
        indptr = A.indptr
        indices = A.indices
        diag_pos = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            lo, hi = indptr[i], indptr[i + 1]
            pos = np.searchsorted(indices[lo:hi], i) + lo
            if pos < hi and indices[pos] == i:
                diag_pos[i] = pos
        if np.any(diag_pos < 0):
            raise ZeroDivisionError("missing diagonal entry")
        data = A.data.astype(np.float64).copy()
        bad = _ilu0_kernel(n, indptr, indices, data, diag_pos)
        if bad >= 0:
            raise ZeroDivisionError(f"zero pivot in row {bad}")
        self.n = n
        self.indptr = indptr
        self.indices = indices
        self.data = data
        self.diag_pos = diag_pos

    def __call__(self, b: np.ndarray) -> np.ndarray:
        x = np.empty_like(b)
        _ilu0_apply(self.n, self.indptr, self.indices, self.data, self.diag_pos, b, x)
        return x


class _Jacobi:
    def __init__(self, A: sp.csr_matrix):
        d = A.diagonal().astype(np.float64)
        d[np.abs(d) < 1e-300] = 1.0  # guard so the fallback is always defined
        self.inv = 1.0 / d

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return self.inv * b


def make_preconditioner(A: sp.csr_matrix):
    """ILU(0); Jacobi when the factorization hits a zero pivot or a missing
    diagonal."""
    try:
        return _Ilu0(A)
    except ZeroDivisionError:
        return _Jacobi(A)


def make_fill_preconditioner(A: sp.spmatrix, drop_tol: float = 1e-5,
                             fill_factor: float = 15.0):
    """Threshold incomplete LU with fill (SuperLU's ILUTP via scipy).

    Much stronger than ILU(0) on operators dominated by a large grad-div
    (or otherwise near-singular) term; falls back to :func:`make_preconditioner`
    when the incomplete factorization breaks down."""
    import scipy.sparse.linalg as spla

    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=drop_tol, fill_factor=fill_factor)
    except RuntimeError:
        return make_preconditioner(sp.csr_matrix(A))
    return ilu.solve


# -- Krylov iterations --------------------------------------------------------


def gmres(matvec, b, tol=DEFAULT_TOL, max_iter=None, restart=RESTART, precondition=None):
    """Right-preconditioned restarted GMRES from the zero initial guess.

    matvec and precondition are callables; returns (x, SolverReport).  Does not
    raise on failure; callers wanting the failure contract use
    solve_nonsymmetric.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolverReport(0, 0.0, True)
    if precondition is None:
        precondition = lambda v: v

    x = np.zeros(n)
    total = 0
    res = 1.0
    while total < max_iter:
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        res = beta / bnorm
        if res <= tol:
            return x, SolverReport(total, res, True)
        m = min(restart, max_iter - total)
        V = np.empty((m + 1, n))
        Z = np.empty((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j = 0
        while j < m:
            Z[j] = precondition(V[j])
            w = matvec(Z[j])
            wnorm0 = np.linalg.norm(w)
            # modified Gram-Schmidt with one reorthogonalization pass
            for i in range(j + 1):
                h = np.dot(w, V[i])
                H[i, j] = h
                w -= h * V[i]
            for i in range(j + 1):
                h2 = np.dot(w, V[i])
                H[i, j] += h2
                w -= h2 * V[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            breakdown = hnext <= 1e-14 * max(wnorm0, 1e-300)
            if not breakdown:
                V[j + 1] = w / hnext
            # Givens elimination of the new subdiagonal
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = H[j, j] / denom
                sn[j] = H[j + 1, j] / denom
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j += 1
            if breakdown or abs(g[j]) / bnorm <= 0.5 * tol or total >= max_iter:
                break
        # solve the small triangular system and update x
        y = np.zeros(j)
        for i in range(j - 1, -1, -1):
            s = g[i] - H[i, i + 1:j] @ y[i + 1:]
            y[i] = s / H[i, i] if H[i, i] != 0.0 else 0.0
        x = x + Z[:j].T @ y
        res = np.linalg.norm(b - matvec(x)) / bnorm
        if res <= tol:
            return x, SolverReport(total, res, True)
    return x, SolverReport(total, res, False)


def cg(matvec, b, tol=DEFAULT_TOL, max_iter=None):
    """Plain conjugate gradients from the zero initial guess."""
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolverReport(0, 0.0, True)
    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rr = np.dot(r, r)
    it = 0
    res = np.sqrt(rr) / bnorm
    while it < max_iter:
        Ap = matvec(p)
        pAp = np.dot(p, Ap)
        if pAp <= 0.0:
            break  # not SPD on this subspace; report failure below
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rr_new = np.dot(r, r)
        res = np.sqrt(rr_new) / bnorm
        if res <= tol:
            return x, SolverReport(it, res, True)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, SolverReport(it, res, False)


def solve_nonsymmetric(A: sp.spmatrix, b: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int | None = None):
    """Restarted GMRES with ILU(0) (Jacobi on zero pivot).  Raises
    SolverFailure when the tolerance is not met within max_iter."""
    A = A.tocsr()
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise ValueError("shape mismatch")
    M = make_preconditioner(A)
    x, report = gmres(lambda v: A @ v, b, tol=tol, max_iter=max_iter, precondition=M)
    if not report.converged:
        raise SolverFailure("GMRES did not converge", report)
    return x, report


def solve_spd(A: sp.spmatrix, b: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int | None = None):
    """Conjugate gradients; raises SolverFailure when not converged."""
    A = A.tocsr()
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise ValueError("shape mismatch")
    x, report = cg(lambda v: A @ v, b, tol=tol, max_iter=max_iter)
    if not report.converged:
        raise SolverFailure("CG did not converge", report)
    return x, report


# -- smallest Laplacian eigenvalue --------------------------------------------


def smallest_laplacian_eigenvalue(mesh, dofmap, bc: str = "neumann_zero_mean", tol: float = 1e-6, max_iter: int = 200) -> float:
    """Smallest generalized eigenvalue of the P1 Laplacian, K c = sigma Mp c.

    bc="neumann_zero_mean": smallest nonzero eigenvalue, constant mode deflated.
    bc="dirichlet": boundary vertices eliminated.
    Inverse power iteration; relative eigenvalue tolerance ``tol``.
    """
    from . import fespace, mesh as mesh_mod

    if bc not in ("neumann_zero_mean", "dirichlet"):
        raise ValueError(f"unknown bc {bc!r}")
    K = fespace.assemble_pressure_stiffness(mesh, dofmap)
    Mp = fespace.assemble_pressure_mass(mesh, dofmap)
    n = K.shape[0]

    if bc == "dirichlet":
        on_boundary = np.zeros(n, dtype=bool)
        on_boundary[np.unique(mesh.boundary_edges.ravel())] = True
        keep = np.where(~on_boundary)[0]
        K = K[keep][:, keep].tocsr()
        Mp = Mp[keep][:, keep].tocsr()
        n = len(keep)
        x = np.ones(n)
        project = None
        matvec = lambda v: K @ v
    else:
        m = np.asarray(Mp @ np.ones(n))
        volume = float(m.sum())

        def project(v):
            return v - (np.dot(m, v) / volume) * np.ones(n)

        # rank-one shift makes the operator SPD while acting as K on the
        # zero-mean subspace
        def matvec(v):
            return K @ v + m * (np.dot(m, v) / volume)

        x = dofmap.coords[:n, 0].copy()
        x = project(x)

    x /= np.sqrt(np.dot(x, Mp @ x))
    sigma = float(np.dot(x, K @ x))
    for it in range(max_iter):
        rhs = np.asarray(Mp @ x)
        y, rep = cg(matvec, rhs, tol=1e-12, max_iter=50 * n)
        if not rep.converged:
            raise SolverFailure("inverse power iteration inner solve stalled", rep)
        if project is not None:
            y = project(y)
        ynorm = np.sqrt(np.dot(y, Mp @ y))
        if ynorm == 0.0:
            raise SolverFailure("inverse power iteration collapsed", SolverReport(it, np.inf, False))
        x = y / ynorm
        sigma_new = float(np.dot(x, K @ x))
        if abs(sigma_new - sigma) <= tol * abs(sigma_new):
            return sigma_new
        sigma = sigma_new
    raise SolverFailure(
        "inverse power iteration stagnated", SolverReport(max_iter, abs(sigma_new - sigma) / abs(sigma_new), False)
    )


@dataclasses.dataclass(frozen=True)
class OverdampingResult:
    overdamped: bool
    margin: float  # sqrt(sigma_min) - alpha/beta


def check_overdamping(alpha: float, beta: float, sigma_min: float) -> OverdampingResult:
    """Pressure oscillations are overdamped iff alpha/beta < sqrt(sigma_min)
    (strict; equality counts as not overdamped)."""
    if alpha <= 0 or beta <= 0 or sigma_min <= 0:
        raise ValueError("alpha, beta, sigma_min must be positive")
    ratio = alpha / beta
    root = float(np.sqrt(sigma_min))
    return OverdampingResult(overdamped=bool(ratio < root), margin=root - ratio)
