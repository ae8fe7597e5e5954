"""Linear algebra shared by the solvers.

* Fourier-diagonal preconditioners for operators a*Lap + b.
* Dense assembly of Lap_h + V for eigenvalue work on coarse grids.
* A small Newton-Krylov driver with finite-difference Jacobian-vector products,
  GMRES inner solves and Armijo backtracking on the sup norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.linalg import eigh
from scipy.sparse.linalg import LinearOperator, eigsh, gmres

from . import grid as fc
from .errors import ConvergenceError
from .grid import Grid

DENSE_LIMIT = 2000


def laplacian_symbol(grid: Grid, h: np.ndarray | None = None) -> np.ndarray:
    """Fourier symbol of a constant-coefficient Laplacian close to Lap_h.

    Uses the volume-weighted mean of sqrt(g) h^{ij} divided by the mean volume,
    which is exact for metrics that are constant multiples of a flat one.
    """
    # the spectral derivative annihilates Nyquist indices, so they carry no symbol
    ks = tuple(np.where(np.abs(k) == np.max(np.abs(k)), 0.0, k) for k in grid.wavenumbers)
    if h is None:
        return -sum(k * k for k in ks)
    hinv = fc.inverse(h)
    w = np.sqrt(fc.det(h))
    coef = np.einsum("ijk,k->ij", hinv.reshape(hinv.shape[:2] + (-1,)), w.ravel()) / np.sum(w)
    sym = 0.0
    for i in range(grid.dim):
        for j in range(grid.dim):
            sym = sym - coef[i, j] * ks[i] * ks[j]
    return sym * np.ones(grid.shape)


def fourier_preconditioner(grid: Grid, a: float, b, h: np.ndarray | None = None, floor: float = 1e-12) -> LinearOperator:
    """Approximate inverse of a*Lap + b by division in Fourier space.

    ``b`` may be a scalar or a field; a field is replaced by its mean. Modes whose
    symbol falls below ``floor`` in magnitude pass through unchanged.
    """
    b = float(np.mean(b))
    sym = a * laplacian_symbol(grid, h) + b
    sym = np.where(np.abs(sym) < floor, 1.0, sym)

    def apply(v):
        f = np.asarray(v, dtype=float).reshape(grid.shape)
        return sfft.ifftn(sfft.fftn(f) / sym).real.ravel()

    return LinearOperator((grid.size, grid.size), matvec=apply, dtype=float)


# -- dense operators -------------------------------------------------------------------

_BASES: dict = {}


def remove_nyquist(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Orthogonal projection of grid-shaped arrays onto modes without Nyquist content."""
    axes = tuple(range(f.ndim - grid.dim, f.ndim))
    return sfft.ifftn(np.where(grid.nyquist_mask, 0.0, sfft.fftn(f, axes=axes)), axes=axes).real


def resolved_basis(grid: Grid) -> np.ndarray:
    """Orthonormal basis (columns) of grid functions with no Nyquist content."""
    key = (grid.resolution, grid.period)
    if key not in _BASES:
        eye = np.eye(grid.size).reshape((grid.size,) + grid.shape)
        P = remove_nyquist(grid, eye).reshape(grid.size, grid.size)
        w, V = np.linalg.eigh(0.5 * (P + P.T))
        _BASES[key] = V[:, w > 0.5]
    return _BASES[key]


def dense_laplacian(grid: Grid, h: np.ndarray, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Dense matrix of Lap_h on the grid and the weights W = sqrt(det h).

    W L is symmetric up to roundoff because the spectral first-derivative
    matrices are antisymmetric.
    """
    N = grid.size
    hinv = fc.inverse(h)
    w = np.sqrt(fc.det(h))
    L = np.empty((N, N))
    eye = np.eye(N)
    for start in range(0, N, chunk):
        block = eye[start:start + chunk].reshape((-1,) + grid.shape)
        L[:, start:start + chunk] = fc.laplace_beltrami(grid, block, h, hinv=hinv, sqrtg=w).reshape(len(block), N).T
    return L, w.ravel()


def symmetric_operator(grid: Grid, h: np.ndarray, potential, scale: float = 1.0, lap=None) -> np.ndarray:
    """W^{1/2} (scale*Lap_h + V) W^{-1/2}, symmetrized; same spectrum as scale*Lap_h + V."""
    L, w = lap if lap is not None else dense_laplacian(grid, h)
    s = np.sqrt(w)
    S = scale * (s[:, None] * L / s[None, :])
    S = 0.5 * (S + S.T)
    S[np.diag_indices_from(S)] += np.broadcast_to(np.asarray(potential, dtype=float), grid.shape).ravel()
    return S


def lowest_eigenvalues(grid: Grid, h: np.ndarray, potential, k: int = 1, scale: float = 1.0,
                       sigma: float | None = None) -> np.ndarray:
    """Smallest k eigenvalues of -(scale*Lap_h + V), ascending.

    Modes with Nyquist content are not resolved by the spectral derivative and
    are excluded. Dense on grids up to DENSE_LIMIT points; otherwise
    shift-invert Lanczos with a GMRES-based inverse, where the excluded modes
    are pushed above the wanted window.
    """
    if grid.size <= DENSE_LIMIT:
        Q = resolved_basis(grid)
        S = Q.T @ symmetric_operator(grid, h, potential, scale) @ Q
        return eigh(-S, eigvals_only=True, subset_by_index=[0, k - 1])
    hinv = fc.inverse(h)
    w = np.sqrt(fc.det(h))
    s = np.sqrt(w)
    pot = np.broadcast_to(np.asarray(potential, dtype=float), grid.shape)

    penalty = 10.0 * (scale * float(np.max(-laplacian_symbol(grid, h))) + float(np.max(np.abs(pot))))

    def op(v):
        f = np.asarray(v).reshape(grid.shape)
        pf = remove_nyquist(grid, f)
        out = -(scale * s * fc.laplace_beltrami(grid, pf / s, h, hinv=hinv, sqrtg=w) + pot * pf)
        return (remove_nyquist(grid, out) + penalty * (f - pf)).ravel()

    A = LinearOperator((grid.size, grid.size), matvec=op, dtype=float)
    shift = float(np.min(-pot)) - 1.0 if sigma is None else sigma
    M = fourier_preconditioner(grid, -scale, -float(np.mean(pot)) - shift, h)

    def opinv(v):
        shifted = LinearOperator(A.shape, matvec=lambda z: A.matvec(z) - shift * z, dtype=float)
        x, info = gmres(shifted, v, M=M, rtol=1e-12, atol=0.0, restart=60, maxiter=50)
        # the preconditioned residual can stall at roundoff; judge by the true one
        true = float(np.linalg.norm(shifted.matvec(x) - v)) / max(float(np.linalg.norm(v)), 1e-300)
        if info != 0 and true > 1e-10:
            raise ConvergenceError("inner GMRES failed in shift-invert eigensolve", info=int(info), residual=true)
        return x

    OPinv = LinearOperator(A.shape, matvec=opinv, dtype=float)
    vals = eigsh(A, k=k, sigma=shift, which="LM", OPinv=OPinv, tol=1e-12, return_eigenvectors=False)
    return np.sort(vals)


# -- Newton-Krylov -------------------------------------------------------------------------


@dataclass
class NewtonResult:
    x: np.ndarray
    residual: float
    update_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    update_history: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)


def fd_jvp(F, x: np.ndarray, v: np.ndarray, base: float = 1e-5) -> np.ndarray:
    vmax = float(np.max(np.abs(v)))
    if vmax == 0.0:
        return np.zeros_like(x)
    h = base / vmax
    return (F(x + h * v) - F(x - h * v)) / (2 * h)


def newton_krylov(F, x0: np.ndarray, precond: LinearOperator | None = None, jvp=None, tol: float = 1e-10,
                  update_tol: float = 1e-10, update_norm=None, maxiter: int = 25, fd_step: float = 1e-5,
                  gmres_restart: int = 40, gmres_maxiter: int = 2, raise_on_failure: bool = True) -> NewtonResult:
    """Damped inexact Newton iteration for F(x) = 0 on grid-shaped arrays.

    Converged once sup|F| < tol and the norm of the last update is below
    update_tol. The iteration count reported is the number of corrections
    applied before the residual first met tol.
    """
    shape = np.shape(x0)
    x = np.array(x0, dtype=float)
    norm = update_norm or (lambda d: float(np.max(np.abs(d))))
    r = F(x)
    res = float(np.max(np.abs(r)))
    out = NewtonResult(x, res, np.inf, 0, False, [res])
    iterations = None
    for it in range(maxiter + 1):
        if res < tol and iterations is None:
            iterations = it
        if res < 1e-300:
            out.update_norm = 0.0
            out.update_history.append(0.0)
            out.converged = True
            break
        if jvp is None:
            J = LinearOperator((x.size, x.size), matvec=lambda v: fd_jvp(F, x, v.reshape(shape), fd_step).ravel(),
                               dtype=float)
        else:
            J = LinearOperator((x.size, x.size), matvec=lambda v: jvp(x, v.reshape(shape)).ravel(), dtype=float)
        counter = [0]
        # once the residual is at tolerance the step only certifies the update norm
        forcing = 0.1 if res < tol else max(min(1e-2, 0.1 * res), 1e-6)
        d, info = gmres(J, -r.ravel(), M=precond, rtol=forcing, atol=0.0, restart=gmres_restart,
                        maxiter=gmres_maxiter, callback=lambda _: counter.__setitem__(0, counter[0] + 1),
                        callback_type="pr_norm")
        d = d.reshape(shape)
        out.linear_iterations.append(counter[0])
        lam = 1.0
        while True:
            xn = x + lam * d
            rn = F(xn)
            resn = float(np.max(np.abs(rn)))
            if resn <= (1 - 1e-4 * lam) * res or lam < 1 / 64 or (res < tol and resn <= 10 * res):
                break
            lam *= 0.5
        step_norm = norm(lam * d)
        out.update_history.append(step_norm)
        if resn <= res or res >= tol:
            x, r, res = xn, rn, resn
        out.history.append(res)
        out.update_norm = step_norm
        if res < tol and iterations is None:
            iterations = it + 1
        if res < tol and step_norm < update_tol:
            out.converged = True
            break
        if lam < 1 / 64 and resn > res:
            break
    out.x = x
    out.residual = res
    out.iterations = iterations if iterations is not None else maxiter
    if not out.converged and raise_on_failure:
        raise ConvergenceError(f"Newton did not converge: residual {res:.3e}, last update {out.update_norm:.3e}",
                               residual=res, history=out.history)
    return out
