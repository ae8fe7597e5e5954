"""Normalizing kappa2 to a constant by a conformal change of h0.

The target is

    e^{-2 phi0} (kappa2 + Lap phi0 + (n-2)/2 |grad phi0|^2) = kbar2.

For n >= 3 the substitution u = e^{(n-2) phi0 / 2} turns this into

    Lap u + c kappa2 u - c kbar2 u^p = 0,   c = (n-2)/2,  p = (n+2)/(n-2),

which is reached through subcritical exponents: a preconditioned descent on
E_p at p = 1.2, then Newton continuation with p stepping geometrically toward
the critical value. For n = 2 the equation is solved directly by Newton.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import grid as fc
from .ambient import KappaPair, MetricExpansion, kappas
from .errors import ConvergenceError, DegenerateProblemError, ValidationError
from .extrinsic import transform_kappas
from .grid import Grid
from .linalg import fourier_preconditioner, laplacian_symbol, lowest_eigenvalues, newton_krylov, symmetric_operator

ZERO_TOL = 1e-8


def apply_gcl(grid: Grid, u: np.ndarray, h0: np.ndarray, kappa2) -> np.ndarray:
    """Generalized conformal Laplacian -(Lap u + (n-2)/2 kappa2 u)."""
    n = grid.dim
    return -(fc.laplace_beltrami(grid, u, h0) + 0.5 * (n - 2) * kappa2 * u)


def invariant_sign(m: MetricExpansion, kappa2: np.ndarray | None = None) -> tuple[str, float]:
    """Sign of the generalized boundary Yamabe invariant and the value it came from."""
    g = m.grid
    k2 = kappas(m).kappa2 if kappa2 is None else kappa2
    if g.dim == 2:
        value = -fc.integrate(g, k2, m.h0)
    else:
        value = float(lowest_eigenvalues(g, m.h0, 0.5 * (g.dim - 2) * k2, k=1)[0])
    if abs(value) < ZERO_TOL:
        return "zero-indeterminate", value
    return ("positive" if value > 0 else "negative"), value


@dataclass
class YamabeSolution:
    phi0: np.ndarray
    kappa_bar2: float
    residual: float
    nondegenerate: bool | None = None
    lambda_min: float | None = None
    ladder: list = field(default_factory=list)
    newton_history: list = field(default_factory=list)

    @property
    def u0(self) -> np.ndarray | None:
        n = self.phi0.ndim
        if n < 3:
            return None
        return np.exp(0.5 * (n - 2) * self.phi0)

    def to_dict(self) -> dict:
        return {"kappa_bar2": self.kappa_bar2, "residual": self.residual, "nondegenerate": self.nondegenerate,
                "lambda_min": self.lambda_min}


def normalized_residual(grid: Grid, h0: np.ndarray, kappa2: np.ndarray, phi0: np.ndarray, kbar2: float) -> float:
    k = transform_kappas(KappaPair(np.zeros(grid.shape), kappa2), phi0, h0, grid)
    return float(np.max(np.abs(k.kappa2 - kbar2)))


def _solve_2d(grid: Grid, h0: np.ndarray, kappa2: np.ndarray, kbar2: float, init: np.ndarray, tol: float):
    hinv = fc.inverse(h0)
    w = np.sqrt(fc.det(h0))
    lap = lambda f: fc.laplace_beltrami(grid, f, h0, hinv=hinv, sqrtg=w)
    F = lambda phi: kappa2 + lap(phi) - kbar2 * np.exp(2 * phi)
    jvp = lambda phi, v: lap(v) - 2 * kbar2 * np.exp(2 * phi) * v
    M = fourier_preconditioner(grid, 1.0, -2 * kbar2, h0)
    return newton_krylov(F, init, M, jvp=jvp, tol=tol, update_tol=tol)


def fixed_point_2d(grid: Grid, h0: np.ndarray, kappa2: np.ndarray, kbar2: float, tol: float = 1e-11,
                   maxiter: int = 20000) -> np.ndarray:
    """Monotone iteration (c - Lap) phi_{k+1} = c phi_k + kappa2 - kbar2 e^{2 phi_k}.

    Independent of Newton; only meant for coarse grids with a flat-ish h0 where
    the constant-coefficient inverse is exact.
    """
    if kbar2 <= 0:
        raise ValidationError("fixed-point oracle needs kbar2 > 0")
    hinv = fc.inverse(h0)
    w = np.sqrt(fc.det(h0))
    phi = np.zeros(grid.shape)
    # phi stays between the constant sub/super solutions, where c dominates the nonlinearity's slope
    bound = 0.5 * np.log(max(np.max(np.abs(kappa2)), kbar2) / kbar2)
    c = 2 * kbar2 * np.exp(2 * bound) + 1.0
    sym0 = laplacian_symbol(grid, h0)
    for _ in range(maxiter):
        # the variable-coefficient remainder Lap_h - Lap_0 is lagged
        rest = fc.laplace_beltrami(grid, phi, h0, hinv=hinv, sqrtg=w) - sfft.ifftn(sym0 * sfft.fftn(phi)).real
        rhs = c * phi + kappa2 - kbar2 * np.exp(2 * phi) + rest
        new = sfft.ifftn(sfft.fftn(rhs) / (c - sym0)).real
        if np.max(np.abs(new - phi)) < tol:
            return new
        phi = new
    raise ConvergenceError("fixed-point iteration did not converge")


def _subcritical_residual(grid, lap, kappa2, kbar2, p, u):
    c = 0.5 * (grid.dim - 2)
    return lap(u) + c * kappa2 * u - c * kbar2 * np.abs(u) ** (p - 1) * u


def _descend(grid, lap, h0, kappa2, kbar2, p, u, iters=400, tau=0.5):
    """Preconditioned gradient descent on E_p (gradient = minus the Euler-Lagrange residual)."""
    M = fourier_preconditioner(grid, -1.0, 1.0, h0)       # (1 - Lap)^{-1}
    for _ in range(iters):
        r = _subcritical_residual(grid, lap, kappa2, kbar2, p, u)
        u = u + tau * M.matvec(r.ravel()).reshape(grid.shape)
    return u


def energy(grid: Grid, h0: np.ndarray, kappa2: np.ndarray, kbar2: float, p: float, u: np.ndarray) -> float:
    n = grid.dim
    c = 0.5 * (n - 2)
    hinv = fc.inverse(h0)
    d = grid.grad(u)
    gsq = np.einsum("ij...,i...,j...->...", hinv, d, d)
    return (0.5 * fc.integrate(grid, gsq - c * kappa2 * u * u, h0)
            + c / (p + 1) * kbar2 * fc.integrate(grid, np.abs(u) ** (p + 1), h0))


def _solve_nd(grid, h0, kappa2, kbar2, init_u, tol, ratio=0.5, p_start=1.2):
    n = grid.dim
    c = 0.5 * (n - 2)
    crit = (n + 2) / (n - 2)
    hinv = fc.inverse(h0)
    w = np.sqrt(fc.det(h0))
    lap = lambda f: fc.laplace_beltrami(grid, f, h0, hinv=hinv, sqrtg=w)
    k2max = float(np.max(np.abs(kappa2)))
    u = np.ones(grid.shape) if init_u is None else init_u.copy()
    u = _descend(grid, lap, h0, kappa2, kbar2, p_start, u)
    ladder = []
    ps = [p_start]
    gap = crit - p_start
    while ps[-1] < 0.999 * crit:
        gap *= ratio
        ps.append(min(crit - gap, crit))
    ps.append(crit)
    history = []
    for p in ps:
        F = lambda v, p=p: _subcritical_residual(grid, lap, kappa2, kbar2, p, v)
        jvp = lambda v, d, p=p: lap(d) + c * kappa2 * d - c * p * kbar2 * np.abs(v) ** (p - 1) * d
        shift = float(np.mean(c * kappa2 - c * p * kbar2 * np.abs(u) ** (p - 1)))
        M = fourier_preconditioner(grid, 1.0, shift, h0)
        res = newton_krylov(F, u, M, jvp=jvp, tol=tol, update_tol=tol)
        u = res.x
        if np.min(u) <= 0:
            raise ConvergenceError(f"solution lost positivity at p = {p:.6g}")
        imax = np.unravel_index(np.argmax(u), grid.shape)
        umax = float(u[imax])
        ladder.append({
            "p": p,
            "residual": res.residual,
            "u_max": umax,
            "energy": energy(grid, h0, kappa2, kbar2, p, u),
            "apriori_lhs": kbar2 * umax ** (p - 1),
            "apriori_rhs": k2max,
            "apriori_ok": kbar2 * umax ** (p - 1) <= k2max * (1 + 1e-10),
            "max_principle_ok": float(kappa2[imax]) * umax >= kbar2 * umax**p * (1 - 1e-8),
        })
        history.append(res.history)
    return u, ladder, history


def normalize_kappa2(m: MetricExpansion, kappa_bar2: float | None = None, init: np.ndarray | None = None,
                     tol: float = 1e-10, kappa2: np.ndarray | None = None, check_nondegeneracy: bool = True
                     ) -> YamabeSolution:
    """Find phi0 making the transformed kappa2 constant."""
    g = m.grid
    n = g.dim
    h0 = m.h0
    k2 = kappas(m).kappa2 if kappa2 is None else np.asarray(kappa2, dtype=float)
    if np.ptp(k2) < 1e-14 and init is None:
        sol = YamabeSolution(np.zeros(g.shape), float(np.mean(k2)), 0.0)
    elif n == 2:
        kbar = fc.integrate(g, k2, h0) / fc.integrate(g, np.ones(g.shape), h0) if kappa_bar2 is None else kappa_bar2
        if abs(kbar) < ZERO_TOL:
            raise DegenerateProblemError("mean of kappa2 vanishes; the normalized linearization is singular")
        if kbar < 0 and init is None:
            raise ValidationError("positive generalized invariant: kappa_bar2 and lambda_1 must have opposite signs; "
                                  "supply an initial guess to attempt a solve", kappa_bar2=float(kbar))
        start = np.zeros(g.shape) if init is None else init
        res = _solve_2d(g, h0, k2, float(kbar), start, tol)
        sol = YamabeSolution(res.x, float(kbar), normalized_residual(g, h0, k2, res.x, kbar),
                             newton_history=[res.history])
    else:
        sign, lam = invariant_sign(m, k2)
        if kappa_bar2 is None:
            kbar = float(np.mean(k2)) if np.mean(k2) > 0 else 1.0
        else:
            kbar = float(kappa_bar2)
        if sign != "negative" and init is None:
            raise ValidationError(f"generalized invariant is {sign} (lambda_1 = {lam:.3e}); kappa_bar2 > 0 needs "
                                  "lambda_1 < 0, supply an initial guess to override", lambda_1=lam)
        init_u = None if init is None else np.exp(0.5 * (n - 2) * init)
        u, ladder, hist = _solve_nd(g, h0, k2, kbar, init_u, tol)
        phi0 = 2.0 / (n - 2) * np.log(u)
        sol = YamabeSolution(phi0, kbar, normalized_residual(g, h0, k2, phi0, kbar), ladder=ladder,
                             newton_history=hist)
    if check_nondegeneracy and g.size <= 4096:
        sol.nondegenerate, sol.lambda_min = nondegeneracy(sol, m, k2)
    return sol


def nondegeneracy(sol: YamabeSolution, m: MetricExpansion, kappa2: np.ndarray | None = None) -> tuple[bool, float]:
    """Least-magnitude eigenvalue of the linearized normalization equation."""
    g = m.grid
    n = g.dim
    if n == 2:
        hbar = np.exp(2 * sol.phi0) * m.h0
        pot = -2 * sol.kappa_bar2 * np.ones(g.shape)
        S = symmetric_operator(g, hbar, pot)
    else:
        k2 = kappas(m).kappa2 if kappa2 is None else kappa2
        u = np.exp(0.5 * (n - 2) * sol.phi0)
        pot = 0.5 * (n - 2) * k2 - 0.5 * (n + 2) * sol.kappa_bar2 * u ** (4.0 / (n - 2))
        S = symmetric_operator(g, m.h0, pot)
    vals = np.linalg.eigvalsh(S)
    lam = float(vals[np.argmin(np.abs(vals))])
    return abs(lam) > ZERO_TOL, lam
