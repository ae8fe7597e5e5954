"""Extrinsic geometry of the leaves {x e^phi = eps}.

Everything is assembled pointwise at the leaf point (x_star(y), y) in the
(x, y) splitting of gbar = dx^2 + h(x). Spatial derivatives of phi come from
the extension; p = d_x phi and its derivatives are then recomputed from the
Hamilton-Jacobi relation itself, so the relation holds exactly at the leaf and
the tensor A below annihilates the normal to roundoff.

Notation: A = x^2 II is the second fundamental form of the level sets of
x_hat = x e^phi written against gbar, and the leaf shape operator is
gbar_T^{-1} A_T with T the tangent frame d_i + s_i d_x.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.sparse.linalg import LinearOperator

from . import grid as fc
from .ambient import KappaPair, MetricExpansion
from .errors import BranchError, StepSizeError, ValidationError
from .hj import ExtendedFactor, LevelSet, default_x_eval, extend, locate_level_set


@dataclass
class LeafGeometry:
    """All pointwise ingredients on one leaf."""

    level_set: LevelSet
    x: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    p: np.ndarray
    grad_sq: np.ndarray          # |grad phi|^2 in gbar
    lap: np.ndarray              # Laplacian of phi in gbar
    trace_dxh: np.ndarray        # tr^h d_x h at x_star
    h: np.ndarray
    A_T: np.ndarray
    g_T: np.ndarray
    A_full: dict

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def bracket(self) -> np.ndarray:
        """Delta phi + (n-1)/2 |grad phi|^2, the second-order part of n - H."""
        return self.lap + 0.5 * (self.n - 1) * self.grad_sq

    def n_value(self) -> np.ndarray:
        """(n - H)/eps^2 assembled without cancellation."""
        return np.exp(-2 * self.phi) * (0.5 * self.trace_dxh / self.x + self.bracket)

    def ntilde_value(self) -> np.ndarray:
        """(n - H)/eps assembled without cancellation."""
        return np.exp(-self.phi) * (0.5 * self.trace_dxh + self.x * self.bracket)

    def mean_curvature(self) -> np.ndarray:
        return self.n - self.x * (0.5 * self.trace_dxh + self.x * self.bracket)

    def shape_operator(self) -> np.ndarray:
        """B = g_T^{-1} A_T, returned with matrix axes first."""
        B = np.linalg.solve(_last(self.g_T), _last(self.A_T))
        return _first(B)

    def shifted_shape_operator(self) -> np.ndarray:
        """X = B - I, formed as g_T^{-1}(A_T - g_T) to keep small leaves accurate."""
        X = np.linalg.solve(_last(self.g_T), _last(self.A_T - self.g_T))
        return _first(X)

    def principal_curvatures(self) -> np.ndarray:
        """Sorted eigenvalues of B, via the g_T-orthonormalized symmetric form."""
        L = np.linalg.cholesky(_last(self.g_T))
        Li = np.linalg.inv(L)
        S = Li @ _last(self.A_T) @ np.swapaxes(Li, -1, -2)
        lam = np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, -1, -2)))
        return np.moveaxis(lam, -1, 0)

    def normal_leak(self) -> float:
        """max |A(N, .)| relative to |A|; zero up to roundoff when the HJ relation holds."""
        A = self.A_full
        s = -self.dphi * self.x / (1 + self.x * self.p)   # s_i
        # the leaf conormal is dx - s_i dy^i; raising with gbar gives d_x - h^{ij} s_j d_i
        hinv = fc.inverse(self.h)
        nu_y = -np.einsum("ij...,j...->i...", hinv, s)
        col_x = A["xx"] + np.einsum("i...,i...->...", A["xi"], nu_y)
        col_y = A["xi"] + np.einsum("ij...,j...->i...", A["ij"], nu_y)
        scale = np.abs(A["ij"]).max() + 1e-300
        return float(max(np.abs(col_x).max(), np.abs(col_y).max()) / scale)


def _last(t):
    return np.moveaxis(t, (0, 1), (-2, -1))


def _first(t):
    return np.moveaxis(t, (-2, -1), (0, 1))


def leaf_geometry(m: MetricExpansion, ef: ExtendedFactor, eps: float) -> LeafGeometry:
    g = m.grid
    ls = locate_level_set(ef, eps)
    x = ls.x_star
    vals = ef.at(x, ("dphi", "ddphi"))
    dphi, ddphi = vals["dphi"], vals["ddphi"]
    phi = ls.phi

    h = m.eval_h(x)
    hinv = fc.inverse(h)
    dxh = m.eval_dxh(x)
    dyh = m.eval_dyh(x)
    gam = fc.christoffel(g, h, dh=dyh, hinv=hinv)
    dx_hinv = -np.einsum("ik...,kl...,lj...->ij...", hinv, dxh, hinv)
    dy_hinv = -np.einsum("ik...,akl...,lj...->aij...", hinv, dyh, hinv)

    up = np.einsum("ij...,j...->i...", hinv, dphi)            # h^{ij} phi_j
    G = np.einsum("i...,i...->...", up, dphi)
    disc = 1.0 - x * x * G
    if np.any(disc <= 0):
        raise BranchError("discriminant non-positive on the leaf", x=float(x.max()))
    p = -x * G / (1.0 + np.sqrt(disc))
    one_xp = 1.0 + x * p
    Gk = np.einsum("aij...,i...,j...->a...", dy_hinv, dphi, dphi) + 2 * np.einsum("i...,ia...->a...", up, ddphi)
    pk = -x * Gk / (2 * one_xp)
    Gx = np.einsum("ij...,i...,j...->...", dx_hinv, dphi, dphi) + 2 * np.einsum("i...,i...->...", up, pk)
    px = -(p * p + G + x * Gx) / (2 * one_xp)

    half_dxh_up = 0.5 * np.einsum("kl...,li...->ki...", hinv, dxh)   # 1/2 h^{kl} d_x h_li
    hess_xx = px
    hess_xi = pk - np.einsum("ki...,k...->i...", half_dxh_up, dphi)
    hess_ij = ddphi - np.einsum("kij...,k...->ij...", gam, dphi) + 0.5 * dxh * p
    trace_dxh = np.einsum("ij...,ij...->...", hinv, dxh)
    lap_h = np.einsum("ij...,ij...->...", hinv, hess_ij - 0.5 * dxh * p)
    lap = px + 0.5 * trace_dxh * p + lap_h
    grad_sq = p * p + G

    x2 = x * x
    A_xx = -2 * x * p - x2 * (hess_xx + 0.5 * grad_sq)
    A_xi = -x * dphi - x2 * hess_xi
    A_ij = h - 0.5 * x * dxh - x2 * (hess_ij + 0.5 * grad_sq * h)
    s = -x * dphi / one_xp
    A_T = (A_ij + np.einsum("i...,j...->ij...", s, A_xi) + np.einsum("j...,i...->ij...", s, A_xi)
           + np.einsum("i...,j...->ij...", s, s) * A_xx)
    g_T = h + np.einsum("i...,j...->ij...", s, s)
    return LeafGeometry(ls, x, phi, dphi, p, grad_sq, lap, trace_dxh, h, fc.symmetrize(A_T), fc.symmetrize(g_T),
                        {"xx": A_xx, "xi": A_xi, "ij": A_ij})


# -- public operations ----------------------------------------------------------------


@dataclass
class ShapeData:
    level_set: LevelSet
    induced_metric: np.ndarray
    second_fundamental_form: np.ndarray
    principal_curvatures: np.ndarray


@dataclass
class CurvatureReport:
    eps: float
    H: np.ndarray
    mean: float
    deviation: float

    def row(self) -> dict:
        return {"eps": self.eps, "mean_H": self.mean, "max_dev": self.deviation}


def second_fundamental_form(m: MetricExpansion, ef: ExtendedFactor, eps: float) -> ShapeData:
    geo = leaf_geometry(m, ef, eps)
    x2 = geo.x**2
    return ShapeData(geo.level_set, geo.g_T / x2, geo.A_T / x2, geo.principal_curvatures())


def mean_curvature(m: MetricExpansion, ef: ExtendedFactor, eps: float) -> CurvatureReport:
    H = leaf_geometry(m, ef, eps).mean_curvature()
    mean = float(np.mean(H))
    return CurvatureReport(float(eps), H, mean, float(np.max(np.abs(H - mean))))


def n_operator(m: MetricExpansion, ef: ExtendedFactor, eps: float) -> np.ndarray:
    return leaf_geometry(m, ef, eps).n_value()


def ntilde_operator(m: MetricExpansion, ef: ExtendedFactor, eps: float) -> np.ndarray:
    return leaf_geometry(m, ef, eps).ntilde_value()


def transform_kappas(k: KappaPair, phi0: np.ndarray, h0: np.ndarray, grid: fc.Grid) -> KappaPair:
    n = grid.dim
    hinv = fc.inverse(h0)
    d = grid.grad(phi0)
    gsq = np.einsum("ij...,i...,j...->...", hinv, d, d)
    lap = fc.laplace_beltrami(grid, phi0, h0, hinv=hinv)
    return KappaPair(np.exp(-phi0) * k.kappa1, np.exp(-2 * phi0) * (k.kappa2 + lap + 0.5 * (n - 2) * gsq))


# -- pipeline wrapper ---------------------------------------------------------------------


class LevelSetOperator:
    """phi0 -> leaf geometry at fixed eps, with a ladder frozen at construction.

    Freezing the ladder keeps the map smooth in phi0, which matters for
    finite-difference Jacobians during Newton solves.
    """

    def __init__(self, m: MetricExpansion, eps: float, x_eval: float | None = None, steps: int = 48,
                 reference: np.ndarray | None = None, margin: float = 1.35):
        if eps <= 0:
            raise ValidationError("eps must be positive")
        self.m = m
        self.eps = float(eps)
        ref = np.zeros(m.grid.shape) if reference is None else reference
        self.x_eval = x_eval if x_eval is not None else default_x_eval(m, ref, eps, margin)
        self.steps = steps
        self.evaluations = 0

    def extend(self, phi0: np.ndarray) -> ExtendedFactor:
        return extend(phi0, self.m, self.x_eval, self.steps)

    def geometry(self, phi0: np.ndarray) -> LeafGeometry:
        self.evaluations += 1
        return leaf_geometry(self.m, self.extend(phi0), self.eps)

    def value(self, phi0: np.ndarray, which: str = "N") -> np.ndarray:
        geo = self.geometry(phi0)
        if which == "N":
            return geo.n_value()
        if which == "Ntilde":
            return geo.ntilde_value()
        if which == "H":
            return geo.mean_curvature()
        raise ValidationError(f"unknown operator '{which}'")


def _central_jvp(fun, base: np.ndarray, psi: np.ndarray, step: float) -> np.ndarray:
    return (fun(base + step * psi) - fun(base - step * psi)) / (2 * step)


def richardson_zero(values: list[np.ndarray]) -> np.ndarray:
    """Extrapolate f(e), f(e/2), f(e/4) to e = 0 assuming f = a + b e + c e^2 + O(e^3)."""
    f1, f2, f4 = values
    return f1 / 3.0 - 2.0 * f2 + 8.0 * f4 / 3.0


def linearize_n(m: MetricExpansion, base_phi0: np.ndarray, eps: float, which: str = "N", step: float = 1e-4,
                eps0: float = 1e-2, steps: int = 48, check: bool = True) -> LinearOperator:
    """Matrix-free directional derivative of the leaf operator in phi0.

    Uses central differences at two step sizes (Richardson-combined); a
    disagreement above 1e-4 relative raises StepSizeError. eps = 0 is reached
    by quadratic extrapolation over eps0, eps0/2, eps0/4.
    """
    g = m.grid
    base = np.asarray(base_phi0, dtype=float)
    eps_list = [eps] if eps > 0 else [eps0, eps0 / 2, eps0 / 4]
    ops = [LevelSetOperator(m, e, steps=steps, reference=base) for e in eps_list]

    def apply_one(op, psi):
        scale = step / max(1.0, float(np.max(np.abs(psi))))
        fun = lambda f: op.value(f, which)
        d1 = _central_jvp(fun, base, psi, scale)
        if not check:
            return d1
        d2 = _central_jvp(fun, base, psi, scale / 2)
        ref = float(np.max(np.abs(d2)))
        if float(np.max(np.abs(d1 - d2))) > 1e-4 * max(ref, 1e-12):
            raise StepSizeError("finite-difference derivatives disagree between step sizes",
                                discrepancy=float(np.max(np.abs(d1 - d2))), scale=ref)
        return (4 * d2 - d1) / 3

    def matvec(v):
        psi = np.asarray(v, dtype=float).reshape(g.shape)
        outs = [apply_one(op, psi) for op in ops]
        res = outs[0] if len(outs) == 1 else richardson_zero(outs)
        return res.ravel()

    return LinearOperator((g.size, g.size), matvec=matvec, dtype=float)


def explicit_linearization(m: MetricExpansion, eps: float, which: str = "Ntilde", exact: bool = True):
    """Closed-form derivative at phi0 = 0 as a function psi -> field.

    The Ntilde derivative is eps Lap_{h(eps)} - 1/2 tr d_x h(eps), plus the term
    -1/2 eps d_x(tr d_x h) which vanishes on pure collar models; ``exact=False``
    drops it. The N derivative is the Ntilde one divided by eps.
    """
    g = m.grid
    h = m.eval_h(eps)
    hinv = fc.inverse(h)
    sqrtg = np.sqrt(fc.det(h))
    dxh = m.eval_dxh(eps)
    T = np.einsum("ij...,ij...->...", hinv, dxh)
    dT = 0.0
    if exact:
        dxxh = m.eval_dxxh(eps)
        dx_hinv = -np.einsum("ik...,kl...,lj...->ij...", hinv, dxh, hinv)
        dT = np.einsum("ij...,ij...->...", dx_hinv, dxh) + np.einsum("ij...,ij...->...", hinv, dxxh)
    pot = -0.5 * T - 0.5 * eps * dT

    def apply(psi):
        out = eps * fc.laplace_beltrami(g, psi, h, hinv=hinv, sqrtg=sqrtg) + pot * psi
        return out / eps if which == "N" else out

    return apply


def h_of_eps(m: MetricExpansion, eps: float, phi0: np.ndarray | None = None, steps: int = 48) -> np.ndarray:
    """H(phi0, eps); with phi0 = 0 this is the mean curvature of {x = eps} itself."""
    phi0 = np.zeros(m.grid.shape) if phi0 is None else phi0
    op = LevelSetOperator(m, eps, steps=steps, reference=phi0)
    return op.value(phi0, "H")


def jacobi_potential(m: MetricExpansion, eps: float, phi0: np.ndarray | None = None,
                     step: float | None = None) -> np.ndarray:
    """d/d eps of H(phi0, eps) by Richardson-combined central differences."""
    d = step or 1e-2 * eps
    ref = 0.0 if phi0 is None else float(np.min(phi0))
    if eps - d <= 0 or 1.35 * (eps + d) * np.exp(-ref) > m.x_max:
        raise ValidationError(f"eps = {eps} too close to the collar ends for differencing")
    H = lambda e: h_of_eps(m, e, phi0)
    c1 = (H(eps + d) - H(eps - d)) / (2 * d)
    c2 = (H(eps + d / 2) - H(eps - d / 2)) / d
    return (4 * c2 - c1) / 3


def sigma_from_shift(X: np.ndarray, k: int) -> np.ndarray:
    """sigma_k(I + X) - binom(n, k) = sum_{j >= 1} binom(n-j, k-j) sigma_j(X)."""
    from .sigma_k import sigma_all

    n = X.shape[0]
    sig = sigma_all(X)
    return sum(comb(n - j, k - j) * sig[j] for j in range(1, k + 1))
