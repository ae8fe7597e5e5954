"""Extension of boundary conformal factors and level-set location.

Given phi0 on the boundary, the factor phi(x, y) making x_hat = x e^phi a
special defining function solves

    x p^2 + 2 p + x |d_y phi|^2_{h(x)} = 0,      p = d_x phi,

on the regular branch p = -x G / (1 + sqrt(1 - x^2 G)), G = |d_y phi|^2_h.
``extend`` marches this with RK4 on a uniform x-ladder. ``characteristics_oracle``
is an independent solver built on the Hamiltonian system of the same equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .ambient import MetricExpansion
from .errors import BranchError, CharacteristicCrossingError, LevelSetError, ValidationError
from .grid import FourierInterpolant, Grid, check_finite


def hj_slope(x: float, G: np.ndarray) -> np.ndarray:
    """Regular root p of x p^2 + 2 p + x G = 0."""
    disc = 1.0 - x * x * G
    if np.any(disc <= 0.0):
        raise BranchError(f"discriminant 1 - x^2 |grad phi|^2 <= 0 at x = {x:.6g}",
                          x=float(x), min_discriminant=float(disc.min()))
    return -x * G / (1.0 + np.sqrt(disc))


@dataclass(eq=False)
class ExtendedFactor:
    """phi and p = d_x phi sampled on an x-ladder over the grid.

    Spatial derivatives at ladder nodes are formed on demand and cached, since a
    level set usually touches only a handful of nodes.
    """

    grid: Grid
    metric: MetricExpansion
    xs: np.ndarray
    phi: np.ndarray
    p: np.ndarray
    _nodes: dict = field(default_factory=dict, repr=False)

    @property
    def phi0(self) -> np.ndarray:
        return self.phi[0]

    @property
    def x_eval(self) -> float:
        return float(self.xs[-1])

    def node_field(self, i: int, name: str) -> np.ndarray:
        key = (i, name)
        if key not in self._nodes:
            g = self.grid
            base = self.phi[i] if name.endswith("phi") else self.p[i]
            if name in ("dphi", "dp"):
                val = g.grad(base)
            elif name in ("ddphi", "ddp"):
                val = g.hessian(base)
            else:
                raise KeyError(name)
            self._nodes[key] = val
        return self._nodes[key]

    def _locate(self, x: np.ndarray):
        if np.any(x < self.xs[0]) or np.any(x > self.xs[-1] * (1 + 1e-13)):
            raise LevelSetError(f"x outside ladder [0, {self.x_eval:.6g}]", x_eval=self.x_eval)
        idx = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        x0 = self.xs[idx]
        dx = self.xs[idx + 1] - x0
        t = (x - x0) / dx
        return idx, t, dx

    def at(self, x: np.ndarray, names=("phi",)) -> dict:
        """Cubic Hermite interpolation in x at a grid-shaped array of x values.

        Supported names: phi, dphi (d_i phi), ddphi (d_ij phi), and dxphi (the
        x-derivative of the phi interpolant).
        """
        x = np.broadcast_to(np.asarray(x, dtype=float), self.grid.shape)
        idx, t, dx = self._locate(x)
        t2, t3 = t * t, t * t * t
        h00, h10 = 2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t
        h01, h11 = -2 * t3 + 3 * t2, t3 - t2
        d00, d10 = (6 * t2 - 6 * t) / dx, 3 * t2 - 4 * t + 1
        d01, d11 = (-6 * t2 + 6 * t) / dx, 3 * t2 - 2 * t
        nodes = np.unique(np.concatenate([idx.ravel(), idx.ravel() + 1]))
        out = {}
        for name in names:
            if name in ("phi", "dxphi"):
                val = lambda i: self.phi[i]
                der = lambda i: self.p[i]
            else:
                val = lambda i, nm=name: self.node_field(i, nm)
                der = lambda i, nm=name: self.node_field(i, nm.replace("phi", "p"))
            if name == "dxphi":
                w = (d00, d10, d01, d11)
            else:
                w = (h00, h10 * dx, h01, h11 * dx)
            acc = 0.0
            for i in nodes:
                left = idx == i
                right = idx + 1 == i
                cl = np.where(left, w[0], 0.0) + np.where(right, w[2], 0.0)
                cd = np.where(left, w[1], 0.0) + np.where(right, w[3], 0.0)
                acc = acc + cl * val(i) + cd * der(i)
            out[name] = acc
        return out


def _gradient_sq(grid: Grid, phi: np.ndarray, hinv: np.ndarray) -> np.ndarray:
    d = grid.grad(phi)
    return np.einsum("ij...,i...,j...->...", hinv, d, d)


def default_x_eval(m: MetricExpansion, phi0: np.ndarray, eps: float, margin: float = 1.25) -> float:
    """Ladder top covering the level set x e^phi = eps with some margin."""
    x_top = margin * eps * float(np.exp(-np.min(phi0)))
    return min(x_top, m.x_max)


def extend(phi0: np.ndarray, m: MetricExpansion, x_eval: float, steps: int = 48) -> ExtendedFactor:
    """RK4 march of the regular-branch evolution from x = 0 to x_eval."""
    g = m.grid
    phi0 = np.asarray(phi0, dtype=float)
    check_finite(phi0, "phi0")
    if phi0.shape != g.shape:
        raise ValidationError(f"phi0 shape {phi0.shape} does not match grid {g.shape}")
    if steps < 32:
        raise ValidationError("extend needs at least 32 steps")
    if not 0 < x_eval <= m.x_max * (1 + 1e-12):
        raise ValidationError(f"x_eval {x_eval} outside (0, x_max = {m.x_max}]")
    xs = np.linspace(0.0, float(x_eval), steps + 1)
    dx = xs[1] - xs[0]

    def rhs(x, phi):
        return hj_slope(x, _gradient_sq(g, phi, m.slice(x)["hinv"]))

    phis = np.empty((steps + 1,) + g.shape)
    ps = np.empty_like(phis)
    phis[0] = phi0
    ps[0] = 0.0
    if np.ptp(phi0) == 0.0:
        phis[:] = phi0
        ps[:] = 0.0
        return ExtendedFactor(g, m, xs, phis, ps)
    phi = phi0.copy()
    for i in range(steps):
        x = xs[i]
        k1 = ps[i] if i else rhs(x, phi)
        k2 = rhs(x + dx / 2, phi + dx / 2 * k1)
        k3 = rhs(x + dx / 2, phi + dx / 2 * k2)
        k4 = rhs(xs[i + 1], phi + dx * k3)
        phi = phi + dx / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        phis[i + 1] = phi
        ps[i + 1] = rhs(xs[i + 1], phi)
    check_finite(phis, "phi")
    return ExtendedFactor(g, m, xs, phis, ps)


# -- level sets --------------------------------------------------------------------


@dataclass
class LevelSet:
    grid: Grid
    eps: float
    x_star: np.ndarray
    phi: np.ndarray
    iterations: int = 0

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.x_star * np.exp(self.phi) - self.eps)) / self.eps)


def locate_level_set(ef: ExtendedFactor, eps: float, tol: float = 1e-14, maxiter: int = 60) -> LevelSet:
    """Solve x e^{phi(x, y)} = eps pointwise by safeguarded Newton on log x + phi - log eps."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    g = ef.grid
    leps = np.log(eps)
    lo = np.zeros(g.shape)
    hi = np.full(g.shape, ef.x_eval)
    top = ef.at(hi, ("phi",))["phi"]
    if np.any(np.log(hi) + top - leps < 0):
        raise LevelSetError(f"eps = {eps:.6g} has no root below x_eval = {ef.x_eval:.6g}",
                            eps=float(eps), x_eval=ef.x_eval)
    x = np.clip(eps * np.exp(-ef.phi0), 1e-300, ef.x_eval)
    for it in range(1, maxiter + 1):
        vals = ef.at(x, ("phi", "dxphi"))
        f = np.log(x) + vals["phi"] - leps
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        if np.max(np.abs(f)) < tol:
            break
        step = f / (1.0 / x + vals["dxphi"])
        xn = x - step
        bad = ~((xn > lo) & (xn < hi))
        x = np.where(bad, 0.5 * (lo + hi), xn)
    else:
        raise LevelSetError(f"level set search did not converge for eps = {eps:.6g}", eps=float(eps))
    ls = LevelSet(g, float(eps), x, vals["phi"], it)
    if ls.residual > 1e-12:
        raise LevelSetError(f"level set residual {ls.residual:.3e} above 1e-12", eps=float(eps))
    return ls


# -- characteristics -----------------------------------------------------------------


class _MetricSampler:
    """Evaluates h^{-1}, d_x h^{-1} and d_y h^{-1} at arbitrary off-grid points."""

    def __init__(self, m: MetricExpansion):
        self.m = m
        n = m.n
        self.y_independent = all(np.ptp(c) == 0 for c in [m.h0, *m.corrections.values()])
        self._parts = []
        for base in [m.h0, *m.corrections.values()]:
            self._parts.append({(i, j): FourierInterpolant(m.grid, base[i, j]) for i in range(n) for j in range(i, n)})

    def _tensor(self, which: int, pts: np.ndarray, deriv) -> np.ndarray:
        n = self.m.n
        out = np.empty((n, n, pts.shape[0]))
        for (i, j), f in self._parts[which].items():
            out[i, j] = out[j, i] = f(pts, deriv)
        return out

    def __call__(self, x: float, pts: np.ndarray):
        m, n = self.m, self.m.n
        orders = [0] + list(m.corrections)
        coeffs = [m.profile(x, 0)] + [x**j for j in m.corrections]
        dcoeffs = [m.profile(x, 1)] + [j * x ** (j - 1) for j in m.corrections]
        base = [self._tensor(k, pts, None) for k in range(len(orders))]
        h = sum(c * b for c, b in zip(coeffs, base))
        dxh = sum(c * b for c, b in zip(dcoeffs, base))
        hinv = np.linalg.inv(np.moveaxis(h, (0, 1), (-2, -1)))
        hinv = np.moveaxis(hinv, (-2, -1), (0, 1))
        dx_hinv = -np.einsum("ik...,kl...,lj...->ij...", hinv, dxh, hinv)
        if self.y_independent:
            dy_hinv = np.zeros((n,) + hinv.shape)
        else:
            dy = []
            for a in range(n):
                dh = sum(c * self._tensor(k, pts, a) for k, c in enumerate(coeffs))
                dy.append(-np.einsum("ik...,kl...,lj...->ij...", hinv, dh, hinv))
            dy_hinv = np.stack(dy)
        return hinv, dx_hinv, dy_hinv


def integrate_characteristics(m: MetricExpansion, eta: np.ndarray, phi_start: np.ndarray, q_start: np.ndarray,
                              x_out, sampler: _MetricSampler | None = None, rtol: float = 1e-12,
                              atol: float = 1e-13) -> dict:
    """Integrate the characteristic system from x = 0 for a batch of launch points.

    eta: (k, n) launch positions; phi_start: (k,); q_start: (k, n).
    Returns arrays y (len(x_out), k, n), phi, p, q at the requested x values.
    """
    sampler = sampler or _MetricSampler(m)
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    k, n = eta.shape
    x_out = np.atleast_1d(np.asarray(x_out, dtype=float))

    def unpack(z):
        z = z.reshape(2 * n + 2, k)
        return z[:n].T, z[n], z[n + 1], z[n + 2 :].T

    def rhs(x, z):
        y, phi, p, q = unpack(z)
        hinv, dx_hinv, dy_hinv = sampler(x, y)
        hq = np.einsum("ijk,kj->ki", hinv, q)
        qq = np.einsum("ki,ki->k", q, hq)
        dxqq = np.einsum("ijk,ki,kj->k", dx_hinv, q, q)
        dyqq = np.einsum("aijk,ki,kj->ka", dy_hinv, q, q)
        a = 1.0 + x * p
        if np.any(a <= 0):
            raise CharacteristicCrossingError(f"characteristic speed vanished at x = {x:.6g}", x=float(x))
        dy = x * hq / a[:, None]
        dp = -(0.5 * (p * p + qq) + 0.5 * x * dxqq) / a
        dq = -0.5 * x * dyqq / a[:, None]
        dphi = (p * a + x * qq) / a
        return np.concatenate([dy.T.ravel(), dphi, dp, dq.T.ravel()])

    z0 = np.concatenate([eta.T.ravel(), np.asarray(phi_start, float), np.zeros(k), np.asarray(q_start, float).T.ravel()])
    sol = solve_ivp(rhs, (0.0, float(x_out.max())), z0, method="DOP853", t_eval=x_out, rtol=rtol, atol=atol)
    if not sol.success:
        raise CharacteristicCrossingError(f"characteristic integration failed: {sol.message}")
    zs = sol.y.T.reshape(len(x_out), 2 * n + 2, k)
    return {
        "y": np.moveaxis(zs[:, :n], 1, 2),
        "phi": zs[:, n],
        "p": zs[:, n + 1],
        "q": np.moveaxis(zs[:, n + 2 :], 1, 2),
    }


def characteristics_oracle(phi0: np.ndarray, m: MetricExpansion, x_eval: float, x_nodes=None,
                           tol: float = 1e-12, maxiter: int = 20) -> ExtendedFactor:
    """Independent solution by characteristics, inverted back onto the grid.

    For each grid point y and each requested x, finds the launch point eta with
    y(x; eta) = y by Newton iteration (finite-difference Jacobian of the fan),
    then reads phi and p off that characteristic.
    """
    g = m.grid
    phi0 = np.asarray(phi0, dtype=float)
    xs = np.asarray([x_eval] if x_nodes is None else x_nodes, dtype=float)
    if np.any(xs <= 0) or np.any(xs > m.x_max):
        raise ValidationError("oracle x nodes must lie in (0, x_max]")
    sampler = _MetricSampler(m)
    f0 = FourierInterpolant(g, phi0)
    dgrad = [FourierInterpolant(g, d) for d in g.grad(phi0)]
    target = g.points
    n = g.dim

    def launch(eta):
        q = np.stack([d(eta) for d in dgrad], axis=-1)
        return integrate_characteristics(m, eta, f0(eta), q, xs, sampler)

    phis = np.empty((len(xs) + 1,) + g.shape)
    ps = np.zeros_like(phis)
    phis[0] = phi0
    h = 1e-6
    for ix in range(len(xs)):
        eta = target.copy()
        for _ in range(maxiter):
            res = launch(eta)
            r = res["y"][ix] - target
            if np.max(np.abs(r)) < tol:
                break
            J = np.empty((eta.shape[0], n, n))
            for a in range(n):
                e = np.zeros(n)
                e[a] = h
                J[:, :, a] = (launch(eta + e)["y"][ix] - launch(eta - e)["y"][ix]) / (2 * h)
            if np.any(np.linalg.det(J) <= 0):
                raise CharacteristicCrossingError(f"characteristic fan folds before x = {xs[ix]:.6g}", x=float(xs[ix]))
            eta = eta - np.linalg.solve(J, r[..., None])[..., 0]
        else:
            raise CharacteristicCrossingError("fan inversion did not converge", x=float(xs[ix]))
        phis[ix + 1] = res["phi"][ix].reshape(g.shape)
        ps[ix + 1] = res["p"][ix].reshape(g.shape)
    return ExtendedFactor(g, m, np.concatenate([[0.0], xs]), phis, ps)
