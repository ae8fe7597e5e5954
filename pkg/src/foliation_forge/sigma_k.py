"""Elementary symmetric functions of shape operators and the sigma_k leaf problem.

Matrix fields carry their matrix axes first, ``(n, n, ...)``, like every other
tensor field. The functions also accept object arrays of ``fractions.Fraction``
for exact integer checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ValidationError


def _last(B):
    return np.moveaxis(np.asarray(B), (0, 1), (-2, -1))


def _first(B):
    return np.moveaxis(B, (-2, -1), (0, 1))


def _trace(M):
    return np.trace(M, axis1=-2, axis2=-1)


def sigma_all(B: np.ndarray) -> list:
    """[sigma_0, ..., sigma_n] from power sums tr(B^j) via Newton's identities.

    No eigendecomposition: the recursion only multiplies matrices, so it is
    exact on Fraction inputs and smooth in the entries.
    """
    M = _last(B)
    n = M.shape[-1]
    powers = [None]
    P = M
    for _ in range(n):
        powers.append(_trace(P))
        P = P @ M
    sig = [np.ones(M.shape[:-2], dtype=M.dtype) if M.dtype != object else np.full(M.shape[:-2], 1, dtype=object)]
    for k in range(1, n + 1):
        acc = 0
        for i in range(1, k + 1):
            acc = acc + (-1) ** (i - 1) * sig[k - i] * powers[i]
        sig.append(acc / k if M.dtype != object else acc * _frac(1, k))
    return sig


def _frac(a, b):
    from fractions import Fraction

    return Fraction(a, b)


def sigma_k(B: np.ndarray, k: int) -> np.ndarray:
    n = np.asarray(B).shape[0]
    if not 0 <= k <= n:
        raise ValidationError(f"k must lie in [0, {n}], got {k}")
    return sigma_all(B)[k]


def newton_polynomial(B: np.ndarray, k: int) -> np.ndarray:
    """T_{k-1}(B) = sum_{j=0}^{k-1} (-1)^j sigma_{k-1-j}(B) B^j."""
    M = _last(B)
    n = M.shape[-1]
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}], got {k}")
    sig = sigma_all(B)
    eye = np.eye(n, dtype=M.dtype) if M.dtype != object else np.array(
        [[1 if i == j else 0 for j in range(n)] for i in range(n)], dtype=object)
    out = 0
    P = np.broadcast_to(eye, M.shape)
    for j in range(k):
        out = out + (-1) ** j * sig[k - 1 - j][..., None, None] * P
        P = P @ M
    return _first(out)


def dsigma(B: np.ndarray, E: np.ndarray, k: int) -> np.ndarray:
    """d/ds sigma_k(B + sE) at s = 0, as tr(E T_{k-1}(B))."""
    return _trace(_last(E) @ _last(newton_polynomial(B, k)))


def d2sigma(B: np.ndarray, E: np.ndarray, k: int) -> np.ndarray:
    """Second derivative of s -> sigma_k(B + sE) at 0.

    From T_{k-1}(B) = sum_j (-1)^j sigma_{k-1-j}(B) B^j,

        d2 = sum_j (-1)^j [ dsigma_{k-1-j} tr(E B^j)
                            + sigma_{k-1-j} sum_{a=0}^{j-1} tr(E B^a E B^{j-1-a}) ].
    """
    M, Em = _last(B), _last(E)
    n = M.shape[-1]
    powers = [np.broadcast_to(np.eye(n), M.shape)]
    for _ in range(k):
        powers.append(powers[-1] @ M)
    sig = sigma_all(B)
    out = 0.0
    for j in range(k):
        m = k - 1 - j
        ds = dsigma(B, E, m) if m >= 1 else 0.0
        term = ds * _trace(Em @ powers[j])
        inner = 0.0
        for a in range(j):
            inner = inner + _trace(Em @ powers[a] @ Em @ powers[j - 1 - a])
        out = out + (-1) ** j * (term + sig[m] * inner)
    return out


def d2sigma_printed(B: np.ndarray, E: np.ndarray, k: int) -> np.ndarray:
    """The commuting-matrix simplification of d2sigma.

    Replaces the ordered sum over a by j tr(E^2 B^{j-1}) and drops B^j from
    the sigma-derivative term. Exact for j <= 1 terms or commuting B and E;
    kept to report how far the shortcut is off on generic input.
    """
    M, Em = _last(B), _last(E)
    n = M.shape[-1]
    powers = [np.broadcast_to(np.eye(n), M.shape)]
    for _ in range(k):
        powers.append(powers[-1] @ M)
    sig = sigma_all(B)
    out = 0.0
    for j in range(k):
        m = k - 1 - j
        ds = dsigma(B, E, m) if m >= 1 else 0.0
        term = ds * _trace(Em)
        inner = j * _trace(Em @ Em @ powers[j - 1]) if j >= 1 else 0.0
        out = out + (-1) ** j * (term + sig[m] * inner)
    return out


def sigma_k_second_derivative_check(B: np.ndarray, E: np.ndarray, k: int, step: float = 1e-3) -> dict:
    """Compare d2sigma (and the commuting shortcut) with a 4th-order second difference."""
    B = np.asarray(B, dtype=float)
    E = np.asarray(E, dtype=float)
    f = lambda s: sigma_k(B + s * E, k)
    fd = (-f(2 * step) + 16 * f(step) - 30 * f(0.0) + 16 * f(-step) - f(-2 * step)) / (12 * step**2)
    exact = d2sigma(B, E, k)
    shortcut = d2sigma_printed(B, E, k)
    return {
        "residual": float(np.max(np.abs(exact - fd))),
        "shortcut_discrepancy": float(np.max(np.abs(shortcut - fd))),
        "value": exact,
    }


def alternating_identity(n: int, ell: int) -> tuple[int, int]:
    """Both sides of sum_{j=0}^{ell} (-1)^j j binom(n, ell-j) = -binom(n-2, ell-1)."""
    lhs = sum((-1) ** j * j * comb(n, ell - j) for j in range(ell + 1))
    rhs = -comb(n - 2, ell - 1) if ell >= 1 else 0
    return lhs, rhs


@dataclass
class SigmaExpansion:
    k: int
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    closed_form: dict
    fitted: dict
    discrepancy: dict

    def row(self) -> dict:
        return {"k": self.k, **{f"closed_{key}": float(np.mean(v)) for key, v in self.closed_form.items()},
                **{f"fitted_{key}": float(np.mean(v)) for key, v in self.fitted.items()},
                **{f"discrepancy_{key}": v for key, v in self.discrepancy.items()}}


def _sigma2_rel(m) -> np.ndarray:
    """sigma_2 of h0^{-1} h1 pointwise."""
    from . import grid as fc

    H1 = np.einsum("ik...,kj...->ij...", fc.inverse(m.h0), m.h1)
    return sigma_all(H1)[2]


def sk_ladder(m, k: int, eps: np.ndarray, steps: int = 48) -> np.ndarray:
    """S_k(eps) - binom(n, k) on the level sets {x = eps}, one row per eps."""
    from .extrinsic import LevelSetOperator, sigma_from_shift

    zero = np.zeros(m.grid.shape)
    out = []
    for e in eps:
        geo = LevelSetOperator(m, e, steps=steps).geometry(zero)
        out.append(sigma_from_shift(geo.shifted_shape_operator(), k))
    return np.array(out)


def sk_expansion(m, k: int, eps_max: float = 0.02, samples: int = 10, degree: int = 6) -> SigmaExpansion:
    """Closed-form and ladder-fitted coefficients of S_k(x) = s0 + s1 x + s2 x^2 + ...

    ``closed_form`` holds two candidates for s2: the commonly quoted one
    (``s2_quoted`` = -2 binom(n-1,k-1) kappa2 + 1/2 binom(n-2,k-2) sigma2(h1)) and
    the one obtained by expanding B(x) = I - 1/2 h1 x - (h2 - 1/2 h1 h1) x^2
    directly (``s2`` = -binom(n-1,k-1) kappa2 + 1/4 binom(n-2,k-2) sigma2(h1)).
    The fit arbitrates; discrepancies against both are reported.
    """
    from .ambient import kappas

    n = m.n
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}], got {k}")
    kp = kappas(m)
    s2h1 = _sigma2_rel(m)
    c1 = comb(n - 1, k - 1)
    c2 = comb(n - 2, k - 2) if k >= 2 else 0
    closed = {
        "s0": np.full(m.grid.shape, float(comb(n, k))),
        "s1": -c1 * kp.kappa1,
        "s2": -c1 * kp.kappa2 + 0.25 * c2 * s2h1,
        "s2_quoted": -2 * c1 * kp.kappa2 + 0.5 * c2 * s2h1,
    }
    eps = np.geomspace(eps_max / 8, eps_max, samples)
    vals = sk_ladder(m, k, eps)
    V = np.stack([eps**j for j in range(1, degree + 1)], axis=1)
    coef, *_ = np.linalg.lstsq(V, vals.reshape(samples, -1), rcond=None)
    fitted = {"s1": coef[0].reshape(m.grid.shape), "s2": coef[1].reshape(m.grid.shape)}
    disc = {
        "s1": float(np.max(np.abs(fitted["s1"] - closed["s1"]))),
        "s2": float(np.max(np.abs(fitted["s2"] - closed["s2"]))),
        "s2_quoted": float(np.max(np.abs(fitted["s2"] - closed["s2_quoted"]))),
    }
    return SigmaExpansion(k, closed["s0"], fitted["s1"], fitted["s2"], closed, fitted, disc)


# -- the sigma_k leaf problem -----------------------------------------------------------


def nk_operator(geo, k: int, eps: float) -> np.ndarray:
    """(binom(n, k) - sigma_k(B))/eps^2 on one leaf; equals (n - H)/eps^2 when k = 1."""
    from .extrinsic import sigma_from_shift

    return -sigma_from_shift(geo.shifted_shape_operator(), k) / eps**2


def sigma_target(n: int, k: int, kappa_bar2: float, eps: float) -> float:
    """binom(n, k) - binom(n-1, k-1) kappa_bar2 eps^2."""
    return comb(n, k) - comb(n - 1, k - 1) * kappa_bar2 * eps**2


def solve_sigma_k_leaf(m, eps: float, k: int, target: float | None = None, init: np.ndarray | None = None,
                       gauge=None, tol: float = 1e-10, update_tol: float = 1e-10, maxiter: int = 25,
                       steps: int = 48):
    """Newton solve of sigma_k(B(phi0, eps)) = target in the kappa1 = 0 regime.

    The unknown equation is scaled as (binom(n,k) - sigma_k)/eps^2 = (binom(n,k) - target)/eps^2,
    whose eps -> 0 linearization is binom(n-1,k-1)(Lap - 2 kappa_bar2); its Fourier inverse
    preconditions GMRES.
    """
    from .extrinsic import LevelSetOperator, sigma_from_shift
    from .foliation import Leaf, make_gauge, scaled_norm
    from .linalg import fourier_preconditioner, newton_krylov

    n = m.n
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}], got {k}")
    gauge = gauge or make_gauge(m, "kappa1_zero")
    if gauge.regime != "kappa1_zero":
        raise ValidationError("sigma_k leaves are built in the kappa1 = 0 regime")
    kbar = gauge.kappa_bar2
    if target is None:
        target = sigma_target(n, k, kbar, eps)
    rhs = (comb(n, k) - target) / eps**2
    init = gauge.phi_bar.copy() if init is None else np.asarray(init, dtype=float)
    op = LevelSetOperator(m, eps, steps=steps, reference=np.minimum(gauge.phi_bar, init), margin=1.5)
    F = lambda phi: nk_operator(op.geometry(phi), k, eps) - rhs
    c = comb(n - 1, k - 1)
    M = fourier_preconditioner(m.grid, c, -2 * c * kbar, np.exp(2 * gauge.phi_bar) * m.h0)
    res = newton_krylov(F, init, M, tol=tol, update_tol=update_tol, maxiter=maxiter,
                        update_norm=lambda d: scaled_norm(m.grid, eps, d))
    geo = op.geometry(res.x)
    sig = comb(n, k) + sigma_from_shift(geo.shifted_shape_operator(), k)
    return Leaf(float(eps), res.x, float(target), geo.mean_curvature(), geo.x, res.residual, res.iterations,
                res.update_norm, gauge.regime, res.history, functional=f"sigma_{k}", sigma=sig)


def sigma_k_foliation(m, eps_ladder, k: int, gauge=None, steps: int = 48, tol: float = 1e-10,
                      update_tol: float | None = None, maxiter: int = 25):
    """Warm-started sweep of sigma_k leaves.

    Targets default to binom(n,k) - binom(n-1,k-1) kappa_bar2 eps^2. On exact
    profile models the value of sigma_k on the slice {x = eps} is used instead,
    so phi0 = 0 solves every leaf exactly.
    """
    from .foliation import continue_foliation, make_gauge

    gauge = gauge or make_gauge(m, "kappa1_zero")
    utol = tol if update_tol is None else update_tol
    exact = m.conformal_profile_only and not np.any(gauge.phi_bar)

    def solver(mm, e, t, warm, gg):
        tgt = comb(m.n, k) + float(np.mean(sk_ladder(m, k, [e], steps)[0])) if exact else None
        return solve_sigma_k_leaf(mm, e, k, tgt, warm, gg, tol=tol, update_tol=utol, maxiter=maxiter, steps=steps)

    return continue_foliation(m, eps_ladder, gauge=gauge, solver=solver, steps=steps, tol=tol)
