"""Leaves, foliations, the resonance spectrum and the foliation audit.

Leaves are always solved in the gauge of the given expansion: a leaf is the
level set {x e^{phi} = eps} of the extension of a boundary function phi0, and
the unknown is phi0. The gauge reference phi_bar (the Yamabe solution when
kappa1 = 0, log|kappa1| otherwise) is the eps -> 0 limit and the initial guess.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.optimize import brentq, curve_fit

from . import grid as fc
from .ambient import MetricExpansion, kappas
from .errors import (BlowUpError, BranchError, DegenerateProblemError, ForgeError, FoliationOverlapError,
                     LevelSetError, ResonanceError, ValidationError)
from .extrinsic import LevelSetOperator, jacobi_potential
from .grid import Grid
from .hj import extend, locate_level_set
from .linalg import fourier_preconditioner, newton_krylov, resolved_basis, symmetric_operator

REGIMES = ("kappa1_zero", "kappa1_pos", "kappa1_neg")


# -- scaled norms -----------------------------------------------------------------------


def scaled_norm(grid: Grid, eps: float, f: np.ndarray, k: int = 2) -> float:
    """sum_{|beta| <= k} eps^{|beta|/2} sup |d^beta f|, one term per multi-index."""
    total = float(np.max(np.abs(f)))
    for order in range(1, k + 1):
        for combo in combinations_with_replacement(range(grid.dim), order):
            d = f
            for a in combo:
                d = grid.diff(d, a)
            total += eps ** (order / 2) * float(np.max(np.abs(d)))
    return total


@dataclass
class ScaledNorm:
    eps: float
    k: int
    value: float

    @classmethod
    def of(cls, grid: Grid, eps: float, f: np.ndarray, k: int = 2) -> "ScaledNorm":
        return cls(float(eps), k, scaled_norm(grid, eps, f, k))


# -- gauge -----------------------------------------------------------------------------


@dataclass
class Gauge:
    """Reference boundary function and the regime it normalizes."""

    regime: str
    phi_bar: np.ndarray
    kappa_bar2: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {"regime": self.regime, "kappa_bar2": self.kappa_bar2, "note": self.note,
                "phi_bar_range": [float(self.phi_bar.min()), float(self.phi_bar.max())]}


def classify_regime(m: MetricExpansion, tol: float = 1e-12) -> str:
    k1 = kappas(m).kappa1
    if np.max(np.abs(k1)) <= tol:
        return "kappa1_zero"
    if np.all(k1 > tol):
        return "kappa1_pos"
    if np.all(k1 < -tol):
        return "kappa1_neg"
    raise DegenerateProblemError("kappa1 changes sign; no monotone foliation is constructed in that case",
                                 kappa1_min=float(k1.min()), kappa1_max=float(k1.max()))


def make_gauge(m: MetricExpansion, regime: str | None = None, yamabe=None, allow_degenerate: bool | None = None) -> Gauge:
    """Reference gauge: Yamabe solution for kappa1 = 0, phi0 = log(+-kappa1) otherwise.

    kappa1 = 0 with kappa_bar2 = 0 is rejected unless the metric is an exact
    profile model, whose slices {x = eps} are already leaves and need no solve.
    """
    if allow_degenerate is None:
        allow_degenerate = m.conformal_profile_only
    from .yamabe import normalize_kappa2

    regime = regime or classify_regime(m)
    if regime not in REGIMES:
        raise ValidationError(f"unknown regime '{regime}'")
    if regime == "kappa1_zero":
        sol = yamabe or normalize_kappa2(m, check_nondegeneracy=False)
        if abs(sol.kappa_bar2) < 1e-8 and not allow_degenerate:
            raise DegenerateProblemError("kappa1 = 0 together with kappa_bar2 = 0: the linearization Lap - 2 kbar2 "
                                         "has the constants in its kernel")
        return Gauge(regime, sol.phi0, sol.kappa_bar2, "yamabe")
    k1 = kappas(m).kappa1
    sign = 1.0 if regime == "kappa1_pos" else -1.0
    if np.any(sign * k1 <= 0):
        raise ValidationError(f"regime {regime} needs kappa1 of one sign everywhere")
    return Gauge(regime, np.log(sign * k1), None, "log|kappa1|")


def regime_target(gauge: Gauge) -> float:
    return {"kappa1_zero": gauge.kappa_bar2, "kappa1_pos": 1.0, "kappa1_neg": -1.0}[gauge.regime]


# -- leaves -----------------------------------------------------------------------------


@dataclass
class Leaf:
    eps: float
    phi0: np.ndarray
    target: float
    H: np.ndarray
    x_star: np.ndarray
    residual: float
    iterations: int
    update_norm: float
    regime: str
    history: list = field(default_factory=list)
    functional: str = "H"
    sigma: np.ndarray | None = None

    @property
    def mean_H(self) -> float:
        return float(np.mean(self.H))

    @property
    def H_deviation(self) -> float:
        return float(np.max(np.abs(self.H - self.mean_H)))

    def row(self) -> dict:
        row = {"eps": self.eps, "mean_H": self.mean_H, "H_dev": self.H_deviation, "residual": self.residual,
               "iterations": self.iterations, "update_norm": self.update_norm}
        if self.sigma is not None:
            row["mean_sigma"] = float(np.mean(self.sigma))
            row["sigma_dev"] = float(np.ptp(self.sigma))
        return row


def _leaf_preconditioner(m: MetricExpansion, eps: float, regime: str, gauge_phi: np.ndarray, kbar2: float | None,
                         coeff: float = 1.0):
    hbar = np.exp(2 * gauge_phi) * m.h0
    if regime == "kappa1_zero":
        return fourier_preconditioner(m.grid, coeff, -2 * coeff * kbar2, hbar)
    sign = 1.0 if regime == "kappa1_pos" else -1.0
    return fourier_preconditioner(m.grid, eps, -sign, hbar)


def resonance_margin(m: MetricExpansion, eps: float, gauge_phi: np.ndarray) -> float:
    """min |symbol| of eps Lap + 1 over the grid's Fourier modes (flat-symbol estimate)."""
    from .linalg import laplacian_symbol

    sym = eps * laplacian_symbol(m.grid, np.exp(2 * gauge_phi) * m.h0) + 1.0
    return float(np.min(np.abs(sym)))


def solve_leaf(m: MetricExpansion, eps: float, target: float, regime: str, init: np.ndarray | None = None,
               gauge: Gauge | None = None, tol: float = 1e-10, update_tol: float = 1e-10, maxiter: int = 25,
               steps: int = 48, spectrum: "SpectrumReport | None" = None, N: int = 3) -> Leaf:
    """Newton solve of N(phi0, eps) = target (kappa1 = 0) or Ntilde(phi0, eps) = target."""
    if regime not in REGIMES:
        raise ValidationError(f"unknown regime '{regime}'")
    g = m.grid
    phi_ref = gauge.phi_bar if gauge is not None else (np.zeros(g.shape) if init is None else init)
    init = phi_ref.copy() if init is None else np.asarray(init, dtype=float)
    if regime == "kappa1_neg":
        if spectrum is not None:
            if not spectrum.in_J(eps):
                near = spectrum.nearest_crossing(eps)
                raise ResonanceError(f"eps = {eps:.6g} is outside J({spectrum.N}); nearest crossing {near:.10g}",
                                     eps=float(eps), nearest_crossing=near)
        elif resonance_margin(m, eps, phi_ref) < eps**N:
            raise ResonanceError(f"eps = {eps:.6g} is too close to a resonance of eps Lap + 1", eps=float(eps))
    which = "N" if regime == "kappa1_zero" else "Ntilde"
    kbar = gauge.kappa_bar2 if gauge is not None else target
    reference = np.minimum(phi_ref, init)
    op = LevelSetOperator(m, eps, steps=steps, reference=reference, margin=1.5)
    F = lambda phi: op.value(phi, which) - target
    M = _leaf_preconditioner(m, eps, regime, phi_ref, kbar)
    norm = lambda d: scaled_norm(g, eps, d)
    res = newton_krylov(F, init, M, tol=tol, update_tol=update_tol, update_norm=norm, maxiter=maxiter)
    geo = op.geometry(res.x)
    return Leaf(float(eps), res.x, float(target), geo.mean_curvature(), geo.x, res.residual, res.iterations,
                res.update_norm, regime, res.history)


def model_schedule(m: MetricExpansion, gauge: Gauge, steps: int = 48):
    """Target eps -> value of the leaf operator on {x = eps}, for exact profile models.

    On those models the slices are the leaves, so this schedule makes phi0 = 0
    an exact root at every eps.
    """
    which = "N" if gauge.regime == "kappa1_zero" else "Ntilde"
    zero = np.zeros(m.grid.shape)
    return lambda eps: float(np.mean(LevelSetOperator(m, eps, steps=steps).value(zero, which)))


# -- foliations -----------------------------------------------------------------------------


@dataclass
class Foliation:
    leaves: list
    gauge: Gauge
    model: str
    gaps: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    failure: dict | None = None

    @property
    def eps(self) -> np.ndarray:
        return np.array([lf.eps for lf in self.leaves])

    @property
    def mean_H(self) -> np.ndarray:
        return np.array([lf.mean_H for lf in self.leaves])

    @property
    def complete(self) -> bool:
        return self.failure is None and not self.skipped


def continue_foliation(m: MetricExpansion, eps_ladder, regime: str | None = None, gauge: Gauge | None = None,
                       spectrum: "SpectrumReport | None" = None, target=None, steps: int = 48,
                       tol: float = 1e-10, update_tol: float | None = None, maxiter: int = 25,
                       solver=None) -> Foliation:
    """Solve leaves in increasing eps with warm starts.

    In the kappa1_neg regime, eps values outside J(N) are skipped and recorded
    as gaps. A leaf failure stops the sweep; the leaves found so far are kept
    and the error payload is stored on the result.
    """
    eps_ladder = np.sort(np.asarray(eps_ladder, dtype=float))
    if np.any(np.diff(eps_ladder) <= 0):
        raise ValidationError("eps ladder must be strictly increasing")
    gauge = gauge or make_gauge(m, regime)
    regime = gauge.regime
    if target is None:
        target = model_schedule(m, gauge, steps) if m.conformal_profile_only else regime_target(gauge)
    tgt = target
    fol = Foliation([], gauge, m.model)
    warm = gauge.phi_bar.copy()
    for eps in eps_ladder:
        if regime == "kappa1_neg" and spectrum is not None and not spectrum.in_J(eps):
            fol.skipped.append(float(eps))
            gap = spectrum.gap_containing(eps)
            if gap not in fol.gaps:
                fol.gaps.append(gap)
            continue
        try:
            t = tgt(eps) if callable(tgt) else tgt
            if solver is None:
                leaf = solve_leaf(m, eps, t, regime, init=warm, gauge=gauge, steps=steps, tol=tol,
                                  update_tol=tol if update_tol is None else update_tol, maxiter=maxiter,
                                  spectrum=spectrum)
            else:
                leaf = solver(m, eps, t, warm, gauge)
        except ResonanceError as exc:
            fol.skipped.append(float(eps))
            fol.gaps.append({"eps": float(eps), "nearest_crossing": exc.payload.get("nearest_crossing")})
            continue
        except ForgeError as exc:
            fol.failure = {"eps": float(eps), **exc.to_dict()}
            break
        fol.leaves.append(leaf)
        warm = leaf.phi0
    return fol


# -- resonances -------------------------------------------------------------------------------


class PencilSpectrum:
    """Full spectrum of -L_eps = -(eps Lap_{h(eps)} + q_eps), q_eps = -1/2 tr^h d_x h(eps).

    When h(x) = a(x) h0 exactly the spectrum is eps mu_j / a(eps) - q(eps) with mu_j
    the eigenvalues of -Lap_{h0}, computed once (in closed form for constant h0).
    Modes carrying a Nyquist index are not resolved by the spectral derivative
    (it annihilates them along that axis), so they are removed: dropped from the
    Fourier spectrum, and projected out on the dense path.
    """

    def __init__(self, m: MetricExpansion):
        self.m = m
        self.grid = m.grid
        self.profile_only = m.conformal_profile_only
        self._cache = {}
        self._mu = self._h0_spectrum() if self.profile_only else None

    def _dense(self, h: np.ndarray, potential, scale: float) -> np.ndarray:
        Q = resolved_basis(self.grid)
        S = symmetric_operator(self.grid, h, potential, scale=scale)
        return -(Q.T @ S @ Q)

    def _h0_spectrum(self) -> np.ndarray:
        g, h0 = self.grid, self.m.h0
        if all(np.ptp(h0[i, j]) == 0 for i in range(g.dim) for j in range(g.dim)):
            # constant h0: Fourier modes diagonalize the spectral Laplacian
            K = g.wavenumbers
            hinv = np.linalg.inv(h0[(slice(None), slice(None)) + (0,) * g.dim])
            mu = sum(hinv[i, j] * K[i] * K[j] for i in range(g.dim) for j in range(g.dim))
            mu = np.broadcast_to(mu, g.shape)[~g.nyquist_mask]
            return np.sort(mu.ravel())
        return np.linalg.eigvalsh(self._dense(h0, 0.0, 1.0))

    def q(self, eps: float) -> np.ndarray:
        m = self.m
        h = m.eval_h(eps)
        return -0.5 * np.einsum("ij...,ij...->...", fc.inverse(h), m.eval_dxh(eps))

    def eigenvalues(self, eps: float) -> np.ndarray:
        """All eigenvalues of -L_eps, ascending."""
        eps = float(eps)
        if eps in self._cache:
            return self._cache[eps]
        if self.profile_only:
            a = float(self.m.profile(eps, 0))
            q = float(np.mean(self.q(eps)))
            vals = eps * self._mu / a - q
        else:
            vals = np.linalg.eigvalsh(self._dense(self.m.eval_h(eps), self.q(eps), eps))
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[eps] = vals
        return vals

    def negative_count(self, eps: float) -> int:
        return int(np.sum(self.eigenvalues(eps) < 0))


@dataclass
class Crossing:
    eps: float
    multiplicity: int
    index: int
    speed: float

    def to_dict(self) -> dict:
        return {"eps": self.eps, "multiplicity": self.multiplicity, "branch_index": self.index,
                "eigenvalue_speed": self.speed}


@dataclass
class SpectrumReport:
    eps: np.ndarray
    lowest: np.ndarray               # (samples, m_eigs)
    near_zero: np.ndarray            # (samples, m_eigs) eigenvalues closest to 0, ascending
    crossings: list                  # Crossing, sorted by decreasing eps
    counts: np.ndarray               # N(eps): crossings (with multiplicity) above each sample
    gap_intervals: list              # [(lo, hi)] where min|eig| <= eps^N
    N: int
    eps_range: tuple
    speed_samples: list = field(default_factory=list)
    grid_resolution: tuple = ()

    @property
    def crossing_eps(self) -> np.ndarray:
        return np.array([c.eps for c in self.crossings])

    def in_J(self, eps: float) -> bool:
        return not any(lo <= eps <= hi for lo, hi in self.gap_intervals)

    def gap_containing(self, eps: float):
        for lo, hi in self.gap_intervals:
            if lo <= eps <= hi:
                return [lo, hi]
        return None

    def nearest_crossing(self, eps: float) -> float | None:
        if not self.crossings:
            return None
        e = self.crossing_eps
        return float(e[np.argmin(np.abs(e - eps))])

    def J_intervals(self) -> list:
        lo, hi = self.eps_range
        out = []
        cur = lo
        for a, b in sorted(self.gap_intervals):
            if a > cur:
                out.append((cur, min(a, hi)))
            cur = max(cur, b)
        if cur < hi:
            out.append((cur, hi))
        return out

    def counting_slope(self) -> float:
        ok = self.counts > 0
        return float(np.polyfit(np.log(self.eps[ok]), np.log(self.counts[ok]), 1)[0])

    def to_dict(self) -> dict:
        return {
            "eps_range": list(self.eps_range),
            "N": self.N,
            "grid": list(self.grid_resolution),
            "crossings": [c.to_dict() for c in self.crossings],
            "gap_intervals": [list(map(float, g)) for g in self.gap_intervals],
            "J_intervals": [list(map(float, g)) for g in self.J_intervals()],
            "counting_slope": self.counting_slope() if np.sum(self.counts > 0) >= 2 else None,
        }


def _sorted_branch(spec: PencilSpectrum, j: int):
    return lambda e: float(spec.eigenvalues(e)[j])


def scan_resonances(m: MetricExpansion, eps_range, n_samples: int = 200, m_eigs: int = 20, N: int = 3,
                    spacing: str = "log", xtol: float = 1e-13, speed_step: float = 1e-7) -> SpectrumReport:
    """Sample the spectrum of -L_eps, locate sign changes of eigenvalue branches and build J(N)."""
    lo, hi = map(float, eps_range)
    if not 0 < lo < hi <= m.x_max:
        raise ValidationError(f"eps range [{lo}, {hi}] must lie in (0, x_max = {m.x_max}]")
    if m_eigs > 50:
        raise ValidationError("m_eigs is limited to 50")
    spec = PencilSpectrum(m)
    eps = np.geomspace(lo, hi, n_samples) if spacing == "log" else np.linspace(lo, hi, n_samples)
    all_eigs = [spec.eigenvalues(e) for e in eps]
    lowest = np.array([ev[:m_eigs] for ev in all_eigs])
    near = []
    for ev in all_eigs:
        idx = np.sort(np.argsort(np.abs(ev))[:m_eigs])
        near.append(ev[idx])
    neg = np.array([int(np.sum(ev < 0)) for ev in all_eigs])
    # sorted-index branches: branch j changes sign between samples a < b iff neg[b] <= j < neg[a]
    roots = []
    for a in range(len(eps) - 1):
        for j in range(neg[a + 1], neg[a]):
            f = _sorted_branch(spec, j)
            r = brentq(f, eps[a], eps[a + 1], xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
            roots.append((r, j))
    roots.sort(key=lambda t: -t[0])
    crossings = []
    for r, j in roots:
        if crossings and abs(crossings[-1].eps - r) <= 1e-9 * r:
            crossings[-1].multiplicity += 1
            continue
        f = _sorted_branch(spec, j)
        d = speed_step * r
        crossings.append(Crossing(float(r), 1, int(j), (f(r + d) - f(r - d)) / (2 * d)))
    # N(eps) counts crossings (with multiplicity) lying above eps
    ce = np.array([c.eps for c in crossings])
    cm = np.array([c.multiplicity for c in crossings])
    counts = np.array([int(cm[ce > e].sum()) if len(ce) else 0 for e in eps])
    gaps = []
    for c in crossings:
        f = _sorted_branch(spec, c.index)
        width = lambda e: abs(f(e)) - e**N
        # near a simple crossing lambda ~ speed (e - c), so the edges sit about c^N/|speed| away
        reach = 2.0 * c.eps**N / max(abs(c.speed), 1e-300)
        edges = []
        for side in (-1.0, 1.0):
            b = c.eps + side * reach
            tries = 0
            while width(b) <= 0 and tries < 40:
                b = c.eps + 2.0 * (b - c.eps)
                tries += 1
            a, b = sorted((c.eps, b))
            edges.append(brentq(width, a, b, xtol=1e-16, maxiter=200) if width(b if side > 0 else a) > 0 else
                         (a if side < 0 else b))
        gaps.append((edges[0], edges[1]))
    gaps = _merge(gaps)
    # speed samples along tracked branches with |lambda| < 1/2
    samples = []
    for k, e in enumerate(eps):
        ev = all_eigs[k]
        for j in np.nonzero(np.abs(ev) < 0.5)[0][:m_eigs]:
            f = _sorted_branch(spec, int(j))
            d = speed_step * e
            lam = float(ev[j])
            dl = (f(e + d) - f(e - d)) / (2 * d)
            samples.append({"eps": float(e), "branch": int(j), "lambda": lam, "speed": dl,
                            "ratio": e * dl / (lam + 1.0)})
    return SpectrumReport(eps, lowest, np.array(near), crossings, counts, gaps, N, (lo, hi), samples,
                          m.grid.resolution)


def _merge(intervals):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def eigenvalue_speed_check(report: SpectrumReport, min_samples: int = 3, cluster_tol: float = 1e-9) -> dict:
    """Fit C in |eps lambda'/(lambda + 1) - 1| <= C eps over tracked samples.

    Samples whose eigenvalue belongs to a cluster (another sample at the same
    eps within cluster_tol) are reported but excluded from the fit.
    """
    rows = report.speed_samples
    if len(rows) < min_samples:
        from .errors import ConvergenceError

        raise ConvergenceError("not enough branch samples with |lambda| < 1/2 for the speed check",
                               samples=len(rows))
    eps = np.array([r["eps"] for r in rows])
    lam = np.array([r["lambda"] for r in rows])
    dev = np.abs(np.array([r["ratio"] for r in rows]) - 1.0)
    clustered = np.zeros(len(rows), dtype=bool)
    for i in range(len(rows)):
        same = (eps == eps[i]) & (np.abs(lam - lam[i]) < cluster_tol * max(1.0, abs(lam[i])))
        clustered[i] = same.sum() > 1
    C = float(np.max(dev / eps))
    C_simple = float(np.max((dev / eps)[~clustered])) if np.any(~clustered) else None
    return {"C": C, "C_unclustered": C_simple, "samples": len(rows), "clustered": int(clustered.sum()),
            "max_deviation": float(dev.max()), "violations": int(np.sum(dev > C * eps * (1 + 1e-12)))}


def collar_crossings(n: int, k_sq: list, sign: int = -1) -> list:
    """Exact crossings of the flat-torus exponential collar: eps e^{2 eps/n} 4 pi^2 |k|^2 = 1."""
    out = []
    for ks in k_sq:
        c = 4 * np.pi**2 * ks
        out.append(brentq(lambda e: e * np.exp(-sign * 2 * e / n) * c - 1.0, 1e-12, 1.0, xtol=1e-15))
    return out


# -- improved approximate solutions ---------------------------------------------------------------


@dataclass
class ImprovedApproximation:
    eps: float
    phi: list
    residuals: list
    decay: list


def improved_approximation(m: MetricExpansion, eps: float, q: int, target: float = -1.0, steps: int = 48,
                           blowup_ratio: float = 1e-3) -> ImprovedApproximation:
    """phi^{(j+1)} = phi^{(j)} + (Ntilde(phi^{(j)}, eps) - target)/kappa1, phi^{(0)} = 0.

    kappa1 = target after normalization, so with target -1 this subtracts the
    residual. Each step loses two derivatives; the iteration aborts once the top
    third of the spectrum carries more than ``blowup_ratio`` of the energy.
    """
    if not 0 <= q <= 6:
        raise ValidationError("q must be between 0 and 6")
    g = m.grid
    k1 = kappas(m).kappa1
    if np.max(np.abs(k1 - target)) > 1e-12:
        raise ValidationError("improved_approximation expects kappa1 normalized to the target")
    phi = np.zeros(g.shape)
    phis, res, decay = [phi], [], []
    for j in range(q + 1):
        try:
            op = LevelSetOperator(m, eps, steps=steps, reference=phi, margin=1.5)
            r = op.value(phi, "Ntilde") - target
        except (LevelSetError, BranchError) as exc:
            # the iterate has left the collar or the regular branch
            raise BlowUpError(f"iterate {j} no longer defines a leaf: {exc}", step=j) from exc
        res.append(r)
        if j == q:
            break
        phi = phi + r / target
        d = g.spectral_decay(phi)
        decay.append(d)
        if d > blowup_ratio:
            raise BlowUpError(f"spectral coefficients stopped decaying at step {j + 1} (tail ratio {d:.2e})",
                              step=j + 1, tail_ratio=d)
        phis.append(phi)
    return ImprovedApproximation(float(eps), phis, res, decay)


# -- audit ------------------------------------------------------------------------------------------


@dataclass
class AuditReport:
    monotonicity: str
    disjoint: bool
    min_gap: float
    psi: list
    psi_slope: float | None
    psi_order: float | None
    jacobi_max: list
    jacobi_branch: str
    unique: bool | None
    functional: str = "H"

    def to_dict(self) -> dict:
        return {
            "monotonicity": self.monotonicity,
            "disjoint": self.disjoint,
            "min_gap": self.min_gap,
            "psi": self.psi,
            "psi_slope": self.psi_slope,
            "psi_order": self.psi_order,
            "jacobi_max": self.jacobi_max,
            "jacobi_branch": self.jacobi_branch,
            "unique": self.unique,
            "functional": self.functional,
        }


def psi_orders(eps: np.ndarray, psi: np.ndarray) -> tuple[float | None, float | None]:
    """Plain log-log slope of psi, and the exponent s of a fit psi = eps^s (a + b eps).

    The second number isolates the leading order when the next term is not
    small over the ladder.
    """
    ok = psi > 1e-14
    if ok.sum() < 4:
        return None, None
    le, lp = np.log(eps[ok]), np.log(psi[ok])
    slope = float(np.polyfit(le, lp, 1)[0])
    model = lambda x, la, s, c: la + s * x + np.log(np.abs(1.0 + c * np.exp(x)))
    try:
        popt, _ = curve_fit(model, le, lp, p0=[lp[0] - slope * le[0], slope, 0.0], maxfev=5000)
        order = float(popt[1])
    except RuntimeError:
        order = None
    return slope, order


def audit_foliation(f: Foliation, m: MetricExpansion, jacobi_samples: int = 3, values=None,
                    functional: str = "H") -> AuditReport:
    """Monotonicity, disjointness, graph deviation from the reference gauge, Jacobi sign, uniqueness flag."""
    if len(f.leaves) < 3:
        raise ValidationError("audit needs at least 3 leaves")
    eps = f.eps
    vals = f.mean_H if values is None else np.asarray(values, dtype=float)
    d = np.diff(vals)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if np.all(d > 1e-13 * scale):
        mono = "increasing"
    elif np.all(d < -1e-13 * scale):
        mono = "decreasing"
    else:
        mono = "neither"
    xs = [lf.x_star for lf in f.leaves]
    gaps = [float(np.min(b - a)) for a, b in zip(xs[:-1], xs[1:])]
    min_gap = min(gaps)
    if min_gap <= 0:
        i = int(np.argmin(gaps))
        raise FoliationOverlapError(f"leaves at eps = {eps[i]:.6g} and {eps[i + 1]:.6g} intersect",
                                    min_gap=min_gap)
    phi_bar = f.gauge.phi_bar
    psi = []
    for lf in f.leaves:
        ef = extend(phi_bar, m, min(m.x_max, 1.5 * lf.eps * float(np.exp(-phi_bar.min()))), 48)
        ref = locate_level_set(ef, lf.eps).x_star
        psi.append(float(np.max(np.abs(lf.x_star - ref))))
    slope, order = psi_orders(eps, np.array(psi))
    picks = np.unique(np.linspace(0, len(eps) - 1, min(jacobi_samples, len(eps))).astype(int))
    jac = []
    for i in picks:
        try:
            jac.append(float(np.max(jacobi_potential(m, eps[i], phi_bar))))
        except ValidationError:
            continue
    if jac and max(jac) < 0:
        branch = "maximum_principle"
    elif jac:
        branch = "spectral"
    else:
        branch = "undetermined"
    unique = True if mono == "decreasing" else (False if mono == "increasing" else None)
    return AuditReport(mono, True, min_gap, psi, slope, order, jac, branch, unique, functional)
