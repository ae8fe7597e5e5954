"""Ambient metrics in normal form ``g = x^-2 (dx^2 + h(x))``.

A ``MetricExpansion`` stores

    h(x, y) = a(x) h0(y) + sum_j x^j c_j(y)

where ``a`` is a scalar profile with a(0) = 1 (identically 1 for polynomial
expansions) and the ``c_j`` are additive corrections. The closed-form models
are pure profiles; perturbed models add corrections on top. This keeps every
model exact while letting spatial derivatives of h(x) be formed from stored
derivatives of h0 and c_j, which is what the extrinsic assembly needs when x
varies from point to point along a leaf.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np

from . import grid as fc
from .errors import CollarError, SingularMetricError, ValidationError
from .grid import Grid


@dataclass(frozen=True)
class Profile:
    """Scalar conformal profile a(x) with its first three x-derivatives."""

    name: str
    kind: str
    param: float = 0.0

    def __call__(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k == "one":
            return np.ones_like(x) if order == 0 else np.zeros_like(x)
        if k in ("ball", "fuchsian"):
            s = -1.0 if k == "ball" else 1.0
            # (1 + s x^2/4)^2 = 1 + s x^2/2 + x^4/16
            return [1 + s * x**2 / 2 + x**4 / 16, s * x + x**3 / 4, s + 3 * x**2 / 4, 1.5 * x][order]
        if k == "exp":
            c = self.param
            return c**order * np.exp(c * x)
        raise ValidationError(f"unknown profile kind {k}")

    def taylor(self, j: int) -> float:
        """j-th Taylor coefficient of a at x = 0."""
        k = self.kind
        if k == "exp":
            return self.param**j / factorial(j)
        if k in ("ball", "fuchsian"):
            s = -1.0 if k == "ball" else 1.0
            return {0: 1.0, 2: s / 2, 4: 1.0 / 16}.get(j, 0.0)
        return 1.0 if j == 0 else 0.0

    @property
    def is_trivial(self) -> bool:
        return self.kind == "one"


PROFILES = {
    "horospherical": Profile("horospherical", "one"),
    "polynomial": Profile("polynomial", "one"),
    "hyperbolic_ball": Profile("hyperbolic_ball", "ball"),
    "fuchsian": Profile("fuchsian", "fuchsian"),
}

DEFAULT_X_MAX = {
    "hyperbolic_ball": 1.5,
    "fuchsian": 1.5,
    "horospherical": 1.5,
    "exponential_collar": 1.0,
    "polynomial": 0.6,
}


@dataclass
class KappaPair:
    kappa1: np.ndarray
    kappa2: np.ndarray


@dataclass(eq=False)
class MetricExpansion:
    grid: Grid
    h0: np.ndarray
    corrections: dict[int, np.ndarray] = field(default_factory=dict)
    profile: Profile = PROFILES["polynomial"]
    x_max: float = 0.6
    model: str = "polynomial"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.dim
        self.h0 = fc.symmetrize(np.asarray(self.h0, dtype=float))
        if self.h0.shape != (n, n) + self.grid.shape:
            raise ValidationError(f"h0 has shape {self.h0.shape}, expected {(n, n) + self.grid.shape}")
        fc.check_metric(self.h0, "h0")
        corr = {}
        for j, c in self.corrections.items():
            j = int(j)
            if j < 1:
                raise ValidationError("correction orders start at 1")
            c = fc.symmetrize(np.asarray(c, dtype=float))
            fc.check_finite(c, f"h{j} correction")
            if np.any(c):
                corr[j] = c
        self.corrections = dict(sorted(corr.items()))
        if not self.x_max > 0:
            raise ValidationError(f"x_max must be positive, got {self.x_max}")
        self._cache = {}
        self._dh0 = None
        self._dcorr = None
        self._check_collar()

    # -- structure --------------------------------------------------------

    @property
    def n(self) -> int:
        return self.grid.dim

    @property
    def conformal_profile_only(self) -> bool:
        """True when h(x) = a(x) h0 exactly, so every slice is a constant multiple of h0."""
        return not self.corrections

    def coefficient(self, j: int) -> np.ndarray:
        """Taylor coefficient h_j of h(x) at x = 0."""
        out = self.profile.taylor(j) * self.h0
        if j in self.corrections:
            out = out + self.corrections[j]
        return out

    @property
    def h1(self) -> np.ndarray:
        return self.coefficient(1)

    @property
    def h2(self) -> np.ndarray:
        return self.coefficient(2)

    def _check_collar(self):
        for x in np.linspace(0.0, self.x_max, 32):
            try:
                fc.check_metric(self.eval_h(x, check=False), f"h({x:.4g})")
            except SingularMetricError as exc:
                raise CollarError(f"h(x) loses positivity at x = {x:.6g} <= x_max = {self.x_max}", x=float(x)) from exc

    def _validate_x(self, x):
        xa = np.asarray(x, dtype=float)
        if np.any(xa < 0) or np.any(xa > self.x_max * (1 + 1e-12)):
            raise CollarError(f"x outside collar [0, {self.x_max}]: range [{xa.min():.6g}, {xa.max():.6g}]",
                              x_max=self.x_max)
        return xa

    # -- evaluation -------------------------------------------------------

    def _combine(self, x, order: int, base: np.ndarray, corr: dict[int, np.ndarray]):
        """sum of d^order/dx^order of a(x)*base + sum x^j corr_j, x scalar or grid-shaped."""
        out = self.profile(x, order) * base
        for j, c in corr.items():
            if j < order:
                continue
            coef = comb(j, order) * factorial(order)
            out = out + coef * np.asarray(x, dtype=float) ** (j - order) * c
        return out

    def eval_h(self, x, check: bool = True) -> np.ndarray:
        if check:
            self._validate_x(x)
        return self._combine(x, 0, self.h0, self.corrections)

    def eval_dxh(self, x) -> np.ndarray:
        self._validate_x(x)
        return self._combine(x, 1, self.h0, self.corrections)

    def eval_dxxh(self, x) -> np.ndarray:
        self._validate_x(x)
        return self._combine(x, 2, self.h0, self.corrections)

    def eval_dyh(self, x) -> np.ndarray:
        """Spatial derivatives ``[l, i, j] = d_l h_ij`` at fixed x (x may vary over the grid)."""
        if self._dh0 is None:
            g = self.grid
            self._dh0 = np.stack([g.diff(self.h0, a) for a in range(self.n)])
            self._dcorr = {j: np.stack([g.diff(c, a) for a in range(self.n)]) for j, c in self.corrections.items()}
        x = self._validate_x(x)
        out = self.profile(x, 0) * self._dh0
        for j, dc in self._dcorr.items():
            out = out + x**j * dc
        return out

    def slice(self, x: float) -> dict:
        """Cached per-slice data at a scalar x: h, h^-1, sqrt det h, d_x h, d_x h^-1."""
        key = float(x)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        h = self.eval_h(key)
        hinv = fc.inverse(h)
        dxh = self.eval_dxh(key)
        data = {
            "h": h,
            "hinv": hinv,
            "sqrtg": np.sqrt(fc.det(h)),
            "dxh": dxh,
            "dx_hinv": -np.einsum("ik...,kl...,lj...->ij...", hinv, dxh, hinv),
        }
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = data
        return data

    def taylor_discrepancy(self, step: float = 1e-3) -> float:
        """Max gap between stored h1, h2 and a quartic fit of eval_h at 0, s, .., 4s."""
        xs = step * np.arange(5)
        vals = np.stack([self.eval_h(x) for x in xs])
        V = np.vander(xs, 5, increasing=True)
        coef = np.linalg.solve(V, vals.reshape(5, -1)).reshape(vals.shape)
        return float(max(np.abs(coef[1] - self.h1).max(), np.abs(coef[2] - self.h2).max()))

    def with_corrections(self, extra: dict[int, np.ndarray], x_max: float | None = None) -> "MetricExpansion":
        corr = {j: c.copy() for j, c in self.corrections.items()}
        for j, c in extra.items():
            corr[j] = corr.get(j, 0.0) + c
        return MetricExpansion(self.grid, self.h0, corr, self.profile, x_max or self.x_max,
                               f"{self.model}+perturbation" if extra else self.model, dict(self.params))


# -- constructors ----------------------------------------------------------------


def model(name: str, grid: Grid, x_max: float | None = None, h0: np.ndarray | None = None,
          perturbation: dict[int, np.ndarray] | None = None, sign: int = -1) -> MetricExpansion:
    """Build one of the closed-form models.

    ``exponential_collar`` takes ``sign`` = -1 for h = e^{-2x/n} h0 (kappa1 = -1)
    and +1 for the reflected collar (kappa1 = +1).
    """
    n = grid.dim
    if h0 is None:
        h0 = grid.identity()
    if name == "exponential_collar":
        if sign not in (-1, 1):
            raise ValidationError("collar sign must be +1 or -1")
        prof = Profile(name, "exp", 2.0 * sign / n)
        params = {"sign": sign}
    elif name in PROFILES and name != "polynomial":
        prof = PROFILES[name]
        params = {}
    else:
        raise ValidationError(f"unknown model '{name}'; choose from {sorted(MODEL_NAMES)}")
    xm = DEFAULT_X_MAX[name] if x_max is None else float(x_max)
    if name == "hyperbolic_ball" and xm >= 2.0:
        raise CollarError(f"hyperbolic_ball collar must satisfy x_max < 2, got {xm}")
    return MetricExpansion(grid, h0, dict(perturbation or {}), prof, xm, name if not perturbation else name + "+perturbation", params)


def polynomial(grid: Grid, h0, h1=None, h2=None, higher: dict[int, np.ndarray] | None = None,
               x_max: float = 0.6) -> MetricExpansion:
    corr = {}
    if h1 is not None:
        corr[1] = h1
    if h2 is not None:
        corr[2] = h2
    corr.update(higher or {})
    return MetricExpansion(grid, h0, corr, PROFILES["polynomial"], x_max, "polynomial")


MODEL_NAMES = ("hyperbolic_ball", "fuchsian", "horospherical", "exponential_collar")


# -- invariants -------------------------------------------------------------------


def kappas(m: MetricExpansion) -> KappaPair:
    hinv = fc.inverse(m.h0)
    tr1, norm1 = fc.tensor_norms(m.h1, m.h0, hinv)
    tr2, _ = fc.tensor_norms(m.h2, m.h0, hinv)
    return KappaPair(0.5 * tr1, tr2 - 0.5 * norm1)


def schouten(grid: Grid, h0: np.ndarray) -> np.ndarray:
    n = grid.dim
    if n < 3:
        raise ValidationError("the Schouten tensor needs n >= 3")
    ric, R = fc.ricci_scalar(grid, h0)
    return (ric - R * h0 / (2.0 * (n - 1))) / (n - 2)


def weakly_pe(grid: Grid, h0: np.ndarray, x_max: float = 0.6) -> MetricExpansion:
    """Expansion with h1 = 0 and h2 = -P(h0)."""
    P = schouten(grid, h0)
    m = polynomial(grid, h0, None, -P, x_max=x_max)
    m.model = "weakly_pe"
    return m


def model_table(grid: Grid) -> list[dict]:
    """kappa values of the built-in models on a flat boundary."""
    rows = []
    for name in MODEL_NAMES:
        signs = (-1, 1) if name == "exponential_collar" else (None,)
        for s in signs:
            m = model(name, grid) if s is None else model(name, grid, sign=s)
            k = kappas(m)
            rows.append({
                "model": name if s is None else f"{name}[{'+' if s > 0 else '-'}]",
                "n": grid.dim,
                "x_max": m.x_max,
                "kappa1": float(np.mean(k.kappa1)),
                "kappa2": float(np.mean(k.kappa2)),
            })
    return rows
