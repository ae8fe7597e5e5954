"""Periodic boundary grids and pseudo-spectral differential geometry.

Fields are plain numpy arrays laid out component-first:

    scalar   grid.shape
    vector   (n,) + grid.shape
    tensor   (n, n) + grid.shape     (symmetric, stored in full)

Every operator accepts extra leading batch axes on scalar inputs, so a stack
of fields ``(k,) + grid.shape`` can be differentiated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import SingularMetricError, ValidationError


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the flat torus ``prod [0, period_i)``."""

    resolution: tuple[int, ...]
    period: tuple[float, ...] = None
    dealias: bool = False

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        per = self.period
        if per is None:
            per = (1.0,) * len(res)
        per = tuple(float(p) for p in per)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "period", per)
        if len(res) not in (2, 3):
            raise ValidationError(f"grid dimension must be 2 or 3, got {len(res)}")
        if len(per) != len(res):
            raise ValidationError("period and resolution lengths differ")
        for r in res:
            if r < 8 or r % 2:
                raise ValidationError(f"resolution entries must be even and >= 8, got {res}")
        if any(p <= 0 for p in per):
            raise ValidationError(f"periods must be positive, got {per}")

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(p / r for p, r in zip(self.period, self.resolution))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.period))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.arange(r) * (p / r) for r, p in zip(self.resolution, self.period))

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """All grid points as an ``(size, n)`` array in C order."""
        return np.stack([c.ravel() for c in self.coords], axis=-1)

    @cached_property
    def _rwavenumbers(self) -> tuple[np.ndarray, ...]:
        # ik multipliers for rfft along each axis; Nyquist zeroed for odd derivatives.
        out = []
        for r, p in zip(self.resolution, self.period):
            k = 2.0 * np.pi * sfft.rfftfreq(r, d=p / r)
            k[-1] = 0.0
            out.append(k)
        return tuple(out)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Full (fftn-ordered) angular wavenumbers, broadcastable over the grid."""
        ks = []
        for ax, (r, p) in enumerate(zip(self.resolution, self.period)):
            k = 2.0 * np.pi * sfft.fftfreq(r, d=p / r)
            shape = [1] * self.dim
            shape[ax] = r
            ks.append(k.reshape(shape))
        return tuple(ks)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on fftn modes that carry a Nyquist index along some axis."""
        mask = np.zeros(self.shape, dtype=bool)
        for ax, r in enumerate(self.resolution):
            idx = [slice(None)] * self.dim
            idx[ax] = r // 2
            mask[tuple(idx)] = True
        return mask

    # -- construction helpers -------------------------------------------------

    def scalar(self, fn=None, value=0.0) -> np.ndarray:
        if fn is None:
            return np.full(self.shape, float(value))
        return np.asarray(fn(*self.coords), dtype=float) * np.ones(self.shape)

    def identity(self) -> np.ndarray:
        n = self.dim
        eye = np.eye(n).reshape((n, n) + (1,) * n)
        return np.broadcast_to(eye, (n, n) + self.shape).copy()

    def conformal(self, factor) -> np.ndarray:
        """Tensor ``factor * I`` for a scalar field or constant ``factor``."""
        return self.identity() * np.asarray(factor, dtype=float)

    def mode(self, wave: tuple[int, ...], phase: str = "sin") -> np.ndarray:
        arg = sum(2.0 * np.pi * w * c / p for w, c, p in zip(wave, self.coords, self.period))
        return np.sin(arg) if phase == "sin" else np.cos(arg)

    def random_smooth(self, rng, kmax: int = 3, amplitude: float = 1.0) -> np.ndarray:
        """Random real trigonometric polynomial with wavenumbers ``|k_i| <= kmax``."""
        f = np.zeros(self.shape)
        ranges = [range(-kmax, kmax + 1)] * self.dim
        for wave in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(self.dim, -1).T:
            if not np.any(wave):
                continue
            c = rng.normal(size=2) / (1.0 + float(np.dot(wave, wave)))
            f += c[0] * self.mode(tuple(wave), "sin") + c[1] * self.mode(tuple(wave), "cos")
        return amplitude * f / np.max(np.abs(f))

    # -- spectral calculus ----------------------------------------------------

    def _axis(self, f: np.ndarray, axis: int) -> int:
        return f.ndim - self.dim + axis

    def diff(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Spectral first derivative along ``axis`` (trailing grid axes)."""
        ax = self._axis(f, axis)
        fk = sfft.rfft(f, axis=ax)
        shape = [1] * f.ndim
        shape[ax] = -1
        fk *= 1j * self._rwavenumbers[axis].reshape(shape)
        return sfft.irfft(fk, n=self.resolution[axis], axis=ax)

    def grad(self, f: np.ndarray) -> np.ndarray:
        """Coordinate gradient, stacked on a new axis just before the grid axes."""
        parts = [self.diff(f, a) for a in range(self.dim)]
        return np.stack(parts, axis=f.ndim - self.dim)

    def hessian(self, f: np.ndarray) -> np.ndarray:
        """Coordinate second derivatives ``(n, n, ...)`` by composing first derivatives."""
        n = self.dim
        d1 = [self.diff(f, a) for a in range(n)]
        rows = [[None] * n for _ in range(n)]
        for a in range(n):
            for b in range(a, n):
                rows[a][b] = rows[b][a] = self.diff(d1[b], a)
        ax = f.ndim - n
        return np.stack([np.stack(r, axis=ax) for r in rows], axis=ax)

    def dealias_filter(self, f: np.ndarray) -> np.ndarray:
        """Two-thirds rule filter; identity unless the grid was built with ``dealias``."""
        if not self.dealias:
            return f
        axes = tuple(range(f.ndim - self.dim, f.ndim))
        fk = sfft.fftn(f, axes=axes)
        keep = np.ones(self.shape, dtype=bool)
        for k, r, p in zip(self.wavenumbers, self.resolution, self.period):
            keep &= np.abs(k) * p / (2.0 * np.pi) < r / 3.0
        return sfft.ifftn(fk * keep, axes=axes).real

    def spectral_decay(self, f: np.ndarray) -> float:
        """Ratio of energy in the top third of wavenumbers to the total.

        Used as a smoothness diagnostic; tiny for well-resolved fields.
        """
        fk = np.abs(sfft.fftn(f)) ** 2
        shell = np.zeros(self.shape)
        for k, r, p in zip(self.wavenumbers, self.resolution, self.period):
            shell = np.maximum(shell, np.abs(k) * p / (2.0 * np.pi) / (r / 2.0))
        total = fk.sum()
        if total == 0.0:
            return 0.0
        return float(fk[shell > 2.0 / 3.0].sum() / total)

    def interpolator(self, f: np.ndarray) -> "FourierInterpolant":
        return FourierInterpolant(self, f)


@dataclass
class FourierInterpolant:
    """Trigonometric interpolant of a grid field, evaluable off-grid."""

    grid: Grid
    values: np.ndarray
    constant: bool = field(init=False)

    def __post_init__(self):
        self.constant = bool(np.ptp(self.values) == 0.0)
        self._coef = sfft.fftn(self.values) / self.grid.size

    def __call__(self, points: np.ndarray, deriv: int | None = None) -> np.ndarray:
        points = np.atleast_2d(points)
        m = points.shape[0]
        if self.constant:
            if deriv is None:
                return np.full(m, float(self.values.flat[0]))
            return np.zeros(m)
        mats = []
        for ax, (r, p) in enumerate(zip(self.grid.resolution, self.grid.period)):
            k = 2.0 * np.pi * sfft.fftfreq(r, d=p / r)
            e = np.exp(1j * np.outer(points[:, ax], k))
            nyq = r // 2
            if ax == deriv:
                e = e * (1j * k)
                e[:, nyq] = 0.0
            else:
                e[:, nyq] = np.cos(k[nyq] * points[:, ax])
            mats.append(e)
        if self.grid.dim == 2:
            val = np.einsum("ma,ab,mb->m", mats[0], self._coef, mats[1], optimize=True)
        else:
            val = np.einsum("ma,abc,mb,mc->m", mats[0], self._coef, mats[1], mats[2], optimize=True)
        return val.real


# -- pointwise tensor algebra --------------------------------------------------


def _to_last(t: np.ndarray, n: int) -> np.ndarray:
    return np.moveaxis(t, (0, 1), (-2, -1))


def _to_first(t: np.ndarray) -> np.ndarray:
    return np.moveaxis(t, (-2, -1), (0, 1))


def check_finite(f: np.ndarray, name: str = "field") -> None:
    if not np.all(np.isfinite(f)):
        raise ValidationError(f"{name} contains non-finite values")


def symmetrize(t: np.ndarray) -> np.ndarray:
    return 0.5 * (t + np.swapaxes(t, 0, 1))


def check_metric(h: np.ndarray, name: str = "metric") -> None:
    check_finite(h, name)
    lam = np.linalg.eigvalsh(_to_last(symmetrize(h), h.shape[0]))
    if lam.min() <= 0.0:
        raise SingularMetricError(
            f"{name} is not positive definite (min eigenvalue {lam.min():.3e})",
            min_eigenvalue=float(lam.min()),
        )


def inverse(h: np.ndarray) -> np.ndarray:
    return _to_first(np.linalg.inv(_to_last(h, h.shape[0])))


def det(h: np.ndarray) -> np.ndarray:
    return np.linalg.det(_to_last(h, h.shape[0]))


def volume_density(h: np.ndarray) -> np.ndarray:
    d = det(h)
    if np.any(d <= 0.0):
        raise SingularMetricError("metric determinant is not positive")
    return np.sqrt(d)


# -- geometric operators -------------------------------------------------------


def partial_derivative(grid: Grid, f: np.ndarray, axis: int) -> np.ndarray:
    if not 0 <= axis < grid.dim:
        raise ValidationError(f"axis {axis} out of range for a {grid.dim}-d grid")
    check_finite(f)
    return grid.diff(f, axis)


def gradient(grid: Grid, f: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Metric gradient ``h^{ij} d_j f``."""
    check_finite(f)
    check_metric(h)
    return np.einsum("ij...,j...->i...", inverse(h), grid.grad(f))


def laplace_beltrami(grid: Grid, f: np.ndarray, h: np.ndarray, hinv=None, sqrtg=None) -> np.ndarray:
    """Divergence form ``g^{-1/2} d_i (g^{1/2} h^{ij} d_j f)``.

    ``hinv`` and ``sqrtg`` may be supplied to skip the pointwise inversion when
    the same metric is applied many times.
    """
    if hinv is None:
        check_metric(h)
        hinv = inverse(h)
    if sqrtg is None:
        sqrtg = volume_density(h)
    df = grid.grad(f)
    ax = f.ndim - grid.dim
    # flux_i = sqrtg h^{ij} d_j f, gradient axis sits right after the batch axes
    flux = np.moveaxis(np.einsum("ij...,j...->i...", hinv, np.moveaxis(df, ax, 0)), 0, ax) * sqrtg
    div = sum(grid.diff(np.take(flux, a, axis=ax), a) for a in range(grid.dim))
    return div / sqrtg


def tensor_norms(a: np.ndarray, h: np.ndarray, hinv=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(tr^h a, |a|_h^2)``."""
    if hinv is None:
        check_metric(h)
        hinv = inverse(h)
    trace = np.einsum("ij...,ij...->...", hinv, a)
    raised = np.einsum("ik...,kj...->ij...", hinv, a)
    norm_sq = np.einsum("ij...,ji...->...", raised, raised)
    return trace, norm_sq


def integrate(grid: Grid, f: np.ndarray, h: np.ndarray | None = None) -> float:
    """Trapezoidal (spectrally accurate) quadrature of ``f dV_h``."""
    check_finite(f)
    w = 1.0 if h is None else volume_density(h)
    total = np.sum(f * w, axis=tuple(range(-grid.dim, 0))) * grid.cell_volume
    return float(total) if np.ndim(total) == 0 else total


def inner(grid: Grid, f: np.ndarray, g: np.ndarray, h: np.ndarray | None = None) -> float:
    return integrate(grid, f * g, h)


def christoffel(grid: Grid, h: np.ndarray, dh: np.ndarray | None = None, hinv=None) -> np.ndarray:
    """Second-kind symbols ``Gamma[k, i, j]``.

    ``dh[l, i, j]`` is ``d_l h_ij``; it is computed spectrally when omitted.
    """
    if hinv is None:
        hinv = inverse(h)
    if dh is None:
        dh = np.stack([grid.diff(h, a) for a in range(grid.dim)])
    # lower[l, i, j] = 1/2 (d_i h_jl + d_j h_il - d_l h_ij)
    lower = 0.5 * (np.einsum("ijl...->lij...", dh) + np.einsum("jil...->lij...", dh) - dh)
    return np.einsum("kl...,lij...->kij...", hinv, lower)


def ricci_scalar(grid: Grid, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ricci tensor and scalar curvature from Christoffel symbols."""
    check_metric(h)
    hinv = inverse(h)
    gam = christoffel(grid, h, hinv=hinv)
    n = grid.dim
    # d_k Gamma^k_ij and d_j Gamma^k_ik
    div_gam = sum(grid.diff(gam[k], k) for k in range(n))
    contracted = np.einsum("kik...->i...", gam)
    d_contracted = np.stack([np.stack([grid.diff(contracted[i], j) for j in range(n)]) for i in range(n)])
    quad1 = np.einsum("kkl...,lij...->ij...", gam, gam)
    quad2 = np.einsum("kjl...,lik...->ij...", gam, gam)
    ric = div_gam - d_contracted + quad1 - quad2
    ric = symmetrize(ric)
    return ric, np.einsum("ij...,ij...->...", hinv, ric)
