import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from foliation_forge import grid as fc
from foliation_forge.errors import SingularMetricError, ValidationError
from foliation_forge.grid import Grid


def test_grid_validation():
    with pytest.raises(ValidationError):
        Grid((15, 16))
    with pytest.raises(ValidationError):
        Grid((16,))
    with pytest.raises(ValidationError):
        Grid((16, 16), period=(1.0, -1.0))


def test_basic_properties(g16):
    assert g16.dim == 2 and g16.shape == (16, 16) and g16.size == 256
    assert g16.volume == pytest.approx(1.0)
    assert g16.points.shape == (256, 2)
    assert g16.nyquist_mask.sum() == 31


@given(k1=st.integers(-7, 7), k2=st.integers(-7, 7), phase=st.sampled_from(["sin", "cos"]))
def test_mode_derivative_exact(g16, k1, k2, phase):
    f = g16.mode((k1, k2), phase)
    df = g16.diff(f, 0)
    other = g16.mode((k1, k2), "cos" if phase == "sin" else "sin")
    expected = 2 * np.pi * k1 * other * (1 if phase == "sin" else -1)
    assert np.max(np.abs(df - expected)) < 1e-10


def test_flat_laplacian_of_mode(g16):
    f = g16.mode((2, 3), "sin")
    lap = fc.laplace_beltrami(g16, f, g16.identity())
    assert np.max(np.abs(lap + 4 * np.pi**2 * 13 * f)) < 1e-9


def test_conformal_laplacian_2d(g32):
    # in two dimensions Lap_{e^{2u} h} = e^{-2u} Lap_h
    u = 0.2 * g32.mode((1, 1), "cos")
    f = g32.mode((1, 2), "sin") + 0.3 * g32.mode((0, 1), "cos")
    lhs = fc.laplace_beltrami(g32, f, g32.conformal(np.exp(2 * u)))
    rhs = np.exp(-2 * u) * fc.laplace_beltrami(g32, f, g32.identity())
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_laplacian_batch(g16):
    fs = np.stack([g16.mode((1, 0), "sin"), g16.mode((0, 2), "cos")])
    out = fc.laplace_beltrami(g16, fs, g16.identity())
    for f, o in zip(fs, out):
        assert np.allclose(o, fc.laplace_beltrami(g16, f, g16.identity()), atol=1e-12)


def test_scalar_curvature_conformal_2d():
    # R of e^{2u} dy^2 is -2 e^{-2u} Lap u
    g = Grid((32, 32))
    u = 0.1 * g.mode((1, 0), "sin") + 0.05 * g.mode((1, 1), "cos")
    _, R = fc.ricci_scalar(g, g.conformal(np.exp(2 * u)))
    expected = -2 * np.exp(-2 * u) * fc.laplace_beltrami(g, u, g.identity())
    assert np.max(np.abs(R - expected)) < 1e-8


def test_scalar_curvature_conformal_3d():
    # R of e^{2u} flat in n = 3: -e^{-2u} (4 Lap u + 2 |du|^2)
    g = Grid((16, 16, 16))
    u = 0.1 * g.mode((1, 0, 1), "sin")
    _, R = fc.ricci_scalar(g, g.conformal(np.exp(2 * u)))
    du = g.grad(u)
    expected = -np.exp(-2 * u) * (4 * fc.laplace_beltrami(g, u, g.identity()) + 2 * np.sum(du * du, axis=0))
    assert np.max(np.abs(R - expected)) < 1e-7


def test_integrate_and_inner(g16):
    f = g16.mode((1, 0), "sin")
    assert fc.integrate(g16, f * f) == pytest.approx(0.5, abs=1e-14)
    h = g16.conformal(4.0)
    assert fc.integrate(g16, np.ones(g16.shape), h) == pytest.approx(4.0)


@given(st.integers(0, 10_000))
def test_laplacian_self_adjoint(seed):
    g = Grid((16, 16))
    rng = np.random.default_rng(seed)
    f = g.random_smooth(rng, 3)
    k = g.random_smooth(rng, 3)
    u = 0.2 * g.random_smooth(rng, 2)
    h = g.conformal(np.exp(2 * u))
    h[0, 1] = h[1, 0] = 0.1 * g.random_smooth(rng, 1)
    a = fc.integrate(g, f * fc.laplace_beltrami(g, k, h), h)
    b = fc.integrate(g, k * fc.laplace_beltrami(g, f, h), h)
    assert abs(a - b) < 1e-9 * (1 + abs(a))


@given(st.integers(0, 10_000))
def test_inverse_and_det(seed):
    g = Grid((8, 8))
    rng = np.random.default_rng(seed)
    h = g.identity() + 0.3 * np.stack([np.stack([g.random_smooth(rng, 2)] * 2)] * 2) * np.array([[1, 0.5], [0.5, 1]])[..., None, None]
    hi = fc.inverse(h)
    prod = np.einsum("ik...,kj...->ij...", h, hi)
    assert np.max(np.abs(prod - g.identity())) < 1e-12
    assert np.allclose(fc.det(h), np.linalg.det(np.moveaxis(h, (0, 1), (-2, -1))))


def test_check_metric_rejects_indefinite(g16):
    h = g16.identity()
    h[1, 1] = -1.0
    with pytest.raises(SingularMetricError):
        fc.check_metric(h)


def test_christoffel_flat_vanish(g16):
    assert np.max(np.abs(fc.christoffel(g16, g16.identity()))) == 0.0


def test_fourier_interpolant_exact_off_grid(g16):
    f = g16.mode((2, 1), "sin") + 0.5 * g16.mode((0, 3), "cos")
    pts = np.array([[0.123, 0.77], [0.5, 0.031], [0.91, 0.42]])
    vals = g16.interpolator(f)(pts)
    exact = np.sin(2 * np.pi * (2 * pts[:, 0] + pts[:, 1])) + 0.5 * np.cos(2 * np.pi * 3 * pts[:, 1])
    assert np.max(np.abs(vals - exact)) < 1e-13


def test_spectral_decay_small_for_smooth(g16):
    assert g16.spectral_decay(g16.mode((1, 1), "sin")) < 1e-20
    rng = np.random.default_rng(0)
    assert g16.spectral_decay(rng.normal(size=g16.shape)) > 0.1


def test_check_finite(g16):
    f = np.zeros(g16.shape)
    f[0, 0] = np.nan
    with pytest.raises(ValidationError):
        fc.check_finite(f, "f")
