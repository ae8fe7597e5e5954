from math import comb

import numpy as np
import pytest

from foliation_forge.ambient import kappas, model
from foliation_forge.extrinsic import (LevelSetOperator, explicit_linearization, h_of_eps, leaf_geometry,
                                       linearize_n, mean_curvature, sigma_from_shift, transform_kappas)
from foliation_forge.grid import Grid
from foliation_forge.hj import extend
from foliation_forge.sigma_k import sigma_k


def _phi0(g, a=0.1, b=0.05):
    y1, y2 = g.coords
    return a * np.sin(2 * np.pi * y1) + b * np.cos(2 * np.pi * (y1 - y2))


def test_graph_mean_curvature_in_half_space(g32):
    # flat h: the leaf is a graph x = f(y) in the upper half-space, where
    # H = x div(grad f / W) + n / W with W = sqrt(1 + |grad f|^2)
    m = model("horospherical", g32)
    eps = 0.05
    ef = extend(_phi0(g32, 0.3, 0.2), m, 0.1, 64)
    geo = leaf_geometry(m, ef, eps)
    f = geo.x
    df = g32.grad(f)
    W = np.sqrt(1 + df[0] ** 2 + df[1] ** 2)
    H = f * (g32.diff(df[0] / W, 0) + g32.diff(df[1] / W, 1)) + 2 / W
    assert np.max(np.abs(geo.mean_curvature() - H)) < 1e-9


@pytest.mark.parametrize("name", ["fuchsian", "hyperbolic_ball"])
def test_exact_model_leaves(g16, name):
    # {x = eps}: H = n - eps/2 tr h^{-1} d_x h, which for (1 -+ x^2/4)^2 h0 is in closed form
    m = model(name, g16)
    s = 1.0 if name == "fuchsian" else -1.0
    for eps in (0.05, 0.3):
        H = mean_curvature(m, extend(np.zeros(g16.shape), m, 0.5), eps).H
        a = 1 + s * eps**2 / 4
        assert np.allclose(H, 2 - eps * 2 * (s * eps / 2) / a, atol=1e-14)


def test_pointwise_identities(g16):
    m = model("fuchsian", g16, perturbation={2: 0.2 * g16.conformal(g16.mode((1, 1), "cos"))})
    eps = 0.1
    geo = leaf_geometry(m, extend(_phi0(g16, 0.2, 0.1), m, 0.2), eps)
    H = geo.mean_curvature()
    lam = geo.principal_curvatures()
    B = geo.shape_operator()
    assert np.max(np.abs(lam.sum(axis=0) - H)) < 1e-12
    assert np.max(np.abs(np.einsum("ii...->...", B) - H)) < 1e-12
    assert np.max(np.abs(geo.n_value() * eps**2 - (2 - H))) < 1e-12
    assert np.allclose(geo.ntilde_value(), eps * geo.n_value(), rtol=1e-12)
    assert geo.normal_leak() < 1e-12
    X = geo.shifted_shape_operator()
    for k in (1, 2):
        assert np.max(np.abs(sigma_from_shift(X, k) - (sigma_k(B, k) - comb(2, k)))) < 1e-12


def test_shape_operator_symmetric_in_induced_metric(g16):
    m = model("hyperbolic_ball", g16)
    geo = leaf_geometry(m, extend(_phi0(g16, 0.15, 0.1), m, 0.3), 0.15)
    assert np.max(np.abs(geo.A_T - np.swapaxes(geo.A_T, 0, 1))) == 0.0
    assert np.all(geo.principal_curvatures() > 0)


def test_transform_kappas_against_rescaled_leaves(g16):
    # the rescaled defining function x e^phi has its own kappas, read off from small leaves
    m = model("fuchsian", g16, perturbation={2: 0.2 * g16.conformal(g16.mode((1, 0), "cos"))})
    phi0 = _phi0(g16, 0.1, 0.05)
    k = transform_kappas(kappas(m), phi0, m.h0, g16)
    ef = extend(phi0, m, 0.05, 64)
    es = np.array([0.004, 0.006, 0.008, 0.01, 0.012])
    # n - H = kappa1 eps + (kappa2 - kappa1^2 ...) eps^2; kappa1 = 0 here so the eps^2 term is kappa2
    vals = np.stack([leaf_geometry(m, ef, e).n_value() for e in es])
    fit = np.polyfit(es, vals.reshape(len(es), -1), 2)[2].reshape(g16.shape)
    assert np.allclose(k.kappa1, 0.0)
    assert np.max(np.abs(fit - k.kappa2)) < 1e-5 * np.max(np.abs(k.kappa2))


def test_linearization_matches_closed_form():
    g = Grid((12, 12))
    m = model("exponential_collar", g, sign=-1, x_max=0.5)
    eps = 0.05
    psi = g.mode((1, 0), "sin") + 0.5 * g.mode((1, 1), "cos")
    num = linearize_n(m, np.zeros(g.shape), eps, which="Ntilde") @ psi.ravel()
    exact = explicit_linearization(m, eps, "Ntilde")(psi)
    assert np.max(np.abs(num.reshape(g.shape) - exact)) < 1e-6 * np.max(np.abs(exact))


def test_level_set_operator_counts(g16):
    m = model("fuchsian", g16)
    op = LevelSetOperator(m, 0.1)
    op.value(np.zeros(g16.shape), "H")
    op.value(np.zeros(g16.shape), "N")
    assert op.evaluations == 2
    assert np.allclose(h_of_eps(m, 0.1), op.value(np.zeros(g16.shape), "H"))
