import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foliation_forge.ambient import kappas, model
from foliation_forge.errors import DegenerateProblemError, ValidationError
from foliation_forge.extrinsic import transform_kappas
from foliation_forge.grid import Grid
from foliation_forge.yamabe import fixed_point_2d, invariant_sign, normalize_kappa2


def _metric(g, k2):
    # horospherical base with h2 = kappa2/n h0 gives exactly this kappa2
    return model("horospherical", g, perturbation={2: g.conformal(k2 / g.dim)})


def test_2d_newton_against_fixed_point(g16):
    k2 = 1 + 0.5 * g16.mode((1, 1), "cos") + 0.3 * g16.mode((0, 1), "sin")
    m = _metric(g16, k2)
    sol = normalize_kappa2(m)
    assert sol.residual < 1e-12 and sol.nondegenerate
    assert np.isclose(sol.kappa_bar2, 1.0)
    phi = fixed_point_2d(g16, m.h0, kappas(m).kappa2, sol.kappa_bar2)
    assert np.max(np.abs(phi - sol.phi0)) < 1e-9


def test_2d_transformed_kappa_is_constant(g16):
    k2 = 2 + 0.8 * g16.mode((2, 1), "sin")
    m = _metric(g16, k2)
    sol = normalize_kappa2(m)
    k = transform_kappas(kappas(m), sol.phi0, m.h0, g16)
    assert np.max(np.abs(k.kappa2 - sol.kappa_bar2)) < 1e-11


@settings(max_examples=8)
@given(scale=st.floats(0.25, 4.0))
def test_2d_rescaling_shifts_factor(scale):
    g = Grid((12, 12))
    m = _metric(g, 1 + 0.4 * g.mode((1, 0), "cos"))
    base = normalize_kappa2(m, check_nondegeneracy=False)
    other = normalize_kappa2(m, kappa_bar2=scale, check_nondegeneracy=False)
    assert np.max(np.abs(other.phi0 - base.phi0 + 0.5 * np.log(scale))) < 1e-9


def test_2d_degenerate_and_wrong_sign(g16):
    with pytest.raises(DegenerateProblemError):
        normalize_kappa2(_metric(g16, 0.5 * g16.mode((1, 0), "cos")))
    with pytest.raises(ValidationError):
        normalize_kappa2(_metric(g16, -1 + 0.5 * g16.mode((1, 0), "cos")))


def test_constant_kappa_is_immediate(g16):
    sol = normalize_kappa2(model("fuchsian", g16))
    assert sol.residual == 0.0 and np.all(sol.phi0 == 0.0)


def test_3d_continuation_reaches_critical_exponent():
    g = Grid((12, 12, 12))
    k2 = 1 + 0.3 * g.mode((1, 0, 0), "cos")
    m = _metric(g, k2)
    assert invariant_sign(m)[0] == "negative"
    sol = normalize_kappa2(m)
    assert sol.residual < 1e-10
    assert sol.ladder[-1]["p"] == 5.0
    assert all(r["apriori_ok"] and r["max_principle_ok"] for r in sol.ladder)
    assert sol.nondegenerate and sol.lambda_min < 0
    assert np.allclose(sol.u0, np.exp(0.5 * sol.phi0))


def test_3d_positive_invariant_refused():
    g = Grid((8, 8, 8))
    m = _metric(g, -1 + 0.2 * g.mode((0, 1, 0), "sin"))
    assert invariant_sign(m)[0] == "positive"
    with pytest.raises(ValidationError):
        normalize_kappa2(m)
