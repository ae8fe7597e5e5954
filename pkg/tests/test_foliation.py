import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foliation_forge.ambient import model, polynomial
from foliation_forge.errors import (BlowUpError, DegenerateProblemError, FoliationOverlapError, ResonanceError,
                                    ValidationError)
from foliation_forge.foliation import (Foliation, PencilSpectrum, audit_foliation, classify_regime,
                                       collar_crossings, continue_foliation, eigenvalue_speed_check,
                                       improved_approximation, make_gauge, psi_orders, scaled_norm, scan_resonances,
                                       solve_leaf)
from foliation_forge.grid import Grid

# crossings of the flat 2-torus collar e^{-x} h0 (32^2), frozen from the exact scalar equation
COLLAR_CROSSINGS = [0.024712004595244, 0.012507722370972, 0.006292849166978, 0.005040587517449, 0.003156308963966]
COLLAR_MULTIPLICITY = [4, 4, 4, 8, 4]


@pytest.fixture(scope="module")
def fuchsian_perturbed():
    g = Grid((16, 16))
    return model("fuchsian", g, perturbation={2: 0.1 * g.conformal(g.mode((1, 0), "cos")),
                                              3: 0.2 * g.conformal(g.mode((0, 1), "sin"))})


@pytest.fixture(scope="module")
def collar_report():
    g = Grid((32, 32))
    m = model("exponential_collar", g, sign=-1, x_max=0.5)
    return m, scan_resonances(m, (1e-3, 1e-1), n_samples=120, m_eigs=20)


@settings(max_examples=15)
@given(eps=st.floats(1e-3, 0.5), a=st.floats(-1, 1))
def test_scaled_norm_monotone(eps, a):
    g = Grid((8, 8))
    f = a * g.mode((1, 2), "sin") + 0.3
    n0, n1, n2 = (scaled_norm(g, eps, f, k) for k in (0, 1, 2))
    assert n0 <= n1 <= n2
    assert scaled_norm(g, eps, f) <= scaled_norm(g, 2 * eps, f) + 1e-15
    assert np.isclose(n0, np.max(np.abs(f)))


def test_regimes(g16):
    assert classify_regime(model("fuchsian", g16)) == "kappa1_zero"
    assert classify_regime(model("exponential_collar", g16, sign=1, x_max=0.5)) == "kappa1_pos"
    assert classify_regime(model("exponential_collar", g16, sign=-1, x_max=0.5)) == "kappa1_neg"
    mixed = polynomial(g16, g16.identity(), h1=0.5 * g16.conformal(g16.mode((1, 0), "sin")), x_max=0.3)
    with pytest.raises(DegenerateProblemError):
        classify_regime(mixed)


def test_horospherical_perturbed_is_degenerate(g16):
    m = model("horospherical", g16, perturbation={3: 0.2 * g16.conformal(g16.mode((1, 0), "cos"))})
    with pytest.raises(DegenerateProblemError):
        make_gauge(m)
    # the exact model is allowed through: its slices are leaves
    assert make_gauge(model("horospherical", g16)).kappa_bar2 == 0.0


@pytest.mark.parametrize("name", ["fuchsian", "hyperbolic_ball", "horospherical"])
def test_exact_models_need_no_iterations(g16, name):
    m = model(name, g16)
    fol = continue_foliation(m, [0.05, 0.1, 0.2])
    assert fol.complete
    for lf in fol.leaves:
        assert lf.iterations == 0
        assert np.max(np.abs(lf.phi0)) < 1e-14
        assert lf.H_deviation < 1e-14


def test_exact_model_audit_verdicts(g16):
    f = model("fuchsian", g16)
    rep = audit_foliation(continue_foliation(f, [0.05, 0.1, 0.2, 0.3]), f)
    assert rep.monotonicity == "decreasing" and rep.unique is True
    b = model("hyperbolic_ball", g16)
    rep = audit_foliation(continue_foliation(b, [0.05, 0.1, 0.2, 0.3]), b)
    assert rep.monotonicity == "increasing" and rep.unique is False


def test_leaf_newton_is_quadratic(fuchsian_perturbed):
    m = fuchsian_perturbed
    gauge = make_gauge(m)
    leaf = solve_leaf(m, 0.1, gauge.kappa_bar2, gauge.regime, gauge=gauge)
    h = leaf.history
    assert leaf.residual < 1e-10 and leaf.update_norm < 1e-10
    assert h[1] <= h[0] ** 2 and h[2] <= h[1] ** 2
    assert leaf.H_deviation < 1e-12


def test_leaf_is_independent_of_path(fuchsian_perturbed):
    m = fuchsian_perturbed
    gauge = make_gauge(m)
    direct = solve_leaf(m, 0.1, gauge.kappa_bar2, gauge.regime, gauge=gauge)
    warm = solve_leaf(m, 0.05, gauge.kappa_bar2, gauge.regime, gauge=gauge)
    chained = solve_leaf(m, 0.1, gauge.kappa_bar2, gauge.regime, gauge=gauge, init=warm.phi0)
    assert np.max(np.abs(direct.phi0 - chained.phi0)) < 1e-9


def test_perturbed_foliation_and_audit(fuchsian_perturbed):
    m = fuchsian_perturbed
    fol = continue_foliation(m, [0.05, 0.1, 0.2, 0.3])
    assert fol.complete and len(fol.leaves) == 4
    assert max(lf.H_deviation for lf in fol.leaves) < 1e-12
    rep = audit_foliation(fol, m)
    assert rep.monotonicity == "decreasing" and rep.min_gap > 0
    assert rep.jacobi_branch == "maximum_principle"
    assert rep.psi[0] < rep.psi[-1]


def test_audit_rejects_overlap_and_short_ladders(g16):
    m = model("fuchsian", g16)
    fol = continue_foliation(m, [0.05, 0.1, 0.2])
    fol.leaves[2].x_star = fol.leaves[1].x_star.copy()
    with pytest.raises(FoliationOverlapError):
        audit_foliation(fol, m)
    with pytest.raises(ValidationError):
        audit_foliation(Foliation(fol.leaves[:2], fol.gauge, m.model), m)


def test_positive_regime_leaf():
    g = Grid((16, 16))
    pert = {3: g.conformal(0.5 * g.mode((1, 0), "cos") + 0.3 * g.mode((0, 1), "sin"))}
    m = model("exponential_collar", g, sign=1, x_max=0.5, perturbation=pert)
    gauge = make_gauge(m)
    leaf = solve_leaf(m, 0.2, 1.0, gauge.regime, gauge=gauge)
    assert leaf.residual < 1e-10 and leaf.update_norm < 1e-10


def test_collar_crossings_frozen(collar_report):
    m, rep = collar_report
    got = [c.eps for c in rep.crossings][:5]
    assert np.allclose(got, COLLAR_CROSSINGS, rtol=0, atol=1e-12)
    assert [c.multiplicity for c in rep.crossings][:5] == COLLAR_MULTIPLICITY
    exact = collar_crossings(2, [1, 2, 4, 5, 8])
    assert np.allclose(got, exact, rtol=0, atol=1e-12)


def test_collar_crossings_dense_recheck(collar_report):
    m, rep = collar_report
    small = model("exponential_collar", Grid((16, 16)), sign=-1, x_max=0.5)
    spec = PencilSpectrum(small)
    for c in rep.crossings[:3]:
        vals = np.linalg.eigvalsh(spec._dense(small.eval_h(c.eps), spec.q(c.eps), c.eps))
        assert np.min(np.abs(vals)) < 1e-8


def test_counting_and_speed(collar_report):
    _, rep = collar_report
    assert -1.2 < rep.counting_slope() < -0.8
    chk = eigenvalue_speed_check(rep)
    assert abs(chk["C"] - 1.0) < 1e-3 and chk["violations"] == 0


def test_resonant_eps_is_refused(collar_report):
    m, rep = collar_report
    c = rep.crossings[0].eps
    assert not rep.in_J(c)
    gauge = make_gauge(m)
    with pytest.raises(ResonanceError) as info:
        solve_leaf(m, c, -1.0, "kappa1_neg", gauge=gauge, spectrum=rep)
    assert info.value.payload["nearest_crossing"] == c
    fol = continue_foliation(m, [0.5 * c, c], gauge=gauge, spectrum=rep)
    assert fol.skipped == [c] and len(fol.leaves) == 1


def test_improved_approximation_and_blowup(g16):
    pert = {3: g16.conformal(0.5 * g16.mode((1, 0), "cos") + 0.3 * g16.mode((0, 1), "sin"))}
    m = model("exponential_collar", g16, sign=-1, x_max=0.5, perturbation=pert)
    out = improved_approximation(m, 0.02, 3)
    norms = [np.max(np.abs(r)) for r in out.residuals]
    assert all(b < a for a, b in zip(norms, norms[1:]))
    with pytest.raises(BlowUpError):
        improved_approximation(m, 0.2, 6)
    rough = {3: g16.conformal(0.5 * g16.random_smooth(np.random.default_rng(0), kmax=6))}
    with pytest.raises(BlowUpError):
        improved_approximation(model("exponential_collar", g16, sign=-1, x_max=0.5, perturbation=rough), 0.02, 3)
    with pytest.raises(ValidationError):
        improved_approximation(model("fuchsian", g16), 0.02, 2)


def test_psi_orders_recovers_exponent():
    eps = np.geomspace(0.01, 0.5, 12)
    slope, order = psi_orders(eps, 0.3 * eps**2 * (1 + 2 * eps))
    assert abs(order - 2.0) < 1e-6 and slope > 2.0
