"""Acceptance criteria 1-11, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured numbers.
"""

import time
from math import comb

import numpy as np
import pytest

from foliation_forge.ambient import kappas, model, polynomial
from foliation_forge.extrinsic import default_x_eval, leaf_geometry, linearize_n, mean_curvature, transform_kappas
from foliation_forge.foliation import (audit_foliation, collar_crossings, continue_foliation, eigenvalue_speed_check,
                                       improved_approximation, make_gauge, scan_resonances, solve_leaf)
from foliation_forge import grid as fc
from foliation_forge.grid import Grid
from foliation_forge.hj import characteristics_oracle, extend
from foliation_forge.sigma_k import (alternating_identity, sigma_all, sigma_k_foliation,
                                     sigma_k_second_derivative_check, sk_expansion, solve_sigma_k_leaf)
from foliation_forge.yamabe import normalize_kappa2


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _fuchsian_perturbed(g, a2=0.1, a3=0.2):
    return model("fuchsian", g, perturbation={2: a2 * g.conformal(g.mode((1, 0), "cos")),
                                              3: a3 * g.conformal(g.mode((0, 1), "sin"))})


def test_criterion_01_model_exactness(acceptance):
    g = Grid((64, 64))
    t0 = time.time()
    worst_h = worst_k = 0.0
    exact = {"hyperbolic_ball": lambda e: 2 * (4 + e * e) / (4 - e * e),
             "fuchsian": lambda e: 2 * (4 - e * e) / (4 + e * e),
             "horospherical": lambda e: 2.0}
    for name, formula in exact.items():
        m = model(name, g)
        ef = extend(np.zeros(g.shape), m, 1.2)
        for eps in (0.1, 0.5, 1.0):
            H = mean_curvature(m, ef, eps).H
            ref = formula(eps)
            worst_h = max(worst_h, float(np.max(np.abs(H - ref))) / ref)
            lam = leaf_geometry(m, ef, eps).principal_curvatures()
            worst_k = max(worst_k, float(np.max(np.abs(lam - ref / 2))) / ref)
    dt = time.time() - t0
    ok = acceptance(1, worst_h < 1e-8 and worst_k < 1e-8 and dt < 5,
                    f"max rel H error {worst_h:.1e}, principal {worst_k:.1e}, {dt:.1f}s at 64^2")
    assert ok


def test_criterion_02_expansion_order(acceptance):
    g = Grid((32, 32))
    rng = np.random.default_rng(2)
    h2 = np.einsum("ij...,...->ij...", g.identity(), g.random_smooth(rng, kmax=3, amplitude=0.3))
    h2[0, 1] = h2[1, 0] = 0.1 * g.mode((1, 2), "sin")
    m = model("fuchsian", g, perturbation={2: h2})
    k = kappas(m)
    eps = np.geomspace(1e-3, 1e-1, 9)
    ef = extend(np.zeros(g.shape), m, 0.15)
    err = [float(np.max(np.abs(mean_curvature(m, ef, e).H - (2 - k.kappa1 * e - k.kappa2 * e * e)))) for e in eps]
    s = _slope(eps, err)
    ok = acceptance(2, s >= 2.9, f"log-log slope {s:.3f} over [1e-3, 1e-1]")
    assert ok


def test_criterion_03_hj_extension(acceptance):
    g = Grid((32, 32))
    y1, y2 = g.coords
    phi0 = 0.1 * np.sin(2 * np.pi * y1) + 0.05 * np.cos(2 * np.pi * (y1 - y2))
    m = model("hyperbolic_ball", g, x_max=0.5, perturbation={2: 0.1 * g.conformal(g.mode((1, 0), "cos"))})
    ef = extend(phi0, m, 0.05, 64)
    V = np.stack([ef.xs**j for j in range(1, 7)], axis=1)
    coef, *_ = np.linalg.lstsq(V, (ef.phi - phi0).reshape(len(ef.xs), -1), rcond=None)
    d = g.grad(phi0)
    hinv = fc.inverse(m.h0)
    gsq = np.einsum("ij...,i...,j...->...", hinv, d, d)
    fit_err = float(np.max(np.abs(coef[1].reshape(g.shape) + 0.25 * gsq)))
    # the oracle comparison runs on a coarser grid with a smaller factor: at x = 0.5 the
    # extension develops fine structure that a 32^2 factor of this size does not resolve
    gc = Grid((24, 24))
    yc1, yc2 = gc.coords
    phic = 0.05 * np.sin(2 * np.pi * yc1) + 0.025 * np.cos(2 * np.pi * (yc1 - yc2))
    mc = model("fuchsian", gc, perturbation={2: 0.1 * gc.conformal(gc.mode((1, 0), "cos"))})
    oracle = characteristics_oracle(phic, mc, 0.5)
    ext = extend(phic, mc, 0.5, 128)
    orc_err = float(np.max(np.abs(oracle.phi[1] - ext.phi[-1])))
    ok = acceptance(3, fit_err < 1e-6 and orc_err < 1e-6,
                    f"x^2 coefficient error {fit_err:.1e}, oracle sup difference at x=0.5 {orc_err:.1e}")
    assert ok


def test_criterion_04_conformal_covariance(acceptance):
    g = Grid((32, 32))
    rng = np.random.default_rng(7)
    h0 = g.conformal(np.exp(0.2 * g.mode((1, 0), "sin")))
    h1 = np.einsum("ij...,...->ij...", h0, 0.4 * g.mode((0, 1), "cos"))
    h1[0, 1] = h1[1, 0] = 0.1 * g.mode((1, 1), "sin")
    h2 = np.einsum("ij...,...->ij...", h0, 1 + 0.3 * g.mode((1, 1), "cos"))
    m = polynomial(g, h0, h1, h2, x_max=0.2)
    k = kappas(m)
    emax = 0.01
    eps = np.geomspace(emax / 8, emax, 10)
    V = np.stack([eps**j for j in range(1, 7)], axis=1)
    worst = 0.0
    for _ in range(5):
        phi0 = g.random_smooth(rng, kmax=2, amplitude=0.2)
        kt = transform_kappas(k, phi0, h0, g)
        # kappas in the new gauge read off from the leaves {x e^phi = eps}: n - H = k1 eps + k2 eps^2 + ...
        ef = extend(phi0, m, default_x_eval(m, phi0, emax, 1.3), 64)
        vals = np.stack([2 - leaf_geometry(m, ef, e).mean_curvature() for e in eps]).reshape(len(eps), -1)
        c, *_ = np.linalg.lstsq(V, vals, rcond=None)
        worst = max(worst, float(np.max(np.abs(c[0] - kt.kappa1.ravel()))),
                    float(np.max(np.abs(c[1] - kt.kappa2.ravel()))))
    ok = acceptance(4, worst < 1e-5, f"max kappa mismatch over 5 random factors {worst:.1e}")
    assert ok


def test_criterion_05_linearization(acceptance):
    g = Grid((32, 32))
    m = _fuchsian_perturbed(g)
    k2 = kappas(m).kappa2
    op = linearize_n(m, np.zeros(g.shape), 0.0, which="N")
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        psi = g.random_smooth(rng, kmax=3, amplitude=0.5)
        ref = fc.laplace_beltrami(g, psi, m.h0) - 2 * k2 * psi
        got = (op @ psi.ravel()).reshape(g.shape)
        worst = max(worst, float(np.max(np.abs(got - ref)) / np.max(np.abs(ref))))
    ok = acceptance(5, worst < 1e-4, f"max relative error over 20 test functions {worst:.1e}")
    assert ok


def test_criterion_06_yamabe(acceptance):
    g = Grid((32, 32))
    k2 = 1 + 0.3 * g.mode((1, 0), "cos")
    m = model("horospherical", g, perturbation={2: g.conformal(k2 / 2)})
    a = normalize_kappa2(m)
    b = normalize_kappa2(m, init=0.4 * g.mode((1, 1), "sin") - 0.2)
    uniq = float(np.max(np.abs(a.phi0 - b.phi0)))
    # maximum principle at the extrema of phi0: kbar2 e^{2 phi} lies between min and max of kappa2
    top = a.kappa_bar2 * np.exp(2 * a.phi0.max())
    bot = a.kappa_bar2 * np.exp(2 * a.phi0.min())
    bound2 = top <= k2.max() * (1 + 1e-10) and bot >= k2.min() * (1 - 1e-10)
    g3 = Grid((12, 12, 12))
    k3 = 1 + 0.3 * g3.mode((1, 0, 0), "cos")
    m3 = model("horospherical", g3, perturbation={2: g3.conformal(k3 / 3)})
    s3 = normalize_kappa2(m3)
    ps = [r["p"] for r in s3.ladder]
    bound3 = all(r["apriori_ok"] for r in s3.ladder)
    reached = any(p >= 0.999 * 5 for p in ps) and s3.ladder[-1]["residual"] < 1e-8
    ok = acceptance(6, a.residual < 1e-10 and uniq < 1e-8 and bound2 and bound3 and reached and s3.residual < 1e-8,
                    f"n=2 residual {a.residual:.1e}, two-start diff {uniq:.1e}, bounds {bound2 and bound3}; "
                    f"n=3 p_max {max(ps):.4f}, residual {s3.residual:.1e}")
    assert ok


def test_criterion_07_cmc_foliation(acceptance):
    g = Grid((64, 64))
    m = _fuchsian_perturbed(g)
    t0 = time.time()
    fol = continue_foliation(m, np.geomspace(0.02, 0.5, 16))
    rep = audit_foliation(fol, m)
    dt = time.time() - t0
    dev = max(lf.H_deviation for lf in fol.leaves)
    ok = (fol.complete and len(fol.leaves) == 16 and dev < 1e-9 and rep.monotonicity == "decreasing"
          and rep.min_gap > 0 and rep.psi_order is not None and abs(rep.psi_order - 2) <= 0.2 and dt < 120)
    ok = acceptance(7, ok, f"16 leaves, max H deviation {dev:.1e}, {rep.monotonicity}, min gap {rep.min_gap:.2e}, "
                           f"psi order {rep.psi_order:.3f} (plain log-log slope {rep.psi_slope:.2f}), {dt:.0f}s")
    assert ok


def test_criterion_08_positive_regime(acceptance):
    g = Grid((16, 16))
    pert = {3: g.conformal(0.5 * g.mode((1, 0), "cos") + 0.3 * g.mode((0, 1), "sin"))}
    m = model("exponential_collar", g, sign=1, x_max=0.5, perturbation=pert)
    rep = scan_resonances(m, (0.01, 0.3), n_samples=40)
    fol = continue_foliation(m, np.linspace(0.01, 0.3, 8))
    upd = max(lf.update_norm for lf in fol.leaves)
    ok = acceptance(8, not rep.crossings and not rep.gap_intervals and fol.complete and upd < 1e-10,
                    f"{len(rep.crossings)} crossings, {len(fol.leaves)} leaves, max scaled update {upd:.1e}")
    assert ok


def test_criterion_09_resonances(acceptance):
    notes, ok = [], True
    reports = {}
    for n in (16, 32):
        g = Grid((n, n))
        m = model("exponential_collar", g, sign=-1, x_max=0.5)
        reports[n] = scan_resonances(m, (1e-3, 1e-1), n_samples=120)
    rep = reports[32]
    pred = collar_crossings(2, [1, 2, 4, 5, 8])
    got = [c.eps for c in rep.crossings[:5]]
    rel = max(abs(a - b) / b for a, b in zip(got, pred))
    ok &= rel < 1e-2
    notes.append(f"crossing rel error {rel:.1e}")
    slope = rep.counting_slope()
    ok &= abs(slope + 1.0) <= 0.15
    notes.append(f"counting slope {slope:.3f}")
    C = {n: eigenvalue_speed_check(r)["C"] for n, r in reports.items()}
    ok &= abs(C[32] - C[16]) <= 0.05 * C[32]
    notes.append(f"speed C {C[16]:.6f} (16^2) {C[32]:.6f} (32^2)")

    g = Grid((32, 32))
    pert = {3: g.conformal(0.5 * g.mode((1, 0), "cos") + 0.3 * g.mode((0, 1), "sin"))}
    m = model("exponential_collar", g, sign=-1, x_max=0.5, perturbation=pert)
    eps = np.geomspace(0.0025, 0.02, 6)
    slopes = []
    for q in (0, 1, 2):
        res = [float(np.max(np.abs(improved_approximation(m, e, q).residuals[-1]))) for e in eps]
        slopes.append(_slope(eps, res))
    ok &= all(abs(s - (2 + q)) <= 0.2 for q, s in enumerate(slopes))
    notes.append("improved slopes " + ", ".join(f"{s:.2f}" for s in slopes))

    g = Grid((16, 16))
    pert = {3: g.conformal(0.5 * g.mode((1, 0), "cos") + 0.3 * g.mode((0, 1), "sin"))}
    m = model("exponential_collar", g, sign=-1, x_max=0.5, perturbation=pert)
    spec = scan_resonances(m, (0.005, 0.05), n_samples=60, N=3)
    top = sorted(spec.gap_intervals, key=lambda t: -t[0])[:2]
    resonant = [0.5 * (a + b) for a, b in top]
    ladder = sorted(list(np.linspace(0.006, 0.03, 5)) + resonant)
    fol = continue_foliation(m, ladder, spectrum=spec)
    exact_gaps = sorted(fol.skipped) == sorted(resonant) and sorted(map(tuple, fol.gaps)) == sorted(top)
    ok &= exact_gaps and fol.failure is None and len(fol.leaves) == 5
    notes.append(f"gap foliation {len(fol.leaves)} leaves, skipped {len(fol.skipped)} at gaps {exact_gaps}")
    ok = acceptance(9, ok, "; ".join(notes))
    assert ok


def test_criterion_10_sigma_k(acceptance):
    from fractions import Fraction

    notes, ok = [], True
    ident = all(a == b for n in range(2, 9) for ell in range(n + 1) for a, b in [alternating_identity(n, ell)])
    rng = np.random.default_rng(10)
    exact_sig = True
    for n in range(2, 9):
        M = rng.integers(-3, 4, size=(n, n))
        F = np.array([[Fraction(int(v)) for v in r] for r in M], dtype=object)[..., None]
        sig = sigma_all(F)
        lam = np.linalg.eigvals(M.astype(float))
        # sigma_k against the characteristic polynomial coefficients
        poly = np.poly(lam).real
        exact_sig &= all(abs(float(sig[k][0]) - (-1) ** k * poly[k]) < 1e-6 * (1 + abs(poly[k]))
                         for k in range(n + 1))
        exact_sig &= sig[1][0] == int(np.trace(M))
    ok &= ident and exact_sig
    notes.append(f"identities {ident and exact_sig}")
    worst = 0.0
    for n in range(2, 6):
        for k in range(1, n + 1):
            B = rng.standard_normal((n, n))[..., None]
            E = rng.standard_normal((n, n))[..., None]
            worst = max(worst, sigma_k_second_derivative_check(B, E, k)["residual"])
    ok &= worst < 1e-7
    notes.append(f"d2 sigma vs differences {worst:.1e}")

    g = Grid((32, 32))
    fol = sigma_k_foliation(model("fuchsian", g), [0.1, 0.5, 1.0], 2)
    err = max(float(np.max(np.abs(lf.sigma - ((4 - lf.eps**2) / (4 + lf.eps**2)) ** 2))) for lf in fol.leaves)
    phi = max(float(np.max(np.abs(lf.phi0))) for lf in fol.leaves)
    ok &= err < 1e-12 and phi < 1e-14
    notes.append(f"exact Gauss leaves err {err:.1e}")

    m = _fuchsian_perturbed(g)
    gauss = sigma_k_foliation(m, np.geomspace(0.02, 0.4, 8), 2)
    dev = max(float(np.ptp(lf.sigma)) for lf in gauss.leaves)
    rep = audit_foliation(gauss, m, values=[float(np.mean(lf.sigma)) for lf in gauss.leaves], functional="sigma_2")
    ok &= gauss.complete and dev < 1e-8 and rep.monotonicity == "decreasing" and rep.min_gap > 0
    notes.append(f"perturbed Gauss deviation {dev:.1e}, audit {rep.monotonicity}")
    gauge = make_gauge(m)
    cmc = solve_leaf(m, 0.15, gauge.kappa_bar2, gauge.regime, gauge=gauge)
    s1 = solve_sigma_k_leaf(m, 0.15, 1, gauge=gauge)
    diff = float(np.max(np.abs(cmc.phi0 - s1.phi0)))
    ok &= diff < 1e-10
    notes.append(f"k=1 vs CMC {diff:.1e}")
    ok = acceptance(10, ok, "; ".join(notes))
    assert ok


def test_criterion_11_sk_arbitration(acceptance):
    g = Grid((32, 32))
    h1 = np.zeros((2, 2) + g.shape)
    h1[0, 0] = 0.3 * g.mode((1, 0), "cos")
    h1[1, 1] = -h1[0, 0]
    h1[0, 1] = h1[1, 0] = 0.2 * g.mode((0, 1), "sin")
    m = model("fuchsian", g, perturbation={1: h1, 2: 0.1 * g.conformal(g.mode((1, 1), "cos"))})
    k2 = kappas(m).kappa2
    e1 = sk_expansion(m, 1)
    err1 = float(np.max(np.abs(e1.fitted["s2"] + k2)))
    e2 = sk_expansion(m, 2)
    report = (f"k=1 fitted s2 vs -kappa2 {err1:.1e}; k=2 fit vs derived closed form {e2.discrepancy['s2']:.1e}, "
              f"vs quoted closed form {e2.discrepancy['s2_quoted']:.2e} (reported)")
    print(report)
    ok = acceptance(11, err1 < 1e-4, report)
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
