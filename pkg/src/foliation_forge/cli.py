"""Command line entry point.

    foliation-forge <command> --scenario path [--out dir] [--override key=value ...]

Commands: kappa, yamabe, leaf, foliate, resonances, sigmak, audit, models.
Every run writes ``manifest.json`` listing the emitted files with sha256 sums.

Exit codes: 0 success, 2 validation error, 3 solver failure, 4 resonant
parameters skipped (partial foliation with gaps).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .ambient import kappas, model_table
from .errors import ForgeError, ResonanceError, ValidationError
from .foliation import (Foliation, Gauge, Leaf, audit_foliation, continue_foliation, eigenvalue_speed_check,
                        make_gauge, regime_target, scan_resonances, solve_leaf)
from .io import read_blob, write_blob, write_field_csv
from .scenario import Scenario, load_scenario
from .sigma_k import sigma_k_foliation, sk_expansion
from .yamabe import invariant_sign, normalize_kappa2

log = logging.getLogger("foliation_forge")

COMMANDS = ("kappa", "yamabe", "leaf", "foliate", "resonances", "sigmak", "audit", "models")
EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_RESONANCE = 0, 2, 3, 4


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) if not isinstance(v, str) else v for v in r])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects stage outcomes and emitted files for the manifest."""

    def __init__(self, sc: Scenario, out: Path, command: str):
        self.sc = sc
        self.out = out
        self.command = command
        self.stages = []
        self.files = []
        self.t0 = time.time()
        out.mkdir(parents=True, exist_ok=True)

    def emit(self, *paths):
        for p in paths:
            self.files.append(Path(p))

    def stage(self, name: str, fn):
        t = time.time()
        try:
            result = fn()
        except ForgeError as exc:
            self.stages.append({"name": name, "status": "failed", "seconds": time.time() - t, "error": exc.to_dict()})
            raise
        self.stages.append({"name": name, "status": "ok", "seconds": time.time() - t})
        return result

    def manifest(self, exit_code: int) -> Path:
        files = []
        for p in sorted(set(self.files)):
            files.append({"path": p.name, "sha256": sha256(p), "bytes": p.stat().st_size})
        doc = {
            "command": self.command,
            "scenario_hash": self.sc.hash,
            "scenario": self.sc.data,
            "versions": {"foliation_forge": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "threads": os.environ.get("FOLIATION_FORGE_THREADS"),
            "wall_clock_seconds": time.time() - self.t0,
            "stages": self.stages,
            "files": files,
            "exit_code": exit_code,
        }
        return write_json(self.out / "manifest.json", doc)


# -- commands -----------------------------------------------------------------------------


def cmd_models(run: Run):
    grid = run.sc.grid()
    rows = run.stage("models", lambda: model_table(grid))
    keys = ["model", "n", "x_max", "kappa1", "kappa2"]
    run.emit(write_table(run.out / "models.csv", keys, [[r[k] for k in keys] for r in rows]))
    run.emit(write_json(run.out / "models.json", rows))
    for r in rows:
        print(f"{r['model']:<26} n={r['n']}  x_max={r['x_max']:<5} kappa1={r['kappa1']:+.6g}  kappa2={r['kappa2']:+.6g}")
    return EXIT_OK


def cmd_kappa(run: Run):
    m = run.stage("build", run.sc.build)
    k = run.stage("kappa", lambda: kappas(m))
    sign, value = invariant_sign(m)
    write_field_csv(run.out / "kappa.csv", m.grid, np.stack([k.kappa1, k.kappa2]))
    summary = {"model": m.model, "n": m.n}
    for name, f in (("kappa1", k.kappa1), ("kappa2", k.kappa2)):
        summary[name] = {"min": float(f.min()), "max": float(f.max()), "mean": float(f.mean())}
    summary["invariant_sign"] = sign
    summary["invariant_value"] = value
    run.emit(run.out / "kappa.csv", write_json(run.out / "kappa.json", summary))
    return EXIT_OK


def cmd_yamabe(run: Run):
    m = run.stage("build", run.sc.build)
    sol = run.stage("yamabe", lambda: normalize_kappa2(m, run.sc["yamabe"]["kappa_bar2"],
                                                       tol=run.sc["tolerances"]["residual"]))
    doc = sol.to_dict()
    doc["invariant_sign"] = invariant_sign(m)[0]
    run.emit(*write_blob(run.out / "yamabe_fields", m.grid, {"phi0": sol.phi0}, {"kappa_bar2": sol.kappa_bar2}))
    if sol.ladder:
        keys = list(sol.ladder[0].keys())
        run.emit(write_table(run.out / "yamabe_ladder.csv", keys, [[r[k] for k in keys] for r in sol.ladder]))
        doc["ladder"] = sol.ladder
    if sol.newton_history:
        rows = [[s, i, r] for s, hist in enumerate(sol.newton_history) for i, r in enumerate(hist)]
        run.emit(write_table(run.out / "yamabe_history.csv", ["solve", "iteration", "residual"], rows))
    run.emit(write_json(run.out / "yamabe.json", doc))
    return EXIT_OK


def _gauge(run: Run, m):
    return run.stage("gauge", lambda: make_gauge(m, run.sc["regime"]))


def _spectrum(run: Run, m, lo=None, hi=None):
    r = run.sc["resonances"]
    lo = r["eps_min"] if lo is None else lo
    hi = r["eps_max"] if hi is None else hi
    return run.stage("resonances", lambda: scan_resonances(m, (lo, hi), r["n_samples"], r["m_eigs"], r["N"]))


def cmd_leaf(run: Run):
    m = run.stage("build", run.sc.build)
    gauge = _gauge(run, m)
    eps = run.sc["leaf"]["eps"]
    tol = run.sc["tolerances"]
    spec = None
    if gauge.regime == "kappa1_neg":
        spec = _spectrum(run, m, min(run.sc["resonances"]["eps_min"], eps / 2), max(eps * 1.5, eps + 1e-3))
    leaf = run.stage("leaf", lambda: solve_leaf(m, eps, regime_target(gauge), gauge.regime, gauge=gauge,
                                                tol=tol["residual"], update_tol=tol["update"],
                                                maxiter=tol["maxiter"], steps=run.sc["steps"], spectrum=spec))
    run.emit(*write_blob(run.out / "leaf_fields", m.grid, {"phi0": leaf.phi0, "H": leaf.H, "x_star": leaf.x_star},
                         {"eps": eps}))
    run.emit(write_table(run.out / "leaf_history.csv", ["iteration", "residual"],
                         [[i, r] for i, r in enumerate(leaf.history)]))
    run.emit(write_json(run.out / "leaf.json", {**leaf.row(), "regime": leaf.regime, "target": leaf.target,
                                                "gauge": gauge.to_dict()}))
    return EXIT_OK


def _foliation_outputs(run: Run, m, fol: Foliation, audit, stem: str, extra_cols=()):
    rows = []
    xs = [lf.x_star for lf in fol.leaves]
    for i, lf in enumerate(fol.leaves):
        gap = float(np.min(xs[i + 1] - xs[i])) if i + 1 < len(xs) else None
        row = [lf.eps, lf.mean_H, lf.H_deviation, lf.residual, lf.iterations, lf.update_norm, gap]
        for c in extra_cols:
            row.append(lf.row().get(c))
        rows.append(row)
    header = ["eps", "mean_H", "H_deviation", "residual", "iterations", "update_norm", "min_gap", *extra_cols]
    run.emit(write_table(run.out / f"{stem}.csv", header, rows))
    hist = [[lf.eps, i, r] for lf in fol.leaves for i, r in enumerate(lf.history)]
    run.emit(write_table(run.out / f"{stem}_history.csv", ["eps", "iteration", "residual"], hist))
    arrays = {"phi_bar": fol.gauge.phi_bar}
    for i, lf in enumerate(fol.leaves):
        arrays[f"phi0_{i:03d}"] = lf.phi0
        arrays[f"x_star_{i:03d}"] = lf.x_star
        if lf.sigma is not None:
            arrays[f"sigma_{i:03d}"] = lf.sigma
    meta = {"eps": [lf.eps for lf in fol.leaves], "mean_H": [lf.mean_H for lf in fol.leaves],
            "values": [float(np.mean(lf.sigma)) if lf.sigma is not None else lf.mean_H for lf in fol.leaves],
            "functional": fol.leaves[0].functional if fol.leaves else "H", "gauge": fol.gauge.to_dict()}
    run.emit(*write_blob(run.out / f"{stem}_fields", m.grid, arrays, meta))
    doc = {"model": m.model, "gauge": fol.gauge.to_dict(), "leaves": [lf.row() for lf in fol.leaves],
           "skipped": fol.skipped, "gaps": fol.gaps, "failure": fol.failure,
           "audit": audit.to_dict() if audit is not None else None}
    run.emit(write_json(run.out / f"{stem}.json", doc))


def _audit(run: Run, m, fol: Foliation, values=None, functional="H"):
    if len(fol.leaves) < 3:
        return None
    return run.stage("audit", lambda: audit_foliation(fol, m, values=values, functional=functional))


def _exit_for(fol: Foliation) -> int:
    if fol.failure is not None:
        return EXIT_VALIDATION if fol.failure.get("type") in ("ValidationError", "CollarError") else EXIT_SOLVER
    if fol.skipped:
        return EXIT_RESONANCE
    return EXIT_OK


def cmd_foliate(run: Run):
    m = run.stage("build", run.sc.build)
    gauge = _gauge(run, m)
    ladder = run.sc.ladder
    spec = None
    if gauge.regime == "kappa1_neg":
        spec = _spectrum(run, m, min(ladder[0], run.sc["resonances"]["eps_min"]),
                         max(ladder[-1] * 1.05, run.sc["resonances"]["eps_max"]))
        _spectrum_outputs(run, spec)
    tol = run.sc["tolerances"]
    fol = run.stage("foliate", lambda: continue_foliation(m, ladder, gauge=gauge, spectrum=spec,
                                                          steps=run.sc["steps"], tol=tol["residual"],
                                                          update_tol=tol["update"], maxiter=tol["maxiter"]))
    audit = _audit(run, m, fol)
    _foliation_outputs(run, m, fol, audit, "foliation")
    if fol.failure is not None:
        run.stages.append({"name": "leaf", "status": "failed", "error": fol.failure})
    return _exit_for(fol)


def cmd_sigmak(run: Run):
    m = run.stage("build", run.sc.build)
    k = run.sc["sigmak"]["k"]
    expansion = run.stage("sk_expansion", lambda: sk_expansion(m, k))
    write_json(run.out / "sk_expansion.json", expansion.row())
    run.emit(run.out / "sk_expansion.json")
    gauge = run.stage("gauge", lambda: make_gauge(m, "kappa1_zero"))
    tol = run.sc["tolerances"]
    fol = run.stage("sigmak", lambda: sigma_k_foliation(m, run.sc.ladder, k, gauge=gauge, steps=run.sc["steps"],
                                                        tol=tol["residual"], update_tol=tol["update"],
                                                        maxiter=tol["maxiter"]))
    values = [float(np.mean(lf.sigma)) for lf in fol.leaves]
    audit = _audit(run, m, fol, values=values, functional=f"sigma_{k}")
    _foliation_outputs(run, m, fol, audit, "sigmak", extra_cols=("mean_sigma", "sigma_dev"))
    return _exit_for(fol)


def _spectrum_outputs(run: Run, spec):
    m_eigs = spec.lowest.shape[1]
    rows = [[e, *ev] for e, ev in zip(spec.eps, spec.lowest)]
    run.emit(write_table(run.out / "spectrum.csv", ["eps"] + [f"eig{j + 1}" for j in range(m_eigs)], rows))
    doc = spec.to_dict()
    if spec.speed_samples:
        try:
            doc["speed_check"] = eigenvalue_speed_check(spec)
        except ForgeError as exc:
            doc["speed_check"] = exc.to_dict()
    doc["counts"] = [[float(e), int(c)] for e, c in zip(spec.eps, spec.counts)]
    run.emit(write_json(run.out / "crossings.json", doc))


def cmd_resonances(run: Run):
    m = run.stage("build", run.sc.build)
    spec = _spectrum(run, m)
    _spectrum_outputs(run, spec)
    return EXIT_OK


def cmd_audit(run: Run):
    """Re-run the audit on the fields written by a previous foliate/sigmak run in --out."""
    m = run.stage("build", run.sc.build)
    stem = None
    for cand in ("foliation_fields", "sigmak_fields"):
        if (run.out / f"{cand}.json").exists():
            stem = run.out / cand
            break
    if stem is None:
        raise ValidationError(f"no foliation fields found in {run.out}; run 'foliate' first", field="out")
    grid, arrays, meta = read_blob(stem)
    if grid.resolution != m.grid.resolution:
        raise ValidationError("stored fields were computed on a different grid", field="resolution")
    gauge = Gauge(meta["gauge"]["regime"], arrays["phi_bar"], meta["gauge"]["kappa_bar2"], meta["gauge"]["note"])
    leaves = []
    for i, eps in enumerate(meta["eps"]):
        phi0 = arrays[f"phi0_{i:03d}"]
        H = np.full(grid.shape, meta["mean_H"][i])
        leaves.append(Leaf(eps, phi0, float("nan"), H, arrays[f"x_star_{i:03d}"], float("nan"), 0, float("nan"),
                           gauge.regime, functional=meta["functional"]))
    fol = Foliation(leaves, gauge, m.model)
    audit = run.stage("audit", lambda: audit_foliation(fol, m, values=meta["values"], functional=meta["functional"]))
    run.emit(write_json(run.out / "audit.json", audit.to_dict()))
    print(json.dumps(_jsonable({k: v for k, v in audit.to_dict().items() if k not in ("psi", "jacobi_max")})))
    return EXIT_OK


HANDLERS = {"kappa": cmd_kappa, "yamabe": cmd_yamabe, "leaf": cmd_leaf, "foliate": cmd_foliate,
            "resonances": cmd_resonances, "sigmak": cmd_sigmak, "audit": cmd_audit, "models": cmd_models}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="foliation-forge",
                                description="CMC and sigma_k foliations near conformal infinity")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", default=None, help="output directory (default: scenario 'out')")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario entry, e.g. ladder.count=8 (repeatable)")
    p.add_argument("--k", type=int, default=None, help="sigma_k order (sigmak)")
    p.add_argument("--eps-ladder", default=None, help="comma-separated eps values (foliate, sigmak)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.override)
    if args.k is not None:
        overrides.append(f"sigmak.k={args.k}")
    if args.eps_ladder:
        vals = [float(v) for v in args.eps_ladder.split(",") if v.strip()]
        overrides.append("ladder.values=" + json.dumps(vals))
    try:
        sc = load_scenario(args.scenario, overrides)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out) if args.out else (Path(args.scenario).parent / sc["out"])
    run = Run(sc, out, args.command)
    try:
        code = HANDLERS[args.command](run)
    except ResonanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_RESONANCE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    except ForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = exc.exit_code
    run.manifest(code)
    log.info("wrote %d files to %s", len(run.files), out)
    return code


if __name__ == "__main__":
    sys.exit(main())
