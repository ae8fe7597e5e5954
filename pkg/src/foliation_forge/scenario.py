"""Scenario files: loading, validation, defaults, hashing and model construction.

A scenario is a JSON object. Only ``model`` is required; everything else has a
default that is filled in and echoed back. A minimal file::

    {"model": "fuchsian", "n": 2}

Perturbations are listed per Taylor order and are multiples of h0::

    "perturbations": [
        {"order": 2, "amplitude": 0.1, "wave": [1, 0], "phase": "cos"},
        {"order": 3, "amplitude": 0.05, "random": {"kmax": 2}}
    ]

``"model": "custom"`` reads h0, h1, h2, ... from CSV files written by
``io.write_field_csv`` (paths relative to the scenario file).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ambient import DEFAULT_X_MAX, MODEL_NAMES, MetricExpansion, kappas, model, polynomial
from .errors import ValidationError
from .grid import Grid
from .io import read_field_csv

DEFAULTS = {
    "n": 2,
    "resolution": None,              # [64] * n
    "period": None,                  # [1.0] * n
    "sign": -1,                      # exponential_collar only
    "x_max": None,                   # model default
    "perturbations": [],
    "fields": {},
    "regime": None,                  # inferred from kappa1
    "ladder": {"min": 0.02, "max": 0.5, "count": 16, "spacing": "log"},
    "tolerances": {"residual": 1e-10, "update": 1e-10, "maxiter": 25},
    "steps": 48,
    "seed": 0,
    "out": "out",
    "leaf": {"eps": 0.1},
    "yamabe": {"kappa_bar2": None},
    "resonances": {"eps_min": 1e-3, "eps_max": 0.1, "n_samples": 200, "m_eigs": 20, "N": 3},
    "sigmak": {"k": 2},
}

KNOWN_MODELS = MODEL_NAMES + ("polynomial", "custom")
REGIME_NAMES = ("kappa1_zero", "kappa1_pos", "kappa1_neg")


@dataclass
class Scenario:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def hash(self) -> str:
        return scenario_hash(self.data)

    @property
    def ladder(self) -> np.ndarray:
        lad = self.data["ladder"]
        if lad.get("values"):
            return np.asarray(lad["values"], dtype=float)
        if lad["spacing"] == "log":
            return np.geomspace(lad["min"], lad["max"], lad["count"])
        return np.linspace(lad["min"], lad["max"], lad["count"])

    def grid(self) -> Grid:
        return Grid(tuple(self.data["resolution"]), tuple(self.data["period"]))

    def build(self) -> MetricExpansion:
        return build_metric(self)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2)


def scenario_hash(data: dict) -> str:
    """sha256 of the canonical JSON (sorted keys, no whitespace), minus the output directory."""
    d = {k: v for k, v in data.items() if k != "out"}
    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _merge_defaults(raw: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if isinstance(out.get(key), dict) and isinstance(val, dict) and key not in ("fields",):
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    n = out["n"]
    if out["resolution"] is None:
        out["resolution"] = [64] * n if isinstance(n, int) else None
    if out["period"] is None:
        out["period"] = [1.0] * n if isinstance(n, int) else None
    return out


def _fail(path: str, msg: str):
    raise ValidationError(f"{path}: {msg}", field=path)


def _positive(path: str, v, integer: bool = False):
    if integer:
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            _fail(path, f"expected a positive integer, got {v!r}")
    elif not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
        _fail(path, f"expected a positive number, got {v!r}")


def validate(data: dict) -> dict:
    """Schema checks with field-path messages; returns ``data`` unchanged."""
    m = data.get("model")
    if m not in KNOWN_MODELS:
        _fail("model", f"unknown model {m!r}; choose from {list(KNOWN_MODELS)}")
    n = data["n"]
    if n not in (2, 3):
        _fail("n", f"dimension must be 2 or 3, got {n!r}")
    res = data["resolution"]
    if not isinstance(res, list) or len(res) != n:
        _fail("resolution", f"expected a list of {n} integers, got {res!r}")
    for i, r in enumerate(res):
        if not isinstance(r, int) or r < 8 or r % 2:
            _fail(f"resolution[{i}]", f"expected an even integer >= 8, got {r!r}")
    per = data["period"]
    if not isinstance(per, list) or len(per) != n:
        _fail("period", f"expected a list of {n} numbers, got {per!r}")
    for i, p in enumerate(per):
        _positive(f"period[{i}]", p)
    if data["sign"] not in (-1, 1):
        _fail("sign", f"expected -1 or 1, got {data['sign']!r}")
    if data["x_max"] is not None:
        _positive("x_max", data["x_max"])
    for i, p in enumerate(data["perturbations"]):
        base = f"perturbations[{i}]"
        if not isinstance(p, dict):
            _fail(base, "expected an object")
        if not isinstance(p.get("order"), int) or p["order"] < 1:
            _fail(f"{base}.order", f"expected an integer >= 1, got {p.get('order')!r}")
        if not isinstance(p.get("amplitude", 0.0), (int, float)):
            _fail(f"{base}.amplitude", "expected a number")
        if "random" not in p:
            wave = p.get("wave")
            if not isinstance(wave, list) or len(wave) != n or not all(isinstance(w, int) for w in wave):
                _fail(f"{base}.wave", f"expected {n} integers, got {wave!r}")
            if p.get("phase", "cos") not in ("sin", "cos"):
                _fail(f"{base}.phase", "expected 'sin' or 'cos'")
    if m == "custom":
        if "h0" not in data["fields"]:
            _fail("fields.h0", "custom models need an h0 field file")
        for key in data["fields"]:
            if not (key.startswith("h") and key[1:].isdigit()):
                _fail(f"fields.{key}", "field names are h0, h1, h2, ...")
    if data["regime"] is not None and data["regime"] not in REGIME_NAMES:
        _fail("regime", f"expected one of {list(REGIME_NAMES)}, got {data['regime']!r}")
    lad = data["ladder"]
    if lad.get("values"):
        vals = lad["values"]
        if any(not isinstance(v, (int, float)) or v <= 0 for v in vals):
            _fail("ladder.values", "expected positive numbers")
        if any(b <= a for a, b in zip(vals[:-1], vals[1:])):
            _fail("ladder.values", "must be strictly increasing")
    else:
        _positive("ladder.min", lad["min"])
        _positive("ladder.max", lad["max"])
        _positive("ladder.count", lad["count"], integer=True)
        if lad["max"] <= lad["min"]:
            _fail("ladder.max", f"ladder max {lad['max']} must exceed ladder min {lad['min']}")
        if lad["spacing"] not in ("log", "linear"):
            _fail("ladder.spacing", f"expected 'log' or 'linear', got {lad['spacing']!r}")
    tol = data["tolerances"]
    _positive("tolerances.residual", tol["residual"])
    _positive("tolerances.update", tol["update"])
    _positive("tolerances.maxiter", tol["maxiter"], integer=True)
    _positive("steps", data["steps"], integer=True)
    if data["steps"] < 32:
        _fail("steps", "at least 32 extension steps are needed")
    if not isinstance(data["seed"], int):
        _fail("seed", "expected an integer")
    _positive("leaf.eps", data["leaf"]["eps"])
    r = data["resonances"]
    _positive("resonances.eps_min", r["eps_min"])
    _positive("resonances.eps_max", r["eps_max"])
    _positive("resonances.n_samples", r["n_samples"], integer=True)
    _positive("resonances.m_eigs", r["m_eigs"], integer=True)
    _positive("resonances.N", r["N"], integer=True)
    if r["m_eigs"] > 50:
        _fail("resonances.m_eigs", f"at most 50 eigenvalues are tracked, got {r['m_eigs']}")
    if r["eps_max"] <= r["eps_min"]:
        _fail("resonances.eps_max", "must exceed resonances.eps_min")
    k = data["sigmak"]["k"]
    if not isinstance(k, int) or not 1 <= k <= n:
        _fail("sigmak.k", f"expected an integer in [1, {n}], got {k!r}")
    return data


def _ladder_top(data: dict) -> float:
    lad = data["ladder"]
    return max(lad["values"]) if lad.get("values") else lad["max"]


def check_against_model(sc: Scenario, m: MetricExpansion) -> None:
    """Checks that need the metric: ladder inside the collar, regime vs kappa1 sign."""
    top = _ladder_top(sc.data)
    if top >= m.x_max:
        _fail("ladder.max", f"ladder max {top} must lie below x_max = {m.x_max}")
    leaf_eps = sc.data["leaf"]["eps"]
    if leaf_eps >= m.x_max:
        _fail("leaf.eps", f"leaf eps {leaf_eps} must lie below x_max = {m.x_max}")
    regime = sc.data["regime"]
    if regime is None:
        return
    k1 = kappas(m).kappa1
    ok = {"kappa1_zero": np.max(np.abs(k1)) <= 1e-12, "kappa1_pos": np.all(k1 > 1e-12),
          "kappa1_neg": np.all(k1 < -1e-12)}[regime]
    if not ok:
        _fail("regime", f"regime {regime} does not match kappa1 in [{k1.min():.6g}, {k1.max():.6g}]")


def load_scenario(path, overrides: list[str] | None = None) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"scenario file {path} does not exist", field="scenario")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})", field="scenario") from exc
    return scenario_from_dict(raw, base_dir=path.parent, overrides=overrides)


def scenario_from_dict(raw: dict, base_dir=None, overrides: list[str] | None = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ValidationError("scenario must be a JSON object", field="scenario")
    raw = copy.deepcopy(raw)
    for item in overrides or []:
        apply_override(raw, item)
    if "model" not in raw:
        _fail("model", "required")
    data = validate(_merge_defaults(raw))
    sc = Scenario(data, Path(base_dir) if base_dir is not None else Path.cwd())
    # the top-of-ladder check needs x_max, which is cheap to obtain without building fields
    xm = data["x_max"] if data["x_max"] is not None else DEFAULT_X_MAX.get(data["model"])
    if xm is not None and _ladder_top(data) >= xm:
        _fail("ladder.max", f"ladder max {_ladder_top(data)} must lie below x_max = {xm}")
    return sc


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(sc.to_json() + "\n")


def apply_override(raw: dict, item: str) -> None:
    """key.sub=value with the value parsed as JSON when possible."""
    if "=" not in item:
        raise ValidationError(f"override {item!r} is not of the form key=value", field="override")
    key, val = item.split("=", 1)
    try:
        parsed = json.loads(val)
    except json.JSONDecodeError:
        parsed = val
    parts = key.split(".")
    d = raw
    for p in parts[:-1]:
        if not isinstance(d.get(p), dict):
            d[p] = copy.deepcopy(DEFAULTS.get(p, {})) if d is raw and isinstance(DEFAULTS.get(p), dict) else {}
        d = d[p]
    d[parts[-1]] = parsed


def build_metric(sc: Scenario) -> MetricExpansion:
    data = sc.data
    grid = sc.grid()
    rng = np.random.default_rng(data["seed"])
    pert: dict[int, np.ndarray] = {}
    for p in data["perturbations"]:
        if "random" in p:
            f = grid.random_smooth(rng, int(p["random"].get("kmax", 2)), float(p.get("amplitude", 0.1)))
        else:
            f = float(p.get("amplitude", 0.1)) * grid.mode(tuple(p["wave"]), p.get("phase", "cos"))
        pert[p["order"]] = pert.get(p["order"], 0.0) + grid.conformal(f)
    name = data["model"]
    if name == "custom":
        n = grid.dim
        fields = {int(k[1:]): read_field_csv(sc.base_dir / v, grid, (n, n)) for k, v in data["fields"].items()}
        h0 = fields.pop(0)
        for j, f in pert.items():
            fields[j] = fields.get(j, 0.0) + f
        m = polynomial(grid, h0, higher=fields, x_max=data["x_max"] or DEFAULT_X_MAX["polynomial"])
        m.model = "custom"
    elif name == "polynomial":
        m = polynomial(grid, grid.identity(), higher=pert, x_max=data["x_max"] or DEFAULT_X_MAX["polynomial"])
    else:
        m = model(name, grid, x_max=data["x_max"], perturbation=pert or None, sign=data["sign"])
    check_against_model(sc, m)
    return m
