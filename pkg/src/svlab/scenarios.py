"""Scenario records, builtin surfaces, TOML loading and the runner."""
import csv
import io
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .config import TOL
from .decomposition import check_params, cover_constants, direction_count, scenario_params, severi_decompose
from .errors import ConfigError, InvalidArgument
from .geometry import DirectionNet
from .kakeya import (P_KAKEYA, build_direction_separated, kakeya_norm, linear_wolff_check,
                     refine_transversal, robust_transversality_check, union_volume)
from .poly import Polynomial4, X1, X2, X3, X4
from .variety import enumerate_lines, sample_surface

EXPERIMENTS = ("directions", "enumerate", "decompose", "kakeya")
DEFAULT_DELTAS = (1 / 8, 1 / 16, 1 / 32, 1 / 64)


def _random_cubic(seed=20240601):
    rng = np.random.default_rng(seed)
    P = Polynomial4(degree=3)
    coef = rng.uniform(-1, 1, size=len(P.exps))
    coef[0] = 0.0  # Z(P) passes through the origin
    return Polynomial4._from_arrays(3, coef).normalize()


BUILTINS = {
    "hyperplane": lambda d: X4,
    "ruled-quadric": lambda d: X1 * X2 - X3 * X4,
    "signature-quadric": lambda d: X1 ** 2 + X2 ** 2 - X3 ** 2 - X4 ** 2,
    "paraboloid": lambda d: X4 - (X1 ** 2 + X2 ** 2 + X3 ** 2),
    "perturbed-product": lambda d: X1 * X2 + d ** 100,
    "random-cubic": lambda d: _random_cubic(),
}


@dataclass
class Scenario:
    name: str
    polynomial: object           # callable delta -> Polynomial4
    deltas: tuple = DEFAULT_DELTAS
    params: dict | None = None   # fixed s, u, kappa, c; None means per-delta defaults
    experiments: tuple = ("directions",)
    seed: int = 0
    source: str = "builtin"

    def __post_init__(self):
        self.deltas = tuple(float(d) for d in self.deltas)
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise InvalidArgument("delta values must be strictly decreasing")
        bad = [e for e in self.experiments if e not in EXPERIMENTS]
        if bad:
            raise InvalidArgument(f"unknown experiments {bad}")
        for d in self.deltas:
            p = self.params_for(d)
            check_params(d, p["s"], p["u"], p["kappa"])
            if not (d < p["c"] <= 2):
                raise InvalidArgument("need delta < c <= 2")

    def poly(self, delta):
        P = self.polynomial(delta)
        if P.total_degree > 6:
            raise InvalidArgument("polynomial degree must be at most 6")
        return P

    def params_for(self, delta):
        if self.params is None:
            return scenario_params(delta)
        return dict(self.params)


def builtin(name, **kw):
    if name not in BUILTINS:
        raise InvalidArgument(f"unknown builtin scenario {name!r}; choose from {sorted(BUILTINS)}")
    return Scenario(name, BUILTINS[name], **kw)


# -- TOML -------------------------------------------------------------------------------------

def _key_line(text, key):
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line):
            return i
    return None


def load_scenario(path):
    """Scenario from a TOML file with a [scenario] table and optional [params]."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(str(e), int(m.group(1)) if m else None) from None
    sc = doc.get("scenario")
    if not isinstance(sc, dict):
        raise ConfigError("missing [scenario] table", 1)

    def fail(msg, key):
        raise ConfigError(msg, _key_line(text, key))

    name = sc.get("name", path.stem)
    if "builtin" in sc:
        if sc["builtin"] not in BUILTINS:
            fail(f"unknown builtin {sc['builtin']!r}", "builtin")
        poly = BUILTINS[sc["builtin"]]
    elif "polynomial" in sc:
        try:
            P = Polynomial4.parse(str(sc["polynomial"]))
        except Exception as e:  # noqa: BLE001 - reported with its line
            fail(f"cannot parse polynomial: {e}", "polynomial")
        poly = lambda d, P=P: P  # noqa: E731
    elif "polynomial_file" in sc:
        f = (path.parent / sc["polynomial_file"])
        try:
            P = Polynomial4.from_json(json.loads(f.read_text()))
        except Exception as e:  # noqa: BLE001
            fail(f"cannot read polynomial file {f}: {e}", "polynomial_file")
        poly = lambda d, P=P: P  # noqa: E731
    else:
        raise ConfigError("scenario needs 'builtin', 'polynomial' or 'polynomial_file'", _key_line(text, "name") or 1)
    deltas = sc.get("deltas", list(DEFAULT_DELTAS))
    if not isinstance(deltas, list) or not all(isinstance(x, (int, float)) for x in deltas):
        fail("deltas must be a list of numbers", "deltas")
    exps = sc.get("experiments", ["directions"])
    params = doc.get("params")
    if params is not None:
        missing = [k for k in ("s", "u", "kappa", "c") if k not in params]
        if missing:
            raise ConfigError(f"[params] is missing {missing}", _key_line(text, "[params]") or _find_table(text))
        params = {k: float(params[k]) for k in ("s", "u", "kappa", "c")}
    try:
        return Scenario(str(name), poly, tuple(deltas), params, tuple(exps), int(sc.get("seed", 0)), str(path))
    except InvalidArgument as e:
        key = "deltas" if "delta" in str(e) else "experiments" if "experiment" in str(e) else "s"
        raise ConfigError(str(e), _key_line(text, key)) from None


def _find_table(text, table="params"):
    for i, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{table}]":
            return i
    return None


# -- fits --------------------------------------------------------------------------------------------

@dataclass
class ScalingFit:
    pairs: list
    slope: float
    intercept: float
    r2: float

    def to_json(self):
        return {"pairs": [[float(a), float(b)] for a, b in self.pairs], "slope": self.slope,
                "intercept": self.intercept, "r2": self.r2}


def fit_scaling(pairs):
    """OLS of log(value) on log(1/delta)."""
    pairs = [(float(d), float(v)) for d, v in pairs]
    if len(pairs) < 3:
        raise InvalidArgument("need at least 3 pairs")
    if any(v <= 0 for _, v in pairs) or any(d <= 0 for d, _ in pairs):
        raise InvalidArgument("values and deltas must be positive")
    x = np.log([1 / d for d, _ in pairs])
    y = np.log([v for _, v in pairs])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss == 0 else float(max(0.0, min(1.0, 1 - np.sum((y - A @ [slope, icpt]) ** 2) / ss)))
    return ScalingFit(pairs, float(slope), float(icpt), r2)


def positive_fit(pairs):
    """fit_scaling on the pairs with positive value, or None when fewer than
    three remain (the counts then stay bounded and no exponent is defined)."""
    pos = [(d, v) for d, v in pairs if v > 0]
    return fit_scaling(pos) if len(pos) >= 3 else None


# -- experiments -------------------------------------------------------------------------------------

def directions_experiment(P, delta, c, sample_spacing=1 / 16, anchor_spacing=1 / 8):
    """E_delta of the directions of lines with |l cap N_delta(Z)| >= c."""
    sample = sample_surface(P, delta, spacing=min(sample_spacing, delta * 4))
    ls = enumerate_lines(P, sample, delta, c, anchor_spacing=anchor_spacing, directions_only=True)
    return {"witness_lines": len(ls), "e_delta_dir": direction_count(ls, delta) if len(ls) else 0}


def enumerate_experiment(P, delta, c):
    sample = sample_surface(P, delta)
    ls = enumerate_lines(P, sample, delta, c, anchor_spacing=max(1 / 8, 2 * delta))
    meas = ls.measures() if len(ls) else np.zeros(0)
    return {"sample_points": len(sample), "lines": len(ls),
            "incidences": int(ls.hits.sum()) if len(ls) else 0,
            "min_measure": float(meas.min()) if len(meas) else None,
            "e_delta_dir": direction_count(ls, delta) if len(ls) else 0}


KAKEYA_CAP = 0.15


def kakeya_experiment(delta, seed):
    net = DirectionNet.build(delta, cap=KAKEYA_CAP)
    ts = build_direction_separated(net, "translated", delta, seed=seed)
    norm = kakeya_norm(ts, P_KAKEYA)
    vol = union_volume(ts, use_shading=False)
    wolff, worst = linear_wolff_check(ts, n_prisms=200, seed=seed, return_worst=True)
    refine_transversal(ts, delta)
    lam = ts.lam()
    return {"tubes": len(ts), "norm": norm, "union_volume": vol, "wolff": bool(wolff),
            "wolff_worst_ratio": worst, "transversal": robust_transversality_check(ts, delta),
            "lambda_mean": float(lam.mean()) if len(lam) else 0.0,
            "lambda_max": float(lam.max()) if len(lam) else 0.0}


def _run_delta(sc, delta):
    P = sc.poly(delta)
    prm = sc.params_for(delta)
    out = {"delta": delta, "params": prm}
    if "directions" in sc.experiments:
        out["directions"] = directions_experiment(P, delta, prm["c"])
    if "enumerate" in sc.experiments:
        out["enumerate"] = enumerate_experiment(P, delta, prm["c"])
    if "decompose" in sc.experiments:
        rep = severi_decompose(P, delta, prm["s"], prm["u"], prm["kappa"], prm["c"], seed=sc.seed)
        d = rep.to_json()
        d["cover_sound"] = rep.cover_sound()
        d["cover_constants"] = {str(k): v for k, v in cover_constants(rep).items()}
        d["labels"] = [(z.tolist(), lab.label, lab.ii_norm, lab.component_diameter)
                       for z, lab in rep.site_labels]
        out["decompose"] = d
    if "kakeya" in sc.experiments:
        out["kakeya"] = kakeya_experiment(delta, sc.seed)
    return out


def _round(obj, nd=12):
    """Round floats so reports are stable under summation-order noise."""
    if isinstance(obj, float):
        if math.isinf(obj) or math.isnan(obj):
            return str(obj)
        return float(f"{obj:.{nd}g}")
    if isinstance(obj, dict):
        return {k: _round(v, nd) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, nd) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _round(float(obj), nd)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_scenario(sc, out_dir=None, threads=1):
    """Run every experiment at every delta; write report.json and CSV
    tables when ``out_dir`` is given. Returns the report dict."""
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        results = list(pool.map(lambda d: _run_delta(sc, d), sc.deltas))
    report = {"scenario": sc.name, "source": sc.source, "seed": sc.seed,
              "experiments": list(sc.experiments), "tolerances": TOL.as_dict(),
              "polynomial": {repr(d): sc.poly(d).to_json() for d in sc.deltas},
              "results": results}
    if "directions" in sc.experiments:
        fit = positive_fit([(r["delta"], r["directions"]["e_delta_dir"]) for r in results])
        report["directions_fit"] = None if fit is None else fit.to_json()
    report = _round(report)
    if out_dir is not None:
        write_outputs(report, out_dir)
    return report


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_outputs(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    name = report["scenario"]
    res = report["results"]
    if "directions" in report["experiments"]:
        rows = [(name, r["delta"], r["directions"]["witness_lines"], r["directions"]["e_delta_dir"]) for r in res]
        (out / "directions.csv").write_text(_csv_text(["surface", "delta", "witness_lines", "e_delta_dir"], rows))
    if "decompose" in report["experiments"]:
        rows, lab_rows = [], []
        for r in res:
            d = r["decompose"]
            cc, cv = d["class_counts"], d["cover_counts"]
            q = d["quadric"]
            rows.append((name, r["delta"], d["n_lines"], cc["1"], cc["2"], cc["3"], cc["4"],
                         cv["1"], cv["2"], cv["3"], d["counts"]["E_delta_dir"],
                         "" if q is None else q["residual"]))
            for z, lab, ii, diam in d["labels"]:
                lab_rows.append((r["delta"], *z, lab, ii, diam))
        (out / "decomposition.csv").write_text(_csv_text(
            ["surface", "delta", "lines", "class1", "class2", "class3", "class4",
             "covers1", "covers2", "covers3", "e_delta_dir", "quadric_residual"], rows))
        (out / "labels.csv").write_text(_csv_text(
            ["delta", "z1", "z2", "z3", "z4", "label", "II_inf_norm", "component_diameter"], lab_rows))
    if "kakeya" in report["experiments"]:
        keys = ["tubes", "norm", "union_volume", "wolff", "wolff_worst_ratio", "transversal",
                "lambda_mean", "lambda_max"]
        rows = [(name, r["delta"], *[r["kakeya"][k] for k in keys]) for r in res]
        (out / "kakeya.csv").write_text(_csv_text(["surface", "delta", *keys], rows))
    if "enumerate" in report["experiments"]:
        keys = ["sample_points", "lines", "incidences", "min_measure", "e_delta_dir"]
        rows = [(name, r["delta"], *[r["enumerate"][k] for k in keys]) for r in res]
        (out / "enumerate.csv").write_text(_csv_text(["surface", "delta", *keys], rows))
