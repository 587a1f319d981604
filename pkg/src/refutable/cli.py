"""Command-line interface.

Every subcommand writes one JSON document. Settings come from built-in
defaults, then an optional INI file (``--config``), then flags; later sources
win. Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 infeasible model.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import json
import math
import os
import sys

import numpy as np

from . import __version__, choice, intersection, miv
from .designs import BetaLATEDesign
from .exceptions import (
    ConvergenceError,
    DataError,
    DomainError,
    GridError,
    InfeasibleError,
    NumericalError,
    RefutableError,
)
from .late import LATEModel, wald_ratio
from .pipeline import RobustResult, parse_prior, run
from .posterior import DPMMConfig, GridSpec, discretize, draw, fit

SCHEMA = "refutable.cli-result/1"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 2, 3, 4, 5
SUBCOMMANDS = ("late", "intersection", "choice", "miv", "simulate")


class ConfigError(RefutableError):
    """Invalid or inconsistent settings."""

    module = "cli"


# settings: name -> (type, default); shared first, then per subcommand
COMMON = {"seed": (int, 0), "out": (str, None)}
SETTINGS = {
    "late": {
        "data": (str, None), "draws": (int, 500), "alpha": (float, 0.05), "prior": (str, "gaussian_decay"),
        "grid_k": (int, 256), "burn_in": (int, 500), "thinning": (int, 5), "truncation_level": (int, 50),
        "concentration": (float, 1.0), "convention": (str, "own_arm"), "plot_dir": (str, None),
        "n_jobs": (int, None),
    },
    "intersection": {"z_grid": (str, None), "mean_lower": (str, None), "mean_upper": (str, None), "m": (str, None)},
    "choice": {
        "J": (int, 2), "P": (str, None), "u": (str, None), "m": (float, None), "box": (str, None),
        "mc_samples": (int, 100_000), "expectation": (str, "mc"),
    },
    "miv": {
        "z_grid": (str, None), "h_lower": (str, None), "h_upper": (str, None), "z0_index": (int, 0),
        "delta_m": (str, None), "metric": (str, "left"),
    },
    "simulate": {"n": (int, 2000), "defier_share": (float, 0.1), "complier_share": (float, 0.45), "pr_z1": (float, 0.5)},
}


def ingest_late_csv(path):
    """Read ``y,d,z`` records from a CSV file.

    Returns
    -------
    list of tuple
        ``(y, d, z)`` with float ``y`` and integer ``d``, ``z``.

    Raises
    ------
    DataError
        ``code`` is ``"unreadable"``, ``"missing_columns"``, ``"non_binary"``
        or ``"malformed"``; ``line`` is the 1-based file line.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}", code="unreadable") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty", line=1, code="missing_columns") from None
        names = [h.strip().lower() for h in header]
        missing = [c for c in ("y", "d", "z") if c not in names]
        if missing:
            raise DataError(f"header lacks column(s) {', '.join(missing)}", line=1, code="missing_columns")
        iy, id_, iz = (names.index(c) for c in ("y", "d", "z"))
        records = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                raise DataError(f"line {line}: expected {len(names)} fields, got {len(row)}", line=line)
            try:
                y = float(row[iy])
            except ValueError:
                raise DataError(f"line {line}: y={row[iy]!r} is not a number", line=line) from None
            if not math.isfinite(y):
                raise DataError(f"line {line}: y must be finite", line=line)
            vals = []
            for name, i in (("d", id_), ("z", iz)):
                cell = row[i].strip()
                if cell not in ("0", "1"):
                    raise DataError(f"line {line}: {name}={cell!r} is not 0 or 1", line=line, code="non_binary")
                vals.append(int(cell))
            records.append((y, vals[0], vals[1]))
    return records


def _floats(text, name):
    if text is None:
        raise ConfigError(f"missing setting {name!r}")
    try:
        return np.array([float(t) for t in str(text).replace(";", ",").split(",") if t.strip()])
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of numbers") from None


def get_parser():
    parser = argparse.ArgumentParser(prog="refutable", description="Robust Bayesian bounds for refutable models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "late": "posterior bounds on the LATE from a y,d,z CSV",
        "intersection": "intersection bounds at deviation m",
        "choice": "divergence interval or mean-utility bounds for the relaxed Logit model",
        "miv": "monotone-instrument bounds at a deviation budget",
        "simulate": "write synthetic y,d,z data with a chosen defier share",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="INI file; keys in [common] and [%s]" % name)
        for key, (typ, _default) in {**COMMON, **SETTINGS[name]}.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=typ, default=None)
    return parser


def resolve_settings(args):
    """Merge defaults, config file and flags (flags win)."""
    name = args.subcommand
    spec = {**COMMON, **SETTINGS[name]}
    out = {k: d for k, (_t, d) in spec.items()}
    if args.config:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            with open(args.config, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        for section in ("common", name):
            if not cp.has_section(section):
                continue
            for key, raw in cp.items(section):
                k = key.replace("-", "_")
                if k not in spec:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                try:
                    out[k] = spec[k][0](raw)
                except ValueError:
                    raise ConfigError(f"bad value {raw!r} for {key!r}") from None
    for k in spec:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _run_late(s):
    if not s["data"]:
        raise ConfigError("late needs --data")
    if s["draws"] < 1:
        raise ConfigError("draws must be at least 1")
    if not 0 < s["alpha"] < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if s["grid_k"] < 16:
        raise ConfigError("grid-k must be at least 16")
    records = np.asarray(ingest_late_csv(s["data"]), dtype=float).reshape(-1, 3)
    try:
        prior = parse_prior(s["prior"])
        model = LATEModel(s["convention"])
        cfg = DPMMConfig(burn_in=s["burn_in"], thinning=s["thinning"], truncation_level=s["truncation_level"],
                         concentration=s["concentration"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    state = fit(records, cfg, seed=s["seed"])
    draws = draw(state, s["draws"])
    grid = GridSpec.covering(draws, K=s["grid_k"])
    res = run(draws, prior, model, s["alpha"], grid, seed=s["seed"], n_jobs=s["n_jobs"])
    res.diagnostics["posterior"] = state.diagnostics
    res.diagnostics["rows"] = int(records.shape[0])
    res.diagnostics["grid"] = {"lower": grid.lower, "upper": grid.upper, "K": grid.K}
    waldd = [wald_ratio(discretize(d, grid)) for d in draws[: min(len(draws), 200)]]
    res.diagnostics["wald_ratio_posterior_mean"] = float(np.mean(waldd))
    if s["plot_dir"]:
        write_plot_files(res, s["plot_dir"])
    return res.to_dict()


def write_plot_files(result, directory):
    """Two-column ``index value`` text files, one per trace."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for key in ("m", "lower", "upper"):
        path = os.path.join(directory, f"trace_{key}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            for i, v in zip(result.traces["draw"], result.traces[key]):
                fh.write(f"{int(i)} {float(v):.17g}\n")
        paths.append(path)
    return paths


def _run_intersection(s):
    z = _floats(s["z_grid"], "z_grid")
    data = intersection.IntersectionData(z, _floats(s["mean_upper"], "mean_upper"), _floats(s["mean_lower"], "mean_lower"))
    m_min = intersection.min_deviation(data)
    ms = _floats(s["m"], "m") if s["m"] is not None else np.array([m_min])
    out = {"min_deviation": m_min, "bounds": []}
    for m in ms:
        bp = intersection.bounds(data, float(m))
        out["bounds"].append({"m": float(m), "lower": bp.lower, "upper": bp.upper})
    return out


def _run_choice(s):
    P = _floats(s["P"], "P")
    try:
        spec = choice.ChoiceModelSpec(s["J"], P, mc_samples=s["mc_samples"], seed=s["seed"], expectation=s["expectation"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    out = {}
    if s["u"] is not None:
        di = choice.divergence_interval(_floats(s["u"], "u"), spec)
        out["divergence_interval"] = {
            "delta_lower": di.delta_lower, "delta_upper": di.delta_upper,
            "lower_attained": di.lower_attained, "upper_attained": di.upper_attained,
        }
    if s["m"] is not None:
        box = _floats(s["box"], "box").reshape(-1, 2) if s["box"] else np.tile([-5.0, 5.0], (spec.J, 1))
        bp = choice.utility_bounds(s["m"], spec, box)
        out["utility_bounds"] = {"m": s["m"], "lower": bp.lower, "upper": bp.upper}
    if not out:
        raise ConfigError("choice needs --u and/or --m")
    return out


def _run_miv(s):
    data = miv.MIVData(_floats(s["z_grid"], "z_grid"), _floats(s["h_upper"], "h_upper"),
                       _floats(s["h_lower"], "h_lower"), s["z0_index"])
    if s["metric"] not in miv.METRICS:
        raise ConfigError(f"metric must be one of {miv.METRICS}")
    out = {"min_deviation_left": miv.min_deviation(data, "left"), "min_deviation_right": miv.min_deviation(data, "right"),
           "bounds": []}
    for dm in _floats(s["delta_m"], "delta_m"):
        bp = miv.theta_bounds(data, float(dm), s["metric"])
        out["bounds"].append({"delta_m": float(dm), "lower": bp.lower, "upper": bp.upper})
    return out


def _run_simulate(s):
    if not s["out"]:
        raise ConfigError("simulate needs --out")
    try:
        design = BetaLATEDesign.with_defiers(s["defier_share"], s["complier_share"], pr_z1=s["pr_z1"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    X = design.sample(s["n"], np.random.default_rng(s["seed"]))
    with open(s["out"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "d", "z"])
        for y, d, z in X:
            w.writerow([f"{y:.17g}", int(d), int(z)])
    obs = design.observables()
    return {"rows": int(X.shape[0]), "path": s["out"], "true_late": design.late,
            "population_wald_ratio": wald_ratio(obs), "type_probs": list(design.type_probs)}


RUNNERS = {"late": _run_late, "intersection": _run_intersection, "choice": _run_choice, "miv": _run_miv,
           "simulate": _run_simulate}


def exit_code_for(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, (NumericalError, ConvergenceError, GridError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (InfeasibleError, DomainError)):
        return EXIT_INFEASIBLE
    return EXIT_NUMERICAL


def _provenance(exc):
    mod = type(exc).__module__.rsplit(".", 1)[-1]
    tb = exc.__traceback__
    while tb is not None and tb.tb_next is not None:
        tb = tb.tb_next
    if tb is not None:
        frame_mod = tb.tb_frame.f_globals.get("__name__", "")
        if frame_mod.startswith("refutable."):
            mod = frame_mod.rsplit(".", 1)[-1]
    return mod


def _finite(obj):
    # JSON has no inf/nan; spell them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _emit(doc, path):
    text = json.dumps(_finite(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(args=None):
    """Entry point; returns the process exit code."""
    parser = get_parser()
    ns = parser.parse_args(args)
    doc = {"schema": SCHEMA, "version": __version__, "subcommand": ns.subcommand,
           "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    settings = None
    try:
        settings = resolve_settings(ns)
        doc["config"] = settings
        # simulate writes its CSV to --out; its report goes to stdout
        out_path = None if ns.subcommand == "simulate" else settings["out"]
        doc["result"] = RUNNERS[ns.subcommand](settings)
        code = EXIT_OK
    except RefutableError as exc:
        code = exit_code_for(exc)
        err = {"type": type(exc).__name__, "message": str(exc), "module": _provenance(exc), "exit_code": code}
        if isinstance(exc, DataError):
            err["code"], err["line"] = exc.code, exc.line
        doc["error"] = err
        out_path = None if settings is None or ns.subcommand == "simulate" else settings.get("out")
    _emit(doc, out_path)
    return code


def load_result(path):
    """Read a ``late`` result document back into a :class:`RobustResult`."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return RobustResult.from_dict(doc["result"])


if __name__ == "__main__":
    sys.exit(main())
