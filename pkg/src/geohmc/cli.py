"""Command-line front end: ``python -m geohmc <subcommand> [--config FILE] ...``.

Every subcommand writes CSV whose first lines are ``#`` comments holding the
canonical (sorted-key JSON) configuration.  Sampling commands append
``# {json}`` stats lines after the data.  Exit codes: 0 success, 2 invalid
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import linalg

from . import harmonic, paths, sampler, targets, tuning
from .experiments import table1
from .integrators import aia_select_b, optimize_three_stage
from .schemes import scheme_from_spec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def as_dict(self) -> dict:
        return {"error": "config", "field": self.field, "message": self.message}


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | str | bool | floats | ints | str_or_none | floats_or_none
    default: Any
    check: Callable[[Any], bool] | None = None
    why: str = ""


def _pos(x):
    return x > 0


SCHEMAS: dict[str, dict[str, Field]] = {
    "harmonic": {
        "scheme": Field("str", "velocity_verlet"),
        "h_min": Field("float", 0.01, _pos, "must be > 0"),
        "h_max": Field("float", 3.0, _pos, "must be > 0"),
        "n_h": Field("int", 300, lambda n: n >= 0, "must be >= 0"),
    },
    "table1": {},
    "sample": {
        "target": Field("str", "bivariate", lambda s: s in TARGETS, f"one of {sorted(['standard_normal', 'bivariate', 'gaussian', 'double_well', 'quartic'])}"),
        "dim": Field("int", 1, lambda n: n >= 1, "must be >= 1"),
        "K": Field("floats_or_none", None),
        "scheme": Field("str", "velocity_verlet"),
        "lam": Field("float", 1.35, _pos, "must be > 0"),
        "h": Field("float", 0.15, _pos, "must be > 0"),
        "duration_mode": Field("str", "fixed_steps",
                               lambda s: s in ("fixed_steps", "uniform_h", "geometric_steps"),
                               "one of fixed_steps, uniform_h, geometric_steps"),
        "delta": Field("float", 0.1, lambda x: 0 <= x < 1, "must lie in [0, 1)"),
        "ghmc_phi": Field("float", math.pi / 2, lambda x: 0 < x <= math.pi / 2, "must lie in (0, pi/2]"),
        "xhmc_K": Field("int", 0, lambda n: n >= 0, "must be >= 0"),
        "exact": Field("bool", False),
        "init": Field("floats", [9.0, 9.0]),
        "n_transitions": Field("int", 1000, lambda n: n >= 1, "must be >= 1"),
        "n_chains": Field("int", 1, lambda n: n >= 1, "must be >= 1"),
        "force_budget": Field("int_or_none", None),
        "cache_force": Field("bool", True),
    },
    "phmc": {
        "S": Field("float", 1.0, _pos, "must be > 0"),
        "ds_list": Field("floats", [0.05, 0.02, 0.01]),
        "c_list": Field("floats", [0.0, 0.5, 1.0]),
        "h_grid": Field("floats", [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5]),
        "lam": Field("float", 20.0, _pos, "must be > 0"),
        "n_transitions": Field("int", 2000, lambda n: n >= 1, "must be >= 1"),
        "variance_run": Field("bool", False),
        "variance_h": Field("float", 2.0, _pos, "must be > 0"),
        "variance_ds": Field("float", 0.02, _pos, "must be > 0"),
        "variance_chains": Field("int", 1000, lambda n: n >= 1, "must be >= 1"),
        "variance_transitions": Field("int", 1000, lambda n: n >= 1, "must be >= 1"),
    },
    "optimize": {
        "c": Field("float", 2.0, _pos, "must be > 0"),
        "mode": Field("str", "two_stage", lambda s: s in ("two_stage", "three_stage"),
                      "one of two_stage, three_stage"),
    },
    "tune": {
        "target": Field("str", "standard_normal", lambda s: s in TARGETS, "unknown target"),
        "dim": Field("int", 1, lambda n: n >= 1, "must be >= 1"),
        "K": Field("floats_or_none", None),
        "scheme": Field("str", "velocity_verlet"),
        "lam": Field("float", 2.0, _pos, "must be > 0"),
        "target_acceptance": Field("float", tuning.DEFAULT_TARGET_ACCEPTANCE,
                                   lambda x: 0 < x < 1, "must lie in (0, 1)"),
        "pilot": Field("int", 2000, lambda n: n >= 10, "must be >= 10"),
        "validate": Field("int", 10000, lambda n: n >= 0, "must be >= 0"),
    },
    "scaling": {
        "scheme": Field("str", "velocity_verlet"),
        "ell": Field("float", 2.0, _pos, "must be > 0"),
        "nu": Field("int", 2, lambda n: n in (1, 2, 4), "must be 1, 2 or 4"),
        "m_list": Field("ints", [1, 16, 256]),
        "lam": Field("float", 2.0, _pos, "must be > 0"),
        "n_samples": Field("int", 20000, lambda n: n >= 2, "must be >= 2"),
        "sigma_samples": Field("int", 200000, lambda n: n >= 2, "must be >= 2"),
    },
}

TARGETS = ("standard_normal", "bivariate", "gaussian", "double_well", "quartic")


def _coerce(name: str, f: Field, value):
    try:
        if value is None and f.kind.endswith("_or_none"):
            return None
        kind = f.kind.replace("_or_none", "")
        if kind == "int":
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            v = float(value)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
                return value.lower() in ("true", "1")
            raise ValueError
        if kind in ("floats", "ints"):
            if isinstance(value, str):
                value = json.loads(value) if value.strip().startswith("[") else value.split(",")
            conv = int if kind == "ints" else float
            out = [conv(x) for x in value]
            if kind == "ints" and any(float(x) != int(float(x)) for x in value):
                raise ValueError
            return out
    except (TypeError, ValueError, json.JSONDecodeError):
        pass
    raise ConfigError(name, f"expected {f.kind}, got {value!r}")


def parse_config(command: str, raw: dict) -> dict:
    """Validate ``raw`` against the schema of ``command``; returns a complete config."""
    schema = SCHEMAS[command]
    common = {"seed", "out", "threads"}
    for key in raw:
        if key not in schema and key not in common:
            raise ConfigError(key, f"unknown key for '{command}'")
    cfg = {}
    for name, f in schema.items():
        value = _coerce(name, f, raw[name]) if name in raw else f.default
        if value is not None and f.check is not None and not f.check(value):
            raise ConfigError(name, f.why or "invalid value")
        cfg[name] = value
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        try:
            seed = int(seed)
            if seed < 0:
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigError("seed", f"expected a nonnegative integer, got {seed!r}") from None
    cfg["seed"] = seed
    threads = raw.get("threads", 1)
    try:
        threads = int(threads)
        if threads < 1:
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError("threads", f"expected a positive integer, got {threads!r}") from None
    cfg["threads"] = threads
    cfg["out"] = str(raw.get("out", "-"))
    if command == "harmonic" and cfg["n_h"] > 0 and cfg["h_max"] < cfg["h_min"]:
        raise ConfigError("h_max", "must be >= h_min")
    if "scheme" in cfg:
        try:
            scheme_from_spec(cfg["scheme"])
        except (ValueError, TypeError) as err:
            raise ConfigError("scheme", str(err)) from None
    if command == "sample" and cfg["target"] == "gaussian" and cfg["K"] is None:
        raise ConfigError("K", "required for target 'gaussian' (flattened d*d matrix)")
    return cfg


def canonical(cfg: dict) -> str:
    """Canonical serialised form: JSON with sorted keys, ``out`` and ``threads`` omitted."""
    return json.dumps({k: v for k, v in cfg.items() if k not in ("out", "threads")},
                      sort_keys=True, separators=(",", ":"))


def load_config_file(path: str, command: str) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ConfigError("--config", f"cannot read {path}: {err.strerror}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as err:
        raise ConfigError("--config", f"cannot parse {path}: {err}") from None
    section = data.get(command) if isinstance(data.get(command), dict) else {}
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(section)
    return merged


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else f"{float(x):.10e}"
    return str(x)


class Table:
    def __init__(self, header: list[str]):
        self.header = header
        self.rows: list[list] = []
        self.footer: list[dict] = []

    def add(self, *row):
        self.rows.append([fmt(x) for x in row])

    def render(self, cfg: dict, command: str) -> str:
        buf = io.StringIO()
        buf.write(f"# geohmc {command}\n# config: {canonical(cfg)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        for item in self.footer:
            buf.write("# " + json.dumps(item, sort_keys=True) + "\n")
        return buf.getvalue()


def _make_target(cfg: dict):
    kind = cfg["target"]
    if kind == "standard_normal":
        return targets.standard_normal(cfg["dim"])
    if kind == "bivariate":
        return targets.bivariate_example()
    if kind == "gaussian":
        K = np.asarray(cfg["K"], dtype=float)
        d = int(round(math.sqrt(K.size)))
        if d * d != K.size:
            raise ConfigError("K", "must hold d*d entries")
        try:
            return targets.GaussianTarget(K.reshape(d, d))
        except linalg.LinAlgError as err:
            raise ConfigError("K", str(err)) from None
    return targets.demo_target(kind, cfg["dim"]).system


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_harmonic(cfg: dict) -> Table:
    scheme = scheme_from_spec(cfg["scheme"])
    t = Table(["h", "A_h", "theta", "chi", "rho", "stable"])
    hs = np.linspace(cfg["h_min"], cfg["h_max"], cfg["n_h"]) if cfg["n_h"] else []
    for h in hs:
        m = harmonic.harmonic_step_matrix(scheme, float(h))
        rp = harmonic.rotation_params(m)
        r = harmonic.rho(scheme, float(h)) if rp.stable == harmonic.STABLE else math.nan
        t.add(float(h), m.a, rp.theta, rp.chi, r, rp.stable)
    return t


def cmd_table1(cfg: dict) -> Table:
    t = Table(["step", "h", "error_one_period", "error_ten_periods"])
    for row in table1():
        t.add(f"T/{row.divisor}", row.h, row.one_period, row.ten_periods)
    return t


def cmd_sample(cfg: dict) -> Table:
    target = _make_target(cfg)
    scheme = scheme_from_spec(cfg["scheme"])
    try:
        chain_cfg = sampler.ChainConfig(
            lam=cfg["lam"], h=cfg["h"], duration_mode=cfg["duration_mode"], delta=cfg["delta"],
            ghmc_phi=cfg["ghmc_phi"], xhmc_K=cfg["xhmc_K"], seed=cfg["seed"])
    except ValueError as err:
        raise ConfigError("lam", str(err)) from None
    init = np.asarray(cfg["init"], dtype=float)
    if init.shape != (target.dim,):
        raise ConfigError("init", f"needs {target.dim} entries")
    if cfg["exact"] and not isinstance(target, targets.GaussianTarget):
        raise ConfigError("exact", "exact flows need a Gaussian target")
    rngs = sampler.spawn_rngs(cfg["seed"], cfg["n_chains"])

    def one(i):
        return sampler.run_chain(target, scheme, chain_cfg, init, cfg["n_transitions"], rng=rngs[i],
                                 exact=cfg["exact"], force_budget=cfg["force_budget"],
                                 cache_force=cfg["cache_force"], keep_records=True)

    results = _map(one, range(cfg["n_chains"]), cfg["threads"])
    d = target.dim
    t = Table(["chain", "i"] + [f"q{j}" for j in range(d)] + ["accepted", "accept_prob", "delta_H"])
    total = None
    for c, res in enumerate(results):
        for i, (q, rec) in enumerate(zip(res.samples, res.records)):
            t.add(c, i, *q.tolist(), bool(rec.accepted), float(rec.accept_prob), float(rec.delta_H))
        total = res.stats if total is None else total.merge(res.stats)
        t.footer.append({"chain": c, **res.stats.summary()})
    summary = total.summary()
    summary["chain_mean_accept_prob"] = float(np.mean([r.stats.mean_accept_prob for r in results]))
    t.footer.append({"chain": "all", **summary})
    return t


def cmd_phmc(cfg: dict) -> Table:
    jobs = [(c, ds, h) for c in cfg["c_list"] for ds in cfg["ds_list"] for h in cfg["h_grid"]]
    for c in cfg["c_list"]:
        if not 0 <= c <= 1:
            raise ConfigError("c_list", "entries must lie in [0, 1]")
    rngs = sampler.spawn_rngs(cfg["seed"], len(jobs) + 1)

    def one(k):
        c, ds, h = jobs[k]
        model = paths.ou_model(cfg["S"], paths.d_for_spacing(cfg["S"], ds), c)
        res = paths.run_phmc(model, h, cfg["lam"], cfg["n_transitions"], rngs[k])
        return model, res

    results = _map(one, range(len(jobs)), cfg["threads"])
    t = Table(["c", "ds", "d", "h", "acceptance", "mean_accept_prob", "stable"])
    for (c, ds, h), (model, res) in zip(jobs, results):
        t.add(c, model.ds, model.d, h, res.acceptance, res.mean_accept_prob,
              paths.stability_check(model, h).stable)
    if cfg["variance_run"]:
        model = paths.ou_model(cfg["S"], paths.d_for_spacing(cfg["S"], cfg["variance_ds"]), 1.0)
        rng = rngs[-1]
        init = paths.ou_exact_sample(model, rng, (cfg["variance_chains"],))
        res = paths.run_phmc(model, cfg["variance_h"], cfg["lam"], cfg["variance_transitions"], rng,
                             n_chains=cfg["variance_chains"], init=init, burn_in=5)
        exact = np.diag(paths.ou_exact_covariance(model))
        for j in range(model.d):
            t.footer.append({"node": j + 1, "s": float(model.nodes[j]),
                             "empirical_variance": float(res.variance[j]),
                             "exact_variance": float(exact[j])})
        t.footer.append({"variance_relative_l2": paths.relative_l2(res.variance, exact),
                         "acceptance": res.acceptance, "n_samples": res.n_samples})
    return t


def cmd_optimize(cfg: dict) -> Table:
    c = cfg["c"]
    t = Table(["mode", "c", "a", "b", "sup_rho"])
    if cfg["mode"] == "two_stage":
        try:
            b = aia_select_b(c)
        except ValueError as err:
            raise ConfigError("c", str(err)) from None
        from .schemes import two_stage

        t.add("two_stage", c, 0.5, b, harmonic.sup_rho(two_stage(b), c))
    else:
        fit = optimize_three_stage(c)
        t.add("three_stage", c, fit.a, fit.b, fit.sup_rho)
    return t


def cmd_tune(cfg: dict) -> Table:
    target = _make_target(cfg)
    scheme = scheme_from_spec(cfg["scheme"])
    rng = sampler.make_rng(cfg["seed"])
    res = tuning.tune_h(target, scheme, cfg["lam"], cfg["target_acceptance"], rng=rng,
                        pilot=cfg["pilot"])
    val = math.nan
    if cfg["validate"]:
        run = sampler.run_chain(target, scheme, sampler.ChainConfig(cfg["lam"], res.h),
                                np.zeros(target.dim), cfg["validate"], rng=rng)
        val = run.stats.acceptance_rate
    t = Table(["h", "pilot_acceptance", "ci_low", "ci_high", "converged", "validation_acceptance",
               "diagnostic"])
    t.add(res.h, res.acceptance, res.ci[0], res.ci[1], res.converged, val, res.diagnostic)
    for h, a in res.history:
        t.footer.append({"pilot_h": h, "acceptance": a})
    return t


def cmd_scaling(cfg: dict) -> Table:
    scheme = scheme_from_spec(cfg["scheme"])
    base = targets.standard_normal(1)
    rng = sampler.make_rng(cfg["seed"])
    rows, mom = tuning.scaling_experiment(base, scheme, cfg["ell"], cfg["nu"], cfg["m_list"],
                                          cfg["lam"], cfg["n_samples"], rng,
                                          sigma_samples=cfg["sigma_samples"])
    # control column: the step of the smallest m, held fixed as m grows
    h_fix = rows[0].h
    t = Table(["m", "h", "n_steps", "acceptance", "acceptance_se", "predicted", "deviation",
               "fixed_h_acceptance"])
    for r in rows:
        prod = targets.ProductTarget(base, r.m)
        dH = tuning.stationary_energy_errors(prod, scheme, cfg["lam"], h_fix, cfg["n_samples"], rng)
        ctrl = float(np.mean(np.where(np.isfinite(dH), np.exp(-np.maximum(dH, 0)), 0.0)))
        t.add(r.m, r.h, r.n_steps, r.acceptance, r.acceptance_se, r.predicted, r.deviation, ctrl)
    t.footer.append({"Sigma_hat": mom.Sigma_hat, "Sigma_se": mom.Sigma_se, "h_small": mom.h,
                     "optimal_acceptance": tuning.optimal_acceptance(cfg["nu"])})
    return t


COMMANDS = {
    "harmonic": (cmd_harmonic, "rotation parameters and rho over an h grid"),
    "table1": (cmd_table1, "Verlet errors on the oscillator after one and ten periods"),
    "sample": (cmd_sample, "run HMC-family chains and stream samples"),
    "phmc": (cmd_phmc, "preconditioned HMC on the OU bridge: acceptance vs h, variance table"),
    "optimize": (cmd_optimize, "two-stage AIA parameter or three-stage minimax coefficients"),
    "tune": (cmd_tune, "stochastic bisection for h (default target acceptance 0.651)"),
    "scaling": (cmd_scaling, "acceptance of m-fold products vs the limiting A(ell)"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geohmc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="TOML or JSON config file")
        sp.add_argument("--seed", type=int, help="root seed (default 0)")
        sp.add_argument("--out", help="output CSV path, '-' for stdout")
        sp.add_argument("--threads", type=int, help="worker threads for independent runs")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key")
        if name == "tune":
            sp.epilog = (f"target_acceptance defaults to {tuning.DEFAULT_TARGET_ACCEPTANCE}, "
                         "the optimal limiting acceptance for second-order integrators")
    return ap


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config_file(args.config, args.command) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            raw[key.strip()] = _parse_value(value)
        for key in ("seed", "out", "threads"):
            if getattr(args, key) is not None:
                raw[key] = getattr(args, key)
        cfg = parse_config(args.command, raw)
        fn = COMMANDS[args.command][0]
        with np.errstate(all="ignore"):
            text = fn(cfg).render(cfg, args.command)
    except ConfigError as err:
        print(json.dumps(err.as_dict()), file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        # library precondition failures caused by a combination of config values
        print(json.dumps({"error": "config", "field": "config", "message": str(err)}), file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, linalg.LinAlgError, FloatingPointError) as err:
        print(json.dumps({"error": "numerical", "message": str(err)}), file=sys.stderr)
        return EXIT_NUMERIC
    if cfg["out"] == "-":
        sys.stdout.write(text)
    else:
        Path(cfg["out"]).write_text(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
