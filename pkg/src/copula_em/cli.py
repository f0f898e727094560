"""Command-line interface: ``copula-em {fit,sample,impute,study}``.

Options can also come from a flat JSON object passed with ``--config``;
explicit flags take precedence over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import model_io
from .copula import impute
from .data import IncompleteDataset, read_csv, write_csv
from .ecm import EcmConfig, run_ecm
from .errors import ConfigurationError, CopulaEMError
from .simstudy import (N_KS, N_PRIME, StudySetting, default_settings, run_studies,
                       sample_model, summary_json, write_rows)

# option name -> (type, default); shared by flags and the config file
OPTIONS = {
    "input": (str, None),
    "output": (str, None),
    "model": (str, None),
    "trace": (str, None),
    "summary": (str, None),
    "seed": (int, 0),
    "workers": (int, None),
    "g": (int, 15),
    "m_small": (int, 20),
    "m_large": (int, 1000),
    "n_small": (int, 20),
    "eps": (float, 1e-5),
    "n_max": (int, 25),
    "k": (int, 1000),
    "m": (int, 10),
    "n_prime": (int, N_PRIME),
    "rho": (float, None),
    "beta0": (float, None),
    "beta1": (float, None),
    "p_mcar": (float, 0.1),
    "n_rows": (int, 200),
    "reps": (int, 100),
    "n_ks": (int, N_KS),
    "all": (bool, False),
}

COMMAND_OPTIONS = {
    "fit": ("input", "output", "trace", "seed", "g", "m_small", "m_large", "n_small", "eps", "n_max"),
    "sample": ("model", "input", "output", "seed", "k", "n_prime"),
    "impute": ("model", "input", "output", "seed", "m"),
    "study": ("output", "summary", "seed", "workers", "g", "m_small", "m_large", "n_small", "eps",
              "n_max", "rho", "beta0", "beta1", "p_mcar", "n_rows", "reps", "n_ks", "n_prime", "all"),
}

HELP = {
    "input": "input CSV (header row, empty field = missing); for sample, may name the model file",
    "output": "output path (stdout for CSV output when omitted)",
    "model": "model JSON written by fit",
    "trace": "trace CSV path (default: <output>.trace.csv)",
    "summary": "summary JSON path (default: <output>.summary.json)",
    "seed": "master random seed",
    "workers": "worker processes for study repetitions (default: all cores)",
    "g": "mixture components per marginal",
    "m_small": "Monte Carlo completions per row in the early phase",
    "m_large": "Monte Carlo completions per row in the late phase",
    "n_small": "iterations run with m_small",
    "eps": "convergence threshold on the L1 change of sigma",
    "n_max": "maximum number of iterations",
    "k": "number of joint draws",
    "m": "conditional draws per row",
    "n_prime": "mixture draws behind each percentile function",
    "rho": "true normal-scale correlation",
    "beta0": "intercept of the logistic removal of column 2",
    "beta1": "slope of the logistic removal of column 2",
    "p_mcar": "per-cell completely-at-random removal probability",
    "n_rows": "rows per simulated data set",
    "reps": "repetitions per setting",
    "n_ks": "draws per law for the KS statistic",
    "all": "run the four standard settings",
}


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copula-em",
                                     description="Gaussian copula estimation for incomplete data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, names in COMMAND_OPTIONS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="flat JSON file of option values; flags override it")
        for name in names:
            flag = "--" + name.replace("_", "-")
            typ, _ = OPTIONS[name]
            if typ is bool:
                p.add_argument(flag, dest=name, action="store_true", default=None, help=HELP[name])
            else:
                p.add_argument(flag, dest=name, type=typ, default=None, help=HELP[name])
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags (in that order)."""
    names = COMMAND_OPTIONS[args.command]
    opts = {n: OPTIONS[n][1] for n in names}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise CliError("config file must hold a JSON object")
        for key, val in cfg.items():
            name = key.replace("-", "_")
            if name not in opts:
                raise CliError(f"unknown option {key!r} for {args.command}")
            typ = OPTIONS[name][0]
            try:
                opts[name] = typ(val) if val is not None else None
            except (TypeError, ValueError):
                raise CliError(f"config option {key!r}: cannot convert {val!r}") from None
    for name in names:
        val = getattr(args, name)
        if val is not None:
            opts[name] = val
    return opts


def _ecm_config(o: dict) -> EcmConfig:
    return EcmConfig(g=o["g"], n_max=o["n_max"], eps_converged=o["eps"], m_small=o["m_small"],
                     m_large=o["m_large"], n_small=o["n_small"], master_seed=o["seed"])


def _require(o: dict, *names):
    for n in names:
        if not o.get(n):
            raise CliError(f"--{n.replace('_', '-')} is required")


def _derived(path: str, suffix: str) -> str:
    root, _ = os.path.splitext(path)
    return root + suffix


def _write_text(path, text):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_fit(o: dict) -> None:
    _require(o, "input", "output")
    data = read_csv(o["input"])
    cfg = _ecm_config(o)
    model, trace = run_ecm(data, cfg)
    fit = {"iterations": len(trace), "final_eps": trace.final_eps,
           "final_eps_sigma": trace.iterations[-1]["eps_sigma"] if len(trace) else float("nan"),
           "converged": trace.converged, "seed": cfg.master_seed, "n_rows": data.n,
           "n_max": cfg.n_max}
    model_io.save(o["output"], model, data.columns, fit)
    trace.to_csv(o["trace"] or _derived(o["output"], ".trace.csv"))
    print(f"fitted {data.p} columns on {data.n} rows in {len(trace)} iterations "
          f"(converged: {trace.converged})", file=sys.stderr)


def cmd_sample(o: dict) -> None:
    path = o["model"] or o["input"]
    if not path:
        raise CliError("--model is required")
    if o["k"] < 0:
        raise ConfigurationError("k must be nonnegative")
    model, columns, _ = model_io.load(path)
    rng = np.random.default_rng(o["seed"])
    draws = sample_model(model, o["k"], rng, o["n_prime"])
    _write_text(o["output"], write_csv(IncompleteDataset(draws.reshape(-1, model.p), columns)))


def cmd_impute(o: dict) -> None:
    _require(o, "model", "input")
    model, _, _ = model_io.load(o["model"])
    data = read_csv(o["input"])
    if data.p != model.p:
        raise ConfigurationError(f"data has {data.p} columns, model has {model.p}")
    m = o["m"]
    if m < 1:
        raise ConfigurationError("m must be at least 1")
    filled = impute(model, data.values, m, o["seed"])
    rows = np.repeat(np.arange(data.n), m)
    draws = np.tile(np.arange(m), data.n)
    out = IncompleteDataset(filled.reshape(-1, data.p), data.columns)
    _write_text(o["output"], write_csv(out, extra=[("row", rows), ("draw", draws)]))


def cmd_study(o: dict) -> None:
    _require(o, "output")
    common = dict(p_mcar=o["p_mcar"], n_rows=o["n_rows"], reps=o["reps"], seed=o["seed"],
                  n_ks=o["n_ks"], n_prime=o["n_prime"], scope_eps=o["eps"],
                  ecm=EcmConfig(g=o["g"], n_max=o["n_max"], eps_converged=o["eps"],
                                m_small=o["m_small"], m_large=o["m_large"], n_small=o["n_small"]))
    if o["all"]:
        settings = default_settings(**common)
    else:
        missing = [n for n in ("rho", "beta0", "beta1") if o[n] is None]
        if missing:
            raise CliError("study needs --all or all of --rho, --beta0, --beta1")
        settings = [StudySetting(rho=o["rho"], beta0=o["beta0"], beta1=o["beta1"], **common)]
    workers = o["workers"] or os.cpu_count() or 1
    results = run_studies(settings, workers)
    with open(o["output"], "w", newline="") as fh:
        write_rows(results, fh)
    _write_text(o["summary"] or _derived(o["output"], ".summary.json"), summary_json(results))
    for r in results:
        print(f"{r.setting.label}: {len(r.rows)} completed, {len(r.failures)} failed",
              file=sys.stderr)


COMMANDS = {"fit": cmd_fit, "sample": cmd_sample, "impute": cmd_impute, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        COMMANDS[args.command](resolve(args))
    except (CliError, CopulaEMError, OSError) as exc:
        print(f"copula-em {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
