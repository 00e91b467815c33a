"""Command-line surface: fit, simulate, benchmark and entropy-path runs.

Configuration files are YAML (JSON works too) validated against a published
schema before any computation; unknown keys are rejected.  All file writes
are atomic (write to a temporary name, then rename) and floats in CSV
output carry 17 significant digits so results round-trip exactly.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

import jsonschema
import numpy as np
import pandas as pd
import yaml

from . import benchmarks, em, metrics, mixture, optim, simulate
from .families import get_family
from .predictors import ModelSpec, PredictorSpec, SmoothSpec
from .splines import BasisConfig

OUTPUT_DIR_ENV = "DISTMIX_OUTDIR"

_PREDICTOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "intercept": {"type": "boolean"},
        "linear": {"type": "array", "items": {"type": "string"}},
        "smooth": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "var": {"type": "string"},
                    "vars": {
                        "type": "array",
                        "items": {"type": "string"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "df": {"type": "number", "exclusiveMinimum": 0},
                    "num_basis": {"type": "integer", "minimum": 3},
                    "degree": {"type": "integer", "minimum": 1},
                    "penalty_order": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "data"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["families", "parameters"],
            "properties": {
                "families": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "enum": ["normal", "laplace", "logistic", "poisson"]
                    },
                },
                "parameters": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": _PREDICTOR_SCHEMA,
                    },
                },
                "gating": _PREDICTOR_SCHEMA,
                "entropy_weight": {"type": "number", "minimum": 0},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["sgd", "rmsprop", "adam", "adadelta"]},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "max_epochs": {"type": "integer", "minimum": 1},
                "patience": {"type": "integer", "minimum": 0},
                "val_fraction": {"type": "number", "exclusiveMinimum": 0,
                                 "exclusiveMaximum": 0.5},
                "restarts": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "cyclic_lr": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["base", "max", "period"],
                    "properties": {
                        "base": {"type": "number", "exclusiveMinimum": 0},
                        "max": {"type": "number", "exclusiveMinimum": 0},
                        "period": {"type": "integer", "minimum": 2},
                    },
                },
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["train_csv", "response"],
            "properties": {
                "train_csv": {"type": "string"},
                "response": {"type": "string"},
                "test_csv": {"type": "string"},
                "label_column": {"type": "string"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
            },
        },
    },
}


class ConfigError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, payload):
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path, frame):
    text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\r\n")
    _atomic_write_text(path, text)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "config root"
        raise ConfigError(f"config error at {where}: {err.message}")
    return config


def _predictor_from_config(block):
    smooths = []
    for item in block.get("smooth", []):
        if ("var" in item) == ("vars" in item):
            raise ConfigError(
                "smooth terms need exactly one of 'var' or 'vars' in the model block"
            )
        variables = (item["var"],) if "var" in item else tuple(item["vars"])
        basis_kwargs = {
            key: item[key]
            for key in ("num_basis", "degree", "penalty_order", "df")
            if key in item
        }
        smooths.append(SmoothSpec(variables, BasisConfig(**basis_kwargs)))
    return PredictorSpec(
        intercept=block.get("intercept", True),
        linear=tuple(block.get("linear", [])),
        smooths=tuple(smooths),
    )


def model_spec_from_config(model_block):
    families = tuple(get_family(kind) for kind in model_block["families"])
    params = model_block["parameters"]
    if len(params) != len(families):
        raise ConfigError(
            "model block: 'parameters' must list one entry per family "
            f"({len(families)} needed, {len(params)} given)"
        )
    predictors = []
    for m, (fam, block) in enumerate(zip(families, params)):
        missing = [p for p in fam.param_names if p not in block]
        extra = [p for p in block if p not in fam.param_names]
        if missing or extra:
            raise ConfigError(
                f"model block: parameters[{m}] for family {fam.kind!r} must define "
                f"exactly {list(fam.param_names)}"
            )
        predictors.append(
            tuple(_predictor_from_config(block[p]) for p in fam.param_names)
        )
    try:
        return ModelSpec(
            families=families,
            param_predictors=tuple(predictors),
            gating=_predictor_from_config(model_block.get("gating", {})),
            entropy_weight=model_block.get("entropy_weight", 0.0),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"model block: {exc}") from exc


def optim_config_from_config(block, seed_override=None):
    block = dict(block or {})
    if "cyclic_lr" in block:
        clr = block.pop("cyclic_lr")
        block["cyclic_lr"] = optim.CyclicLR(clr["base"], clr["max"], clr["period"])
    if seed_override is not None:
        block["seed"] = seed_override
    try:
        return optim.OptimConfig(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"optimizer block: {exc}") from exc


def _load_table(path, response, what):
    try:
        frame = pd.read_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc}") from exc
    if response not in frame.columns:
        raise ConfigError(f"{what} {path!r} has no response column {response!r}")
    y = frame[response].to_numpy(dtype=float)
    return frame.drop(columns=[response]), y, frame


def _output_dir(config):
    out = (config.get("output") or {}).get("directory")
    out = out or os.environ.get(OUTPUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _fit_from_config(config):
    spec = model_spec_from_config(config["model"])
    data_block = config["data"]
    frame, y, raw = _load_table(data_block["train_csv"], data_block["response"], "train CSV")
    labels = None
    if "label_column" in data_block:
        if data_block["label_column"] not in raw.columns:
            raise ConfigError(
                f"data block: label_column {data_block['label_column']!r} not in train CSV"
            )
        labels = raw[data_block["label_column"]].to_numpy(dtype=int)
        frame = frame.drop(columns=[data_block["label_column"]])
    cfg = optim_config_from_config(config.get("optimizer"))
    try:
        state = mixture.build_state(spec, frame, y)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"model/data mismatch: {exc}") from exc
    result = optim.fit(state, cfg)
    return spec, state, result, cfg, labels


def cmd_fit(args):
    config = load_config(args.config)
    spec, state, result, cfg, labels = _fit_from_config(config)
    out = _output_dir(config)
    if not result.ok:
        write_json(
            os.path.join(out, "result.json"),
            {"diverged": True, "n_diverged_restarts": result.n_diverged_restarts},
        )
        raise NumericalError("all restarts diverged; wrote result.json with diagnostics")

    state = state.replace_psi(result.psi)
    payload = {
        "coefficients": {
            pred: {term: values.tolist() for term, values in terms.items()}
            for pred, terms in state.design.unpack(state.psi).items()
        },
        "marginal_weights": mixture.marginal_weights(state).tolist(),
        "objective": {
            "train_trace": result.train_trace.tolist(),
            "val_trace": result.val_trace.tolist(),
            "best_epoch": result.best_epoch,
            "best_val": result.best_val,
        },
        "restart": result.restart,
        "n_diverged_restarts": result.n_diverged_restarts,
        "diverged": False,
        "seed": cfg.seed,
        "wall_time": result.wall_time,
        "diagnostics": {},
    }

    resp = mixture.responsibilities(state)
    if labels is not None:
        est = resp.argmax(axis=1)
        payload["metrics"] = {
            "accuracy": metrics.accuracy(labels, est),
            "ari": metrics.adjusted_rand_index(labels, est),
        }
    data_block = config["data"]
    if "test_csv" in data_block:
        test_frame, test_y, _ = _load_table(
            data_block["test_csv"], data_block["response"], "test CSV"
        )
        if "label_column" in data_block and data_block["label_column"] in test_frame.columns:
            test_frame = test_frame.drop(columns=[data_block["label_column"]])
        payload["pls"] = metrics.predictive_log_score(state, test_frame, test_y)

    fitted, clamped = mixture.predict_params(state, state_frame(config))
    payload["diagnostics"]["extrapolated_rows"] = clamped
    write_json(os.path.join(out, "result.json"), payload)
    write_csv(
        os.path.join(out, "responsibilities.csv"),
        pd.DataFrame(resp, columns=[f"comp{m + 1}" for m in range(spec.n_components)]),
    )
    write_csv(os.path.join(out, "fitted.csv"), fitted)
    return 0


def state_frame(config):
    data_block = config["data"]
    frame, _, _ = _load_table(data_block["train_csv"], data_block["response"], "train CSV")
    if "label_column" in data_block and data_block["label_column"] in frame.columns:
        frame = frame.drop(columns=[data_block["label_column"]])
    return frame


SCENARIOS = {
    "linear": ("n", "components", "features", "family"),
    "additive": ("family", "scale", "noise"),
    "overfit": (),
}

_LINEAR_GRID = {"n": (300, 2500), "components": (2, 3, 5, 10), "features": (2, 10)}
_ADDITIVE_GRID = {"scale": (2.0, 4.0), "noise": (3, 10)}


def cmd_simulate(args):
    rng_seed = args.seed
    if args.scenario == "linear":
        for field, legal in _LINEAR_GRID.items():
            if getattr(args, field) not in legal:
                raise ConfigError(
                    f"--{field} {getattr(args, field)} not in the design grid {legal}"
                )
        if args.family not in ("normal", "laplace", "logistic"):
            raise ConfigError("--family must be normal, laplace or logistic here")
        dataset = simulate.gen_linear_mixture(
            simulate.LinearMixtureDesign(
                n=args.n, n_components=args.components, n_features=args.features,
                family=args.family, seed=rng_seed,
            )
        )
    elif args.scenario == "additive":
        if args.family not in ("normal", "poisson"):
            raise ConfigError("--family must be normal or poisson here")
        for field, legal in _ADDITIVE_GRID.items():
            if getattr(args, field) not in legal:
                raise ConfigError(
                    f"--{field} {getattr(args, field)} not in the design grid {legal}"
                )
        dataset = simulate.gen_additive_mixture(
            simulate.AdditiveMixtureDesign(
                family=args.family, scale=args.scale, n_noise=args.noise, seed=rng_seed
            )
        )
    else:
        dataset = simulate.gen_overfit_mixture(
            simulate.OverfitMixtureDesign(seed=rng_seed)
        )

    out = args.out or os.environ.get(OUTPUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    table = dataset.X.copy()
    table["y"] = dataset.y
    table["true_label"] = dataset.labels
    write_csv(os.path.join(out, "data.csv"), table)
    truth = {
        "scenario": args.scenario,
        "seed": rng_seed,
        "pi": dataset.pi_true.tolist(),
        "psi": None if dataset.psi_true is None else dataset.psi_true.tolist(),
    }
    write_json(os.path.join(out, "truth.json"), truth)
    return 0


def cmd_benchmark(args):
    if args.suite not in benchmarks.SUITES:
        raise ConfigError(
            f"unknown suite {args.suite!r}; choose from {sorted(benchmarks.SUITES)}"
        )
    if args.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.threads) as pool:
            futures = [
                pool.submit(
                    benchmarks.run_suite, args.suite, reps=1,
                    seed=(args.seed or 0) + rep, quick=not args.full,
                )
                for rep in range(args.reps)
            ]
            rows = [row for f in futures for row in f.result()]
    else:
        rows = benchmarks.run_suite(
            args.suite, reps=args.reps, seed=args.seed, quick=not args.full
        )
    out = args.out or os.environ.get(OUTPUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "metrics.csv"), pd.DataFrame(rows))
    write_json(os.path.join(out, "summary.json"), benchmarks.summarize(rows))
    return 0


def cmd_path(args):
    config = load_config(args.config)
    try:
        grid = [float(v) for v in args.entropy_grid.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--entropy-grid must be comma-separated numbers: {exc}") from exc
    if sorted(grid) != grid:
        raise ConfigError("--entropy-grid must be non-decreasing")

    spec = model_spec_from_config(config["model"])
    data_block = config["data"]
    frame, y, raw = _load_table(data_block["train_csv"], data_block["response"], "train CSV")
    if "label_column" in data_block and data_block["label_column"] in frame.columns:
        frame = frame.drop(columns=[data_block["label_column"]])
    cfg = optim_config_from_config(config.get("optimizer"))
    test = None
    if "test_csv" in data_block:
        test_frame, test_y, _ = _load_table(
            data_block["test_csv"], data_block["response"], "test CSV"
        )
        if "label_column" in data_block and data_block["label_column"] in test_frame.columns:
            test_frame = test_frame.drop(columns=[data_block["label_column"]])
        test = (test_frame, test_y)

    rows = []
    warm_psi = None
    for xi in grid:
        spec_xi = ModelSpec(
            families=spec.families,
            param_predictors=spec.param_predictors,
            gating=spec.gating,
            entropy_weight=xi,
        )
        state = mixture.build_state(spec_xi, frame, y)
        result = optim.fit(state, cfg, warm_start=warm_psi)
        if not result.ok:
            raise NumericalError(f"fit diverged at entropy weight {xi:g}")
        warm_psi = result.psi
        state = state.replace_psi(result.psi)
        pi = mixture.marginal_weights(state)
        if test is not None:
            pls = metrics.predictive_log_score(state, test[0], test[1])
        else:
            pls = float(np.mean(mixture.predict_log_density(state, frame, y)))
        for m in range(spec.n_components):
            rows.append(dict(xi=xi, component=m + 1, pi_hat=pi[m], pls=pls))

    out = _output_dir(config)
    write_csv(os.path.join(out, "path.csv"), pd.DataFrame(rows))
    return 0


def build_parser():
    parser = _Parser(prog="distmix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model from a config file and CSV data")
    p_fit.add_argument("config", help="YAML/JSON config file")
    p_fit.add_argument("--threads", type=int, default=1)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="generate a benchmark dataset")
    p_sim.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    p_sim.add_argument("--n", type=int, default=300)
    p_sim.add_argument("--components", type=int, default=2)
    p_sim.add_argument("--features", type=int, default=2)
    p_sim.add_argument("--family", default="normal")
    p_sim.add_argument("--scale", type=float, default=2.0)
    p_sim.add_argument("--noise", type=int, default=3)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("benchmark", help="run a benchmark suite")
    p_bench.add_argument("--suite", required=True)
    p_bench.add_argument("--reps", type=int, default=2)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--full", action="store_true",
                         help="run the full grid instead of the quick one")
    p_bench.add_argument("--threads", type=int, default=1)
    p_bench.add_argument("--out", default=None)
    p_bench.set_defaults(func=cmd_benchmark)

    p_path = sub.add_parser("path", help="sweep the entropy penalty with warm starts")
    p_path.add_argument("config")
    p_path.add_argument("--entropy-grid", required=True,
                        help="comma-separated non-decreasing penalty weights")
    p_path.add_argument("--threads", type=int, default=1)
    p_path.set_defaults(func=cmd_path)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"distmix: config error: {exc}", file=sys.stderr)
        return 1
    except (KeyError, ValueError) as exc:
        print(f"distmix: error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"distmix: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
