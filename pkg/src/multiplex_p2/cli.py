"""Command-line interface: ``multiplex-p2 <fit|simulate|gof|sbc|sensitivity|meta>``.

Options come from an optional JSON config file (``--config``) whose keys are
the long option names with dashes replaced by underscores; explicit flags
override the file. Every output file starts with a provenance header (tool
version, command, seed and a hash of the resolved options).

Exit status: 0 on success, 2 for invalid input or options, 3 when
``--strict`` is set and a fit does not meet the R-hat gate.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationError, RHAT_LIMIT, sbc_run, sensitivity_run
from .gof import STATISTICS, ppc_report
from .meta import COVARIANCE_PRIOR, MetaPrior, meta_fit, meta_summarize, read_group_csv
from .meta import write_summary_csv as write_meta_csv
from .model import ModelSpec, P2Posterior, PriorConfig
from .network import CovariateSet, NetworkFormatError, load_bundle, load_multiplex
from .sampler import DrawsMatrix, SamplerConfig, config_hash, sample, summarize, write_summary_csv
from .simulate import (SimBatch, posterior_predictive, prior_predictive, simulate_network,
                       state_from_dict)

THREADS_ENV = "MP2_THREADS"
EXIT_OK, EXIT_INVALID, EXIT_UNCONVERGED = 0, 2, 3


class UsageError(ValueError):
    """Invalid or missing command-line input."""


# -- option handling -----------------------------------------------------------

def _common(p: argparse.ArgumentParser, stochastic: bool = True) -> None:
    p.add_argument("--config", help="JSON file of option values")
    p.add_argument("--out", help="output directory")
    if stochastic:
        p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument("--threads", type=int,
                   help=f"worker count (default: ${THREADS_ENV} or 1)")


def _data_options(p, required=True) -> None:
    p.add_argument("--data", help="network bundle (JSON) with optional covariates")
    p.add_argument("--layers", nargs="+", help="per-layer adjacency CSV files (alternative to --data)")
    p.add_argument("--model", help="model JSON (layers, covariate attachments, prior)")


def _sampler_options(p, iterations=2000) -> None:
    p.add_argument("--chains", type=int, help="default 4")
    p.add_argument("--iterations", type=int, help=f"per chain, default {iterations}")
    p.add_argument("--warmup", type=int, help="default half the iterations")
    p.add_argument("--target-accept", type=float, help="default 0.8")
    p.add_argument("--max-tree-depth", type=int, help="default 10")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiplex-p2", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="sample the posterior of one network")
    _common(p)
    _data_options(p)
    _sampler_options(p)
    p.add_argument("--strict", action="store_true", help="exit 3 if any R-hat >= 1.05")

    p = sub.add_parser("simulate", help="simulate networks from the prior, a posterior or fixed parameters")
    _common(p)
    _data_options(p)
    p.add_argument("--from", dest="source", choices=("prior", "posterior", "params"))
    p.add_argument("--count", type=int, help="number of networks")
    p.add_argument("--n", type=int, help="actors (prior and params modes without --data)")
    p.add_argument("--draws", help="draws CSV from `fit` (posterior mode)")
    p.add_argument("--params", help="parameter JSON (params mode)")

    p = sub.add_parser("gof", help="posterior predictive goodness-of-fit report")
    _common(p, stochastic=False)
    _data_options(p)
    p.add_argument("--batch", help="directory written by `simulate`")
    p.add_argument("--statistics", nargs="+", choices=STATISTICS)

    for name, text in (("sbc", "simulation-based calibration"), ("sensitivity", "posterior z-score and contraction")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--model", help="model JSON (layers and prior)")
        p.add_argument("--n", type=int, help="actors")
        p.add_argument("--L", type=int, help="replications")
        if name == "sbc":
            p.add_argument("--K", type=int, help="posterior draws ranked against the truth")
        _sampler_options(p, iterations=1000)
        p.add_argument("--rhat-limit", type=float, help=f"exclusion threshold, default {RHAT_LIMIT}")

    p = sub.add_parser("meta", help="hierarchical meta-analysis of per-group estimates")
    _common(p)
    p.add_argument("--input", help="CSV with columns group, parameter, mean, sd")
    p.add_argument("--mu-sd", type=float, help="prior sd of the population mean, default 10 "
                   "(100 for --covariance-parameters)")
    p.add_argument("--tau-scale", type=float, help="half-Cauchy scale of tau, default 0.5")
    p.add_argument("--covariance-parameters", nargs="*",
                   help="parameters that use the covariance prior (mu sd 100)")
    _sampler_options(p, iterations=5000)
    p.add_argument("--parameterization", choices=("noncentered", "centered"))
    p.add_argument("--strict", action="store_true", help="exit 3 if any R-hat >= 1.05")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge config-file values under explicit flags."""
    opts = {}
    if args.config:
        try:
            with open(args.config) as fh:
                opts = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(opts, dict):
            raise UsageError("config file must hold a JSON object")
        known = set(vars(args))
        unknown = set(opts) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key, value in vars(args).items():
        if value is not None and value is not False:
            opts[key] = value
        else:
            opts.setdefault(key, value)
    opts.pop("config", None)
    if "seed" in opts and opts["seed"] is None:
        raise UsageError("--seed is required")
    if opts.get("out") is None:
        raise UsageError("--out is required")
    if opts.get("threads") is None:
        opts["threads"] = int(os.environ.get(THREADS_ENV, "1"))
    if opts["threads"] < 1:
        raise UsageError("--threads must be at least 1")
    return opts


# options that do not change results stay out of the hash
_UNHASHED = ("out", "threads")


def provenance(opts: dict) -> dict:
    hashed = {k: v for k, v in opts.items() if k not in _UNHASHED}
    return {"tool": f"multiplex-p2 {__version__}", "command": opts["command"],
            "seed": opts.get("seed"), "config_hash": config_hash(hashed)}


def _out_dir(opts) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _with_header(path: Path, header: dict) -> None:
    """Prefix a written CSV with ``# key: value`` lines."""
    body = path.read_text()
    path.write_text("".join(f"# {k}: {v}\n" for k, v in header.items()) + body)


def _write_json(path: Path, doc: dict, header: dict) -> None:
    with open(path, "w") as fh:
        json.dump({"provenance": header, **doc}, fh, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _given(opts, key, default):
    """An option's value, or ``default`` only when it was not supplied (0 stays 0)."""
    value = opts.get(key)
    return default if value is None else value


def _sampler_config(opts, iterations=2000, chains=4) -> SamplerConfig:
    kwargs = {"chains": _given(opts, "chains", chains), "iterations": _given(opts, "iterations", iterations),
              "seed": opts["seed"], "threads": opts["threads"]}
    for key in ("warmup", "target_accept", "max_tree_depth"):
        if opts.get(key) is not None:
            kwargs[key] = opts[key]
    try:
        return SamplerConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _load_spec(opts, T=None, layer_names=()) -> ModelSpec:
    if opts.get("model"):
        spec = ModelSpec.load(opts["model"])
        if T is not None and spec.T != T:
            raise UsageError(f"model has {spec.T} layers, data has {T}")
        return spec
    if T is None:
        raise UsageError("--model is required")
    return ModelSpec(T, tuple(layer_names))


def _load_data(opts, required=True):
    """Network, covariates and model spec from ``--data``/``--layers`` and ``--model``."""
    if opts.get("data") and opts.get("layers"):
        raise UsageError("give either --data or --layers, not both")
    if opts.get("data"):
        net, covs = load_bundle(opts["data"])
    elif opts.get("layers"):
        net, covs = load_multiplex(opts["layers"]), CovariateSet()
    elif required:
        raise UsageError("network data is required (--data or --layers)")
    else:
        return None, CovariateSet(), None
    spec = _load_spec(opts, net.T, net.layer_names)
    if spec.attachments:
        covs = CovariateSet(covs.dyadic, covs.actor, spec.attachments)
    covs.check(net.n, net.T)
    return net, covs, replace(spec, attachments=dict(covs.attachments))


# -- subcommands ---------------------------------------------------------------

def _max_rhat(rows):
    """Largest finite R-hat, or None when no parameter has one (single chain)."""
    finite = [r["rhat"] for r in rows if np.isfinite(r["rhat"])]
    return max(finite) if finite else None


def cmd_fit(opts) -> int:
    net, covs, spec = _load_data(opts)
    config = _sampler_config(opts)
    out = _out_dir(opts)
    header = provenance(opts)
    draws = sample(P2Posterior(net, covs, spec.prior), config)
    draws.to_csv(out / "draws.csv", header)
    rows = summarize(draws)
    write_summary_csv(rows, out / "summary.csv", header)
    bad = [r["name"] for r in rows if r["rhat"] >= RHAT_LIMIT]
    _write_json(out / "diagnostics.json", {
        "config": asdict(config), "model": spec.to_dict(), **draws.diagnostics(),
        "max_rhat": _max_rhat(rows),
        "rhat_limit": RHAT_LIMIT, "unconverged": bad}, header)
    if bad:
        print(f"warning: {len(bad)} parameters have R-hat >= {RHAT_LIMIT}", file=sys.stderr)
        if opts.get("strict"):
            return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_simulate(opts) -> int:
    source = opts.get("source") or "prior"
    count = opts.get("count")
    if count is None or count < 0:
        raise UsageError("--count must be a non-negative integer")
    rng = np.random.default_rng(opts["seed"])
    net, covs, spec = _load_data(opts, required=False)
    if source == "posterior":
        if not opts.get("draws"):
            raise UsageError("posterior mode needs --draws")
        draws = DrawsMatrix.from_csv(opts["draws"])
        names = spec.layer_names if spec else ()
        batch = posterior_predictive(draws, covs, count, rng, names) if count else SimBatch([], "posterior")
    else:
        n = net.n if net is not None else opts.get("n")
        if n is None or n < 2:
            raise UsageError("--n (at least 2) or --data is required")
        spec = spec or _load_spec(opts)
        if source == "prior":
            batch = prior_predictive(spec, n, count, rng, covs)
        else:
            if not opts.get("params"):
                raise UsageError("params mode needs --params")
            with open(opts["params"]) as fh:
                state = state_from_dict(json.load(fh), n, spec.T, covs)
            nets = [simulate_network(state, covs, n, spec.T, rng, layer_names=spec.layer_names)
                    for _ in range(count)]
            batch = SimBatch(nets, "fixed", [state] * count)
    batch.write(_out_dir(opts), {"header": provenance(opts)})
    return EXIT_OK


def cmd_gof(opts) -> int:
    net, _, _ = _load_data(opts)
    if not opts.get("batch"):
        raise UsageError("--batch is required")
    manifest = Path(opts["batch"]) / "manifest.json"
    if not manifest.exists():
        raise UsageError(f"{manifest} not found")
    batch = SimBatch.read(opts["batch"])
    for k, sim in enumerate(batch.networks):
        if sim.adj.shape != net.adj.shape:
            raise UsageError(f"simulated network {k + 1} has shape {sim.adj.shape}, observed {net.adj.shape}")
    report = ppc_report(net, batch, opts.get("statistics") or STATISTICS, workers=opts["threads"])
    out = _out_dir(opts)
    header = provenance(opts)
    report.write_json(out / "gof.json")
    doc = json.loads((out / "gof.json").read_text())
    _write_json(out / "gof.json", doc, header)
    report.write_csv(out / "gof.csv")
    _with_header(out / "gof.csv", header)
    return EXIT_OK


def _study_inputs(opts):
    spec = _load_spec(opts)
    n = opts.get("n")
    if n is None or n < 2:
        raise UsageError("--n (at least 2) is required")
    L = opts.get("L")
    if L is None or L < 1:
        raise UsageError("--L must be a positive integer")
    return spec, n, L


def cmd_sbc(opts) -> int:
    spec, n, L = _study_inputs(opts)
    K = _given(opts, "K", 100)
    config = _sampler_config(opts, iterations=1000)
    out = _out_dir(opts)
    res = sbc_run(spec, None, n, spec.T, L, K, replace_threads(config), opts["seed"],
                  rhat_limit=_given(opts, "rhat_limit", RHAT_LIMIT), checkpoint=out / "checkpoints",
                  workers=opts["threads"])
    header = provenance(opts)
    res.to_csv(out / "sbc_ranks.csv")
    _with_header(out / "sbc_ranks.csv", header)
    try:
        summary = res.summary()
    except CalibrationError as exc:      # too few replications for a chi-square test
        summary = {"L": res.L, "K": K, "retained": len(res.replications),
                   "excluded": [r + 1 for r in res.excluded], "uniformity": str(exc)}
    _write_json(out / "sbc_summary.json", summary, header)
    return EXIT_OK


def cmd_sensitivity(opts) -> int:
    spec, n, L = _study_inputs(opts)
    config = _sampler_config(opts, iterations=1000)
    out = _out_dir(opts)
    res = sensitivity_run(spec, None, n, spec.T, L, replace_threads(config), opts["seed"],
                          rhat_limit=_given(opts, "rhat_limit", RHAT_LIMIT),
                          checkpoint=out / "checkpoints", workers=opts["threads"])
    header = provenance(opts)
    res.to_csv(out / "sensitivity.csv")
    _with_header(out / "sensitivity.csv", header)
    _write_json(out / "sensitivity_summary.json", res.summary(), header)
    return EXIT_OK


def replace_threads(config: SamplerConfig) -> SamplerConfig:
    """Replications already run in parallel; chains inside each run serially."""
    return replace(config, threads=1)


def cmd_meta(opts) -> int:
    if not opts.get("input"):
        raise UsageError("--input is required")
    groups = read_group_csv(opts["input"])
    base = MetaPrior(_given(opts, "mu_sd", 10.0), _given(opts, "tau_scale", 0.5))
    cov_params = set(opts.get("covariance_parameters") or ())
    unknown = cov_params - set(groups)
    if unknown:
        raise UsageError(f"--covariance-parameters not in input: {sorted(unknown)}")
    config = _sampler_config(opts, iterations=5000)
    rows = []
    for parameter, estimates in groups.items():
        if len(estimates) < 2:
            raise UsageError(f"parameter {parameter!r} has fewer than 2 groups")
        prior = MetaPrior(COVARIANCE_PRIOR.mu_sd, base.tau_scale) if parameter in cov_params else base
        draws = meta_fit(estimates, prior, config, opts.get("parameterization") or "noncentered")
        rows.append(meta_summarize(draws).row(parameter))
    out = _out_dir(opts)
    write_meta_csv(rows, out / "meta_summary.csv", provenance(opts))
    bad = [r["parameter"] for r in rows if r["max_rhat"] >= RHAT_LIMIT]
    if bad:
        print(f"warning: R-hat >= {RHAT_LIMIT} for {bad}", file=sys.stderr)
        if opts.get("strict"):
            return EXIT_UNCONVERGED
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "gof": cmd_gof, "sbc": cmd_sbc,
            "sensitivity": cmd_sensitivity, "meta": cmd_meta}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = resolve(args)
        return COMMANDS[opts["command"]](opts)
    except (UsageError, NetworkFormatError, CalibrationError, FileNotFoundError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
