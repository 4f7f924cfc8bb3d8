"""Command-line front end.

Configuration is a flat ``key = value`` text file (``#`` starts a comment)
with ``--set key=value`` overrides applied on top. Every command writes the
fully resolved configuration to ``resolved_config.txt`` in its output
directory. ``TOMOGRAPH_OUT`` overrides the output directory.
"""

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines, ingest
from .demand import build_phi, build_psi
from .estimator import EstimatorConfig, init_state, link_covariance, run
from .evaluate import (
    compute_metrics,
    fraction_below,
    spectrum_report,
    write_csv,
    write_mean_var,
    write_metrics,
    write_spectrum,
)
from .netmodel import (
    TOY_TRAFFIC,
    TrafficSeries,
    gen_exact_model,
    gen_gravity_traffic,
    gen_topology,
    toy_network,
)
from .numerics import CONSTRAINT_MODES, numerical_rank

log = logging.getLogger("tomograph")

FLAG_LIMIT = 0.10
METHODS = ("csdme",) + baselines.KINDS
SOURCES = ("canonical", "abilene", "geant", "synth")

# key: (parser, default). None defaults are filled in from presets or data.
SCHEMA = {
    "source": (str, "canonical"),
    "data": (str, ""),
    "value_unit": (str, "kbps"),
    "preset": (str, "none"),
    "train_len": (int, None),
    "test_len": (int, None),
    "method": (str, "csdme"),
    "s": (int, None),
    "k": (int, None),
    "sigma_factor": (float, 0.4),
    "constraint_mode": (str, "lower_bound"),
    "tolerance": (float, 1e-8),
    "max_iterations": (int, 10_000),
    "reselect_every": (int, 1),
    "renormalize": ("bool", False),
    "robust": ("bool", True),
    "include_self": ("bool", False),
    "lagged_selection": ("bool", False),
    "seed": (int, 0),
    "repetitions": (int, 1),
    "out": (str, "out"),
    "model": (str, "gravity"),
    "n": (int, 11),
    "avg_out_degree": (float, 41 / 11),
    "T": (int, 2000),
    "mean_scale": (float, 1000.0),
    "noise_cv": (float, 0.3),
    "coupling": (float, 0.05),
    "timestep_seconds": (float, 300.0),
}

PRESETS = {
    "abilene": {"train_len": 500, "test_len": 1500, "s": 35, "k": 11},
    "geant": {"train_len": 1500, "test_len": 500, "s": 65, "k": 23},
}


class ConfigError(ValueError):
    pass


def _convert(key, raw):
    kind = SCHEMA[key][0]
    if raw is None or raw == "":
        return None
    if kind == "bool":
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def parse_config_text(text, origin="<config>"):
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{ln}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{ln}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(path=None, overrides=(), out=None):
    raw = {}
    if path is not None:
        raw.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    cfg = {key: default for key, (_, default) in SCHEMA.items()}
    preset = raw.get("preset", "none")
    if preset not in ("none", *PRESETS):
        raise ConfigError(f"unknown preset {preset!r}")
    cfg.update(PRESETS.get(preset, {}))
    for key, value in raw.items():
        cfg[key] = _convert(key, value)
    if out is not None:
        cfg["out"] = out
    if os.environ.get("TOMOGRAPH_OUT"):
        cfg["out"] = os.environ["TOMOGRAPH_OUT"]
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["source"] not in SOURCES:
        raise ConfigError(f"source must be one of {SOURCES}")
    if cfg["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    if cfg["constraint_mode"] not in CONSTRAINT_MODES:
        raise ConfigError(f"constraint_mode must be one of {CONSTRAINT_MODES}")
    if cfg["model"] not in ("toy", "gravity", "exact"):
        raise ConfigError("model must be toy, gravity or exact")
    if cfg["n"] < 2:
        raise ConfigError("n must be at least 2")
    if cfg["T"] < 1 or cfg["repetitions"] < 1:
        raise ConfigError("T and repetitions must be positive")
    if cfg["sigma_factor"] < 0:
        raise ConfigError("sigma_factor must be nonnegative")
    for key in ("s", "k", "train_len", "test_len"):
        if cfg[key] is not None and cfg[key] < 1:
            raise ConfigError(f"{key} must be positive")


def write_resolved(cfg, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [f"{key} = {'' if cfg[key] is None else cfg[key]}" for key in SCHEMA]
    (outdir / "resolved_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def synth_bundle(cfg, seed=None):
    seed = cfg["seed"] if seed is None else seed
    model = cfg["model"]
    if model == "toy":
        topo, A = toy_network()
        X = TrafficSeries(np.tile(TOY_TRAFFIC, (cfg["T"], 1)), cfg["timestep_seconds"])
        return ingest.DatasetBundle(A, X, topo, "synth:toy")
    topo, A = gen_topology(seed, cfg["n"], cfg["avg_out_degree"])
    if model == "gravity":
        X = gen_gravity_traffic(seed, topo, cfg["T"], cfg["mean_scale"], noise_cv=cfg["noise_cv"],
                                timestep_seconds=cfg["timestep_seconds"])
    else:
        X = gen_exact_model(seed, A, cfg["n"], cfg["T"], cfg["mean_scale"], coupling=cfg["coupling"],
                            timestep_seconds=cfg["timestep_seconds"]).X
    return ingest.DatasetBundle(A, X, topo, f"synth:{model}:seed={seed}")


def load_bundle(cfg, seed=None):
    src = cfg["source"]
    if src == "synth":
        return synth_bundle(cfg, seed)
    if not cfg["data"]:
        raise ConfigError(f"source={src} needs data=<path>")
    if src == "canonical":
        return ingest.load_canonical(cfg["data"])
    if src == "abilene":
        return ingest.parse_abilene(cfg["data"], cfg["value_unit"])
    return ingest.parse_geant_xml(cfg["data"])


def split_for(cfg, bundle):
    train = cfg["train_len"]
    test = cfg["test_len"]
    if train is None:
        train = max(1, bundle.T // 4)
    if test is None:
        test = bundle.T - train
    return ingest.split(bundle, ingest.SplitSpec(train, test))


def estimator_config(cfg, m):
    return EstimatorConfig(
        s=min(cfg["s"], m) if cfg["s"] is not None else None,
        constraint_mode=cfg["constraint_mode"],
        tolerance=cfg["tolerance"],
        max_iterations=cfg["max_iterations"],
        renormalize=cfg["renormalize"],
        reselect_every=cfg["reselect_every"],
        include_self=cfg["include_self"],
        robust=cfg["robust"],
        lagged_selection=cfg["lagged_selection"],
    )


def run_method(cfg, train, test, seed):
    """Returns the run trace for the configured method."""
    ecfg = estimator_config(cfg, train.m)
    if cfg["method"] == "csdme":
        trace, _ = run(init_state(train, ecfg), test)
        return trace
    k = cfg["k"] if cfg["k"] is not None else train.n
    basis = baselines.train_basis(cfg["method"], train.X, train.A, k=k,
                                  sigma_factor=cfg["sigma_factor"], seed=seed)
    trace = baselines.run_baseline(basis, train.A, test.Y, link_covariance(train.Y.values), ecfg)
    return replace(trace, start_index=test.X.start_index)


def _series_rows(values, start):
    return ([start + i, *row] for i, row in enumerate(values))


def write_run(outdir, cfg, bundle, train, test, trace):
    outdir = Path(outdir)
    n, m = bundle.n, bundle.m
    t0 = test.X.start_index
    write_csv(outdir / "estimates.csv", ["t"] + [f"od_{i}" for i in range(1, n * n + 1)],
              _series_rows(trace.x_hat, t0))
    width = trace.xc_hat.shape[1]
    # pca/cur coefficients are not per-source demands
    prefix = "coef" if cfg["method"] in ("pca", "cur") else "src"
    write_csv(outdir / "demands.csv", ["t"] + [f"{prefix}_{i}" for i in range(1, width + 1)],
              _series_rows(trace.xc_hat, t0))
    write_csv(outdir / "diagnostics.csv",
              ["t", "iterations", "kkt", "feasible", "s", "converged", "mode"],
              ([t0 + i, r.iterations, r.kkt_residual, int(r.feasible), r.selection.s,
                int(r.converged), r.mode] for i, r in enumerate(trace.steps)))
    s_max = max((r.selection.s for r in trace.steps), default=0)
    write_csv(outdir / "selection.csv", ["t"] + [f"link_{j}" for j in range(1, s_max + 1)],
              ([t0 + i] + [int(link) + 1 for link in r.selection.monitored]
               for i, r in enumerate(trace.steps)))
    report = compute_metrics(trace.x_hat, test.X.values)
    write_metrics(report, outdir, t0)
    write_mean_var(test.X, outdir)
    sre_ok = report.sre[np.isfinite(report.sre)]
    tre_ok = report.tre[np.isfinite(report.tre)]
    size = cfg["k"] if cfg["method"] in ("pca", "cur") else (
        trace.steps[0].selection.s if cfg["method"] == "csdme" else m)
    row = [cfg["method"], n, m, size if size is not None else n, train.T, test.T,
           float(np.mean(sre_ok)) if sre_ok.size else float("nan"),
           float(np.median(sre_ok)) if sre_ok.size else float("nan"),
           float(np.mean(tre_ok)) if tre_ok.size else float("nan"),
           float(np.median(tre_ok)) if tre_ok.size else float("nan"),
           fraction_below(report.cdf_sre, 0.8), fraction_below(report.cdf_tre, 0.3),
           fraction_below(report.cdf_tre, 0.2), trace.n_flagged, trace.n_infeasible]
    write_csv(outdir / "report.csv",
              ["method", "n", "m", "size", "train_len", "test_len", "mean_sre", "median_sre",
               "mean_tre", "median_tre", "frac_sre_le_0.8", "frac_tre_le_0.3", "frac_tre_le_0.2",
               "flagged", "infeasible"], [row])
    return report


def _run_one(cfg, seed, outdir):
    bundle = load_bundle(cfg, seed)
    train, test = split_for(cfg, bundle)
    start = time.perf_counter()
    trace = run_method(cfg, train, test, seed)
    log.info("%s: %d steps in %.2fs", cfg["method"], len(trace), time.perf_counter() - start)
    write_run(outdir, cfg, bundle, train, test, trace)
    write_resolved(cfg, outdir)
    return len(trace), trace.n_flagged


def cmd_run(cfg, jobs=1):
    out = Path(cfg["out"])
    reps = cfg["repetitions"]
    if reps == 1:
        tasks = [(cfg["seed"], out)]
    else:
        tasks = [(cfg["seed"] + r, out / f"seed_{cfg['seed'] + r}") for r in range(reps)]
    if jobs > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, [cfg] * reps, *zip(*tasks)))
    else:
        results = [_run_one(cfg, seed, d) for seed, d in tasks]
    write_resolved(cfg, out)
    total = sum(r[0] for r in results)
    flagged = sum(r[1] for r in results)
    print(f"{cfg['method']}: {total} steps, {flagged} flagged -> {out}")
    return 2 if total and flagged > FLAG_LIMIT * total else 0


def cmd_synth(cfg):
    bundle = synth_bundle(cfg)
    ingest.write_canonical(bundle, cfg["out"])
    write_resolved(cfg, cfg["out"])
    print(f"n={bundle.n} m={bundle.m} T={bundle.T} rank(A)={numerical_rank(bundle.A)}")
    return 0


def cmd_convert(cfg):
    if cfg["source"] not in ("abilene", "geant"):
        raise ConfigError("convert needs source=abilene or source=geant")
    bundle = load_bundle(cfg)
    ingest.write_canonical(bundle, cfg["out"])
    write_resolved(cfg, cfg["out"])
    print(f"{bundle.provenance}: n={bundle.n} m={bundle.m} T={bundle.T} -> {cfg['out']}")
    return 0


def cmd_spectrum(cfg):
    bundle = load_bundle(cfg)
    train, _ = split_for(cfg, bundle)
    psi = build_psi(train.X.values.mean(axis=0), bundle.n, cfg["include_self"])
    rep = spectrum_report(bundle.A, build_phi(bundle.A, psi))
    write_spectrum(rep, cfg["out"])
    write_mean_var(bundle.X, cfg["out"])
    write_resolved(cfg, cfg["out"])
    print(f"A {rep.a_shape[0]}x{rep.a_shape[1]} rank {rep.a_rank}; "
          f"phi {rep.phi_shape[0]}x{rep.phi_shape[1]} rank {rep.phi_rank}")
    return 0


def cmd_eval(cfg, estimates, truth):
    n2 = None
    with open(truth, encoding="utf-8") as fh:
        n2 = len(fh.readline().strip().split(",")) - 1
    x_true, gaps, t_true = ingest.read_tm_csv(truth, n2)
    x_true = ingest.impute_gaps(x_true, gaps)
    x_hat, _, t_hat = ingest.read_tm_csv(estimates, n2)
    offset = t_hat - t_true
    if offset < 0 or offset + x_hat.shape[0] > x_true.shape[0]:
        raise ConfigError("estimate timestamps fall outside the truth series")
    report = compute_metrics(x_hat, x_true[offset:offset + x_hat.shape[0]])
    write_metrics(report, cfg["out"], t_hat)
    write_resolved(cfg, cfg["out"])
    finite = report.sre[np.isfinite(report.sre)]
    print(f"median SRE {np.median(finite):.4g}, SRE<=0.8 for "
          f"{100 * fraction_below(report.cdf_sre, 0.8):.1f}% of flows")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tomograph", description="Traffic matrix estimation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", help="flat key = value configuration file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("-o", "--out", help="output directory")
        return sp

    common(sub.add_parser("synth", help="generate a synthetic canonical dataset"))
    common(sub.add_parser("convert", help="convert an Abilene/GEANT directory to canonical CSV"))
    rp = common(sub.add_parser("run", help="train, estimate and evaluate one method"))
    rp.add_argument("-j", "--jobs", type=int, default=1, help="parallel seed repetitions")
    common(sub.add_parser("spectrum", help="singular-value spectra of A and the compressed matrix"))
    ep = common(sub.add_parser("eval", help="score an estimates.csv against a tm.csv"))
    ep.add_argument("--estimates", required=True)
    ep.add_argument("--truth", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, args.overrides, args.out)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "convert":
            return cmd_convert(cfg)
        if args.command == "run":
            return cmd_run(cfg, args.jobs)
        if args.command == "spectrum":
            return cmd_spectrum(cfg)
        return cmd_eval(cfg, args.estimates, args.truth)
    except (ConfigError, ingest.ParseError, ingest.ConfigurationError, ValueError, OSError) as exc:
        print(f"tomograph {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
