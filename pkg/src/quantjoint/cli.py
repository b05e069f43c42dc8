"""Command-line entry point: ``quantjoint fit | simulate | summarize``.

Exit codes: 0 success, 1 bad configuration, 2 invalid or missing data,
3 sampler failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional

import yaml

from . import __version__
from ._jit import USING_NUMBA
from .diagnostics import emit_figure_data, summarize
from .distributions import rng_stream
from .joint import SamplerError, chain_seed, run_quantile_battery
from .model import (
    MODES,
    SHARED_EFFECTS,
    TIME,
    DataValidationError,
    McmcSettings,
    ModelSpec,
    PriorSpec,
    read_dataset,
    write_longitudinal_csv,
    write_survival_csv,
)
from .outputs import (
    file_sha256,
    fmt_float,
    read_samples_csv,
    summary_text,
    tau_label,
    write_figure_csv,
    write_manifest,
    write_samples_csv,
    write_summary,
)
from .simulate import SCENARIOS, scenario as named_scenario, simulate

log = logging.getLogger("quantjoint")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SAMPLER = 0, 1, 2, 3

CONFIG_KEYS = {"mode", "data", "output", "tau", "covariates", "shared_effects", "grid_k", "mcmc", "priors",
               "jobs"}
PRIOR_KEYS = {"beta_mean", "beta_cov", "sigma2", "lambda", "alpha", "re_cov_df", "re_cov_scale",
              "beta_s_mean", "beta_s_cov"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "quantile-joint"
    longitudinal: Optional[Path] = None
    survival: Optional[Path] = None
    output: Optional[Path] = None
    tau: tuple = (0.5,)
    l_covariates: tuple = (TIME,)
    s_covariates: tuple = ()
    shared_effects: tuple = SHARED_EFFECTS
    grid_k: int = 10
    mcmc: dict = field(default_factory=dict)
    priors: dict = field(default_factory=dict)
    jobs: int = 0

    def model_spec(self) -> ModelSpec:
        try:
            pr = dict(self.priors)
            prior_kw = {}
            for key in ("beta_mean", "beta_cov", "beta_s_mean", "beta_s_cov"):
                if key in pr:
                    prior_kw[key] = pr[key]
            for key, attr in (("sigma2", "sigma2"), ("lambda", "lam"), ("alpha", "alpha")):
                if key in pr:
                    prior_kw[attr] = tuple(float(v) for v in pr[key])
            if "re_cov_df" in pr or "re_cov_scale" in pr:
                prior_kw["re_cov"] = (float(pr.get("re_cov_df", 4.0)), pr.get("re_cov_scale"))
            return ModelSpec(
                mode=self.mode,
                tau_levels=() if self.mode == "mean-joint" else tuple(self.tau),
                l_covariates=tuple(self.l_covariates),
                s_covariates=tuple(self.s_covariates),
                shared_effects=tuple(self.shared_effects),
                priors=PriorSpec(**prior_kw),
                grid_k=int(self.grid_k),
                mcmc=McmcSettings(**self.mcmc),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def check_inputs(self) -> None:
        """Mode-required inputs must be named and exist."""
        if self.longitudinal is None:
            raise DataValidationError("missing input: longitudinal CSV (--long or data.longitudinal)")
        if self.mode != "long-quantile" and self.survival is None:
            raise DataValidationError(f"missing input: survival CSV is required in {self.mode} mode "
                                      "(--surv or data.survival)")
        for label, path in (("longitudinal CSV", self.longitudinal), ("survival CSV", self.survival)):
            if path is not None and not path.is_file():
                raise DataValidationError(f"missing input: {label} {path} does not exist")


def parse_tau(text) -> tuple:
    """``0.1,0.5,0.9`` or ``a..b`` (step 0.1) or ``a..b:step``; a YAML list is also accepted."""
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    s = str(text).strip()
    try:
        if ".." in s:
            rng_part, _, step_part = s.partition(":")
            lo, hi = (Decimal(p.strip()) for p in rng_part.split("..", 1))
            step = Decimal(step_part.strip()) if step_part else Decimal("0.1")
            if step <= 0 or hi < lo:
                raise ConfigError(f"bad tau range {s!r}")
            out, v = [], lo
            while v <= hi:
                out.append(float(v))
                v += step
            return tuple(out)
        return tuple(float(p) for p in s.split(",") if p.strip())
    except (InvalidOperation, ValueError) as exc:
        raise ConfigError(f"cannot parse tau {s!r}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    base = path.parent
    cfg = RunConfig()

    def rel(p):
        return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

    data = raw.get("data") or {}
    if not isinstance(data, dict) or set(data) - {"longitudinal", "survival"}:
        raise ConfigError("data must map longitudinal/survival to CSV paths")
    cfg.longitudinal = rel(data.get("longitudinal"))
    cfg.survival = rel(data.get("survival"))
    cfg.output = rel(raw.get("output"))
    if "mode" in raw:
        cfg.mode = str(raw["mode"])
    if "tau" in raw:
        cfg.tau = parse_tau(raw["tau"])
    cov = raw.get("covariates") or {}
    if not isinstance(cov, dict) or set(cov) - {"longitudinal", "survival"}:
        raise ConfigError("covariates must map longitudinal/survival to name lists")
    if "longitudinal" in cov:
        cfg.l_covariates = tuple(cov["longitudinal"] or ())
    if "survival" in cov:
        cfg.s_covariates = tuple(cov["survival"] or ())
    if "shared_effects" in raw:
        cfg.shared_effects = tuple(raw["shared_effects"] or ())
    if "grid_k" in raw:
        cfg.grid_k = raw["grid_k"]
    mc = raw.get("mcmc") or {}
    if not isinstance(mc, dict) or set(mc) - {"chain_length", "burn_in", "thin", "seed"}:
        raise ConfigError("mcmc takes chain_length, burn_in, thin and seed")
    cfg.mcmc = {k: int(v) for k, v in mc.items()}
    pr = raw.get("priors") or {}
    if not isinstance(pr, dict) or set(pr) - PRIOR_KEYS:
        raise ConfigError(f"priors takes {sorted(PRIOR_KEYS)}")
    cfg.priors = pr
    if "jobs" in raw:
        cfg.jobs = int(raw["jobs"])
    return cfg


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.mode is not None:
        cfg.mode = args.mode
    if args.long is not None:
        cfg.longitudinal = Path(args.long)
    if args.surv is not None:
        cfg.survival = Path(args.surv)
    if args.out is not None:
        cfg.output = Path(args.out)
    if args.tau is not None:
        cfg.tau = parse_tau(args.tau)
    for flag in ("chain_length", "burn_in", "thin", "seed"):
        v = getattr(args, flag)
        if v is not None:
            cfg.mcmc[flag] = v
    if args.grid_k is not None:
        cfg.grid_k = args.grid_k
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if cfg.output is None:
        raise ConfigError("no output directory (--out or output)")
    return cfg


def config_hash(spec: ModelSpec) -> str:
    text = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _records_after_exit(data) -> int:
    if not data.has_survival:
        return 0
    exits = {r.subject_id: r.exit for r in data.survival}
    return sum(1 for r in data.longitudinal if r.time > exits[r.subject_id])


def cmd_fit(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, args)
    spec = cfg.model_spec()
    cfg.check_inputs()
    data = read_dataset(cfg.longitudinal, cfg.survival if spec.is_joint else None)
    jobs = cfg.jobs if cfg.jobs > 0 else (os.cpu_count() or 1)
    log.info("fitting %s at %d level(s) with %d job(s)", spec.mode, max(len(spec.tau_levels), 1), jobs)
    samples = run_quantile_battery(data, spec, jobs=jobs)

    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    inputs = {"longitudinal_sha256": file_sha256(cfg.longitudinal)}
    if spec.is_joint:
        inputs["survival_sha256"] = file_sha256(cfg.survival)
    after_exit = _records_after_exit(data)
    chash = config_hash(spec)
    for idx, sample in enumerate(samples):
        meta = sample.metadata
        d = out / tau_label(meta["tau"])
        d.mkdir(exist_ok=True)
        write_samples_csv(d / "samples.csv", sample)
        write_summary(d / "summary.txt", summarize(sample))
        manifest = {
            "tool": "quantjoint",
            "version": __version__,
            "mode": meta["mode"],
            "tau": "none" if meta["tau"] is None else fmt_float(meta["tau"]),
            "spec_hash": meta["spec_hash"],
            "config_hash": chash,
            "seed": meta["seed"],
            "chain_index": idx,
            "chain_seed_spawn_key": ",".join(str(k) for k in meta["seed_spawn_key"]),
            "chain_length": meta["chain_length"],
            "burn_in": meta["burn_in"],
            "thin": meta["thin"],
            "stored_draws": sample.n_draws,
            "grid_cuts": ",".join(fmt_float(c) for c in meta.get("grid_cuts", [])) or "none",
            "n_subjects": data.n,
            "n_records": len(data.longitudinal),
            "records_after_exit": after_exit,
            "kernels": "numba" if USING_NUMBA else "python",
            **inputs,
        }
        write_manifest(d / "manifest.txt", manifest)
        log.info("%s: %d draws written to %s", tau_label(meta["tau"]), sample.n_draws, d)
    if spec.is_joint:
        write_figure_csv(out / "figure_alpha.csv", emit_figure_data(samples, "alpha"))
    if after_exit:
        log.warning("%d longitudinal record(s) fall after their subject's exit time and were kept", after_exit)
    return EXIT_OK


def cmd_simulate(args) -> int:
    overrides = {}
    for key in ("n", "tau", "alpha"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    try:
        sc = named_scenario(args.scenario, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rng = rng_stream(chain_seed(args.seed, 0))
    data, truth = simulate(sc, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_longitudinal_csv(out / "long.csv", data.longitudinal)
    write_survival_csv(out / "surv.csv", data.survival)
    (out / "truth.json").write_text(truth.to_json() + "\n", encoding="utf-8")
    log.info("simulated %d subjects, %d events into %s", sc.n, sum(r.event for r in data.survival), out)
    return EXIT_OK


def cmd_summarize(args) -> int:
    try:
        sample = read_samples_csv(args.samples)
    except FileNotFoundError:
        raise DataValidationError(f"missing input: samples file {args.samples} does not exist") from None
    except ValueError as exc:
        raise DataValidationError(str(exc)) from exc
    text = summary_text(summarize(sample))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quantjoint", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run the sampler on CSV data")
    f.add_argument("--config", help="YAML run configuration")
    f.add_argument("--mode", choices=MODES)
    f.add_argument("--long", help="longitudinal CSV (id,time,y,...)")
    f.add_argument("--surv", help="survival CSV (id,entry,exit,event)")
    f.add_argument("--out", help="output directory")
    f.add_argument("--tau", help="levels: 0.1,0.5,0.9 or 0.1..0.9[:step]")
    f.add_argument("--seed", type=int)
    f.add_argument("--chain-length", dest="chain_length", type=int)
    f.add_argument("--burn-in", dest="burn_in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--grid-k", dest="grid_k", type=int)
    f.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="write a synthetic cohort")
    s.add_argument("--scenario", default="default", choices=sorted(SCENARIOS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--tau", type=float)
    s.add_argument("--alpha", type=float)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("summarize", help="summarise a samples.csv")
    m.add_argument("samples")
    m.add_argument("--out")
    m.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="quantjoint: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"quantjoint: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataValidationError as exc:
        print(f"quantjoint: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SamplerError as exc:
        print(f"quantjoint: sampler failure in block {exc.block} at iteration {exc.iteration}: {exc.cause}",
              file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
