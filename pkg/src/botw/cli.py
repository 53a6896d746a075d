"""``botw`` command-line front end.

Exit codes: 0 success, 1 input error (or a failed ``verify``), 2 design solver
did not converge.

Run configs are one JSON document whose keys mirror ``RunConfig``; scalar
command-line flags override the corresponding config fields.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from botw import files
from botw.environment import EnvironmentSpec, NoiseSpec
from botw.errors import BotwError, ConfigError, NotConverged
from botw.geometry import frank_wolfe_design, validate_arm_set
from botw.harness import (
    RegretTrace,
    RunConfig,
    checkpoints,
    design_for,
    gap_context,
    run_repetitions,
    sweep_horizons,
    verify_trace_invariants,
)

log = logging.getLogger("botw")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
CONFIG_KEYS = {"arm_set_source", "arms", "environment", "policy", "horizon_T", "repetitions",
               "base_seed", "record_granularity", "design_tol", "output"}
ENV_KEYS = {"variant", "theta", "noise", "corruption", "generator"}


@dataclass
class CliConfig:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    verbosity: int = 0


# -- config loading ----------------------------------------------------------------

def _resolve(base: Path, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def _arms_from_doc(doc: dict, base: Path):
    if doc.get("arms") is not None:
        raw = doc["arms"]
        if isinstance(raw, list) and raw and isinstance(raw[0], dict):
            return validate_arm_set([r["vector"] for r in raw], ids=[str(r["id"]) for r in raw]), None
        return validate_arm_set(raw), None
    src = doc.get("arm_set_source")
    if src is None:
        raise ConfigError("config needs arm_set_source (a path) or an inline arms list")
    path = _resolve(base, src)
    return files.read_arm_set(path), str(path)


def config_from_dict(doc: dict, base: Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig; ``overrides`` win over the document's scalar fields."""
    base = Path(".") if base is None else base
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    arms, arm_source = _arms_from_doc(doc, base)
    env = doc.get("environment")
    if not isinstance(env, dict):
        raise ConfigError("config is missing the environment object")
    unknown = set(env) - ENV_KEYS
    if unknown:
        raise ConfigError(f"unknown environment keys: {sorted(unknown)}")
    if "variant" not in env:
        raise ConfigError("config is missing environment.variant")
    horizon = doc.get("horizon_T")
    if horizon is None:
        raise ConfigError("config is missing horizon_T")
    theta = env.get("theta")
    if theta is not None:
        theta = tuple(float(v) for v in theta)
        if len(theta) != arms.d:
            raise ConfigError(f"environment.theta has {len(theta)} entries, arms have d={arms.d}")
    noise_cfg = env.get("noise") or {}
    noise = NoiseSpec(noise_cfg.get("kind", "none"), float(noise_cfg.get("sigma", 0.0)))
    generator = env.get("generator")
    if generator is not None and generator.get("kind") == "fixed" and "path" in generator:
        generator = dict(generator, path=str(_resolve(base, generator["path"])))
    spec = EnvironmentSpec(variant=env["variant"], horizon_T=int(horizon), theta=theta, noise=noise,
                           corruption=env.get("corruption"), generator=generator)
    return RunConfig(
        arms=arms,
        environment=spec,
        policy=doc.get("policy", "ftrl"),
        horizon_T=int(horizon),
        repetitions=int(doc.get("repetitions", 1)),
        base_seed=int(doc.get("base_seed", 0)),
        record_granularity=doc.get("record_granularity", "power_of_two_checkpoints"),
        design_tol=float(doc.get("design_tol", 1e-3)),
        arm_set_source=arm_source if arm_source is not None else doc.get("arm_set_source"),
        outputs=dict(doc.get("output") or {}),
    )


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    return config_from_dict(files.read_json(path), base=path.parent, overrides=overrides)


# -- subcommands -----------------------------------------------------------------

def _summary_doc(config: RunConfig, traces, design, reports) -> dict:
    finals = np.array([tr.final_regret for tr in traces])
    # worst status across repetitions: fail > pass > skip
    rank = {"skip": 0, "pass": 1, "fail": 2}
    digest = {}
    for rep in reports:
        for name, status in rep.digest().items():
            if rank[status] >= rank.get(digest.get(name), -1):
                digest[name] = status
    return {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": [tr.meta["seed"] for tr in traces],
        "per_horizon": [{
            "T": config.horizon_T,
            "mean": float(finals.mean()),
            "std": float(finals.std(ddof=1)) if finals.size > 1 else 0.0,
            "final_regrets": finals,
        }],
        "slope": None,
        "residual": None,
        "g_pi": None if design is None else design.g_value,
        "design_converged": None if design is None else design.converged,
        "invariants": digest,
        "verify_context": gap_context(config, design),
    }


def _design_with_status(config: RunConfig):
    if config.policy == "uniform":
        return None, True
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotConverged)
        design = design_for(config.arms, config.design_tol)
    ok = design.converged and not any(issubclass(w.category, NotConverged) for w in caught)
    return design, ok


def cmd_design(arms_path, tol: float, out_path) -> int:
    arms = files.read_arm_set(arms_path)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        result = frank_wolfe_design(arms, tol=tol)
    files.write_design_json(out_path, arms, result)
    log.info("g(pi) = %.17g after %d iterations", result.g_value, result.iterations)
    if not result.converged:
        print(f"design did not converge: g = {result.g_value:.6g}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_run(config_path, overrides: dict, out_trace=None, out_summary=None, out_gaps=None) -> int:
    config = load_config(config_path, overrides)
    out_trace = out_trace or config.outputs.get("trace")
    out_summary = out_summary or config.outputs.get("summary")
    out_gaps = out_gaps or config.outputs.get("gaps")
    if not out_trace or not out_summary:
        raise ConfigError("run needs --out-trace and --out-summary (or output.trace/output.summary)")
    design, converged = _design_with_status(config)
    result = run_repetitions(config)
    reports = [verify_trace_invariants(tr) for tr in result.traces]
    files.write_trace_csv(out_trace, result.traces)
    summary = _summary_doc(config, result.traces, design, reports)
    files.write_json(out_summary, summary)
    if out_gaps:
        files.write_json(out_gaps, summary["verify_context"])
    log.info("mean final regret %.6g over %d repetitions", summary["per_horizon"][0]["mean"],
             config.repetitions)
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_sweep(config_path, grid, out_path, overrides: dict | None = None) -> int:
    config = load_config(config_path, overrides)
    out_path = out_path or config.outputs.get("sweep")
    if not out_path:
        raise ConfigError("sweep needs --out")
    design, converged = _design_with_status(config)
    summary = sweep_horizons(config, grid)
    doc = summary.to_dict()
    doc.update(config=config.to_dict(), config_hash=config.config_hash(),
               g_pi=None if design is None else design.g_value,
               invariants_passed=all(p.get("invariants_passed", True) for p in summary.per_horizon))
    files.write_json(out_path, doc)
    log.info("slope %.4f (residual %.3g)", summary.slope, summary.residual)
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def _load_context(gaps_path) -> dict:
    doc = files.read_json(gaps_path)
    if isinstance(doc, dict) and "verify_context" in doc:
        doc = doc["verify_context"]
    if not isinstance(doc, dict) or "num_arms" not in doc:
        raise ConfigError(f"{gaps_path}: not a gaps/verify-context document")
    return doc


def cmd_verify(trace_path, gaps_path) -> int:
    ctx = _load_context(gaps_path)
    traces = files.read_trace_csv(trace_path)
    ok = True
    for k, tr in enumerate(traces):
        tr = RegretTrace(rows=tr.rows, meta={}, totals=None)
        report = verify_trace_invariants(tr, ctx)
        for line in report.lines():
            print(f"rep {k}: {line}")
        ok = ok and report.passed
    print("ALL PASS" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_INPUT


# -- argument parsing ----------------------------------------------------------------

def _grid(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated integers: {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="botw", description="Linear-bandit FTRL simulations.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("design", help="compute a G-optimal design for an arm set")
    p.add_argument("--arms", required=True)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run repetitions of one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--horizon", type=_positive_int)
    p.add_argument("--reps", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-trace")
    p.add_argument("--out-summary")
    p.add_argument("--out-gaps")

    p = sub.add_parser("sweep", help="run a horizon grid and fit the log-log slope")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", type=_grid, required=True)
    p.add_argument("--reps", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("verify", help="check trace inequalities")
    p.add_argument("--trace", required=True)
    p.add_argument("--gaps", required=True)
    return parser


def parse_cli(argv=None) -> CliConfig:
    args = build_parser().parse_args(argv)
    cfg = CliConfig(subcommand=args.subcommand, verbosity=args.verbose)
    if args.subcommand == "design":
        cfg.inputs = {"arms": args.arms}
        cfg.overrides = {"tol": args.tol}
        cfg.outputs = {"design": args.out}
    elif args.subcommand == "run":
        cfg.inputs = {"config": args.config}
        cfg.overrides = {"horizon_T": args.horizon, "repetitions": args.reps, "base_seed": args.seed}
        cfg.outputs = {"trace": args.out_trace, "summary": args.out_summary, "gaps": args.out_gaps}
    elif args.subcommand == "sweep":
        cfg.inputs = {"config": args.config, "grid": args.grid}
        cfg.overrides = {"repetitions": args.reps, "base_seed": args.seed}
        cfg.outputs = {"sweep": args.out}
    else:
        cfg.inputs = {"trace": args.trace, "gaps": args.gaps}
    return cfg


def dispatch(cfg: CliConfig) -> int:
    if cfg.subcommand == "design":
        return cmd_design(cfg.inputs["arms"], cfg.overrides["tol"], cfg.outputs["design"])
    if cfg.subcommand == "run":
        return cmd_run(cfg.inputs["config"], cfg.overrides, cfg.outputs["trace"],
                       cfg.outputs["summary"], cfg.outputs["gaps"])
    if cfg.subcommand == "sweep":
        return cmd_sweep(cfg.inputs["config"], cfg.inputs["grid"], cfg.outputs["sweep"],
                         cfg.overrides)
    return cmd_verify(cfg.inputs["trace"], cfg.inputs["gaps"])


def main(argv=None) -> int:
    cfg = parse_cli(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(cfg)
    except (BotwError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
