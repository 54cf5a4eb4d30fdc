"""Command-line entry point: ``stab-synth run | verify | simulate | schema``."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import structlog

from stabsynth import exports, matops, sde
from stabsynth.config import Settings, get_settings
from stabsynth.exceptions import NonPositiveSolution, SingularGenerator, StabSynthError
from stabsynth.schemas import RunConfig, config_schema, load_config, validate_config
from stabsynth.stabilize_adp import stabilize_model_free
from stabsynth.stabilize_exact import StabilizationResult, resolve_alpha0, stabilize
from stabsynth.sysmodel import closed_loop_generator, is_ms_stabilizer, shift, solve_lyapunov

logger = structlog.get_logger(__name__)


def configure_logging(settings: Settings) -> None:
    """Configure structured logging to stderr."""
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, settings.log_level),
        force=True,
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer() if settings.log_format == "json" else structlog.dev.ConsoleRenderer(),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stab-synth",
        description="Mean-square stabilizing gains for stochastic linear systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run the discount schedule")
    run.add_argument("config", type=Path)
    run.add_argument("--mode", choices=["model_based", "model_free", "model_free_oracle"])
    run.add_argument("--alpha0", type=float, help="Initial discount (default: from config)")
    run.add_argument("--seed", type=int, help="Master seed for simulation")
    run.add_argument("--save-batches", action="store_true", help="Keep trajectory batches")
    run.add_argument("--output-dir", type=Path)
    run.add_argument("--polish", action="store_true", help="Return the undiscounted optimal gain")

    verify = sub.add_parser("verify", help="Check whether a gain is a mean-square stabilizer")
    verify.add_argument("config", type=Path)
    verify.add_argument("gain_file", type=Path)
    verify.add_argument("--alpha", type=float, default=0.0, help="Discount shift to test at")

    simulate = sub.add_parser("simulate", help="Write the mean closed-loop state trajectory")
    simulate.add_argument("config", type=Path)
    simulate.add_argument("--gain", type=Path, help="Gain file (default: zero gain at alpha0)")
    simulate.add_argument("--horizon", type=float, default=5.0)
    simulate.add_argument("--output-dir", type=Path)

    sub.add_parser("schema", help="Print the JSON schema of run configurations")
    return parser


def apply_overrides(config: RunConfig, args: argparse.Namespace, settings: Settings) -> RunConfig:
    """Merge CLI flags, then environment, over the configuration file."""
    update = {}
    if getattr(args, "mode", None):
        update["mode"] = args.mode
    if getattr(args, "alpha0", None) is not None:
        update["alpha0"] = args.alpha0
    seed = args.seed if getattr(args, "seed", None) is not None else settings.seed
    if seed is not None:
        update["sim"] = config.sim.model_copy(update={"master_seed": seed})
    if getattr(args, "polish", False):
        update["pi"] = config.pi.model_copy(update={"polish": True})
    output_dir = getattr(args, "output_dir", None) or settings.output_dir
    if output_dir is not None:
        update["output_dir"] = str(output_dir)
    merged = config.model_copy(update=update)
    return validate_config(merged.model_dump())


def output_path(config: RunConfig) -> Path:
    return Path(config.output_dir) if config.output_dir else Path("runs") / config.name


def execute(config: RunConfig, save_batches: bool = False) -> StabilizationResult:
    plant = config.to_system()
    spec = config.to_cost_spec()
    alpha0 = None if config.alpha0 == "auto" else float(config.alpha0)
    if config.mode == "model_based":
        return stabilize(plant, spec, config.pi, alpha0=alpha0, margin=config.alpha_margin)
    save_dir = output_path(config) / "batches" if save_batches else None
    return stabilize_model_free(
        plant,
        spec,
        config.sim,
        config.noise,
        config.pi,
        alpha0=alpha0,
        data_source="oracle" if config.mode == "model_free_oracle" else "simulate",
        initial_state=config.initial_state,
        margin=config.alpha_margin,
        save_dir=save_dir,
        l=config.sub_batches(),
    )


def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    config = apply_overrides(load_config(args.config), args, settings)
    out = output_path(config)
    logger.info("run_start", config=str(args.config), mode=config.mode, output_dir=str(out))
    result = execute(config, save_batches=args.save_batches)
    exports.write_schedule_csv(result.schedule, out / "schedule.csv")
    exports.write_summary_json(exports.result_summary(result, config.name, config.mode), out / "result.json")
    exports.write_gain(result.gain, out / "gain.json")
    logger.info("run_complete", iterations=len(result.schedule), gain=result.gain.tolist())
    return 0


def verify_report(config: RunConfig, gain: np.ndarray, alpha: float = 0.0) -> dict:
    plant = shift(config.to_system(), alpha)
    gain = plant.check_gain(gain)
    report = {
        "alpha": alpha,
        "gain": gain.tolist(),
        "stabilizing": is_ms_stabilizer(plant, gain),
        "spectral_abscissa": matops.spectral_abscissa(closed_loop_generator(plant, gain)),
        "lyapunov_eigenvalues": None,
    }
    try:
        p = solve_lyapunov(plant, gain, np.eye(plant.n), require_pd=False)
        report["lyapunov_eigenvalues"] = matops.eig_sym(p).tolist()
    except (SingularGenerator, NonPositiveSolution):
        pass
    return report


def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config)
    report = verify_report(config, exports.load_gain(args.gain_file), args.alpha)
    print(json.dumps(report, indent=2))
    return 0


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    config = apply_overrides(load_config(args.config), args, settings)
    plant = config.to_system()
    if args.gain is not None:
        gain = plant.check_gain(exports.load_gain(args.gain))
        alpha = 0.0
    else:
        gain = plant.zero_gain()
        alpha = resolve_alpha0(plant, None if config.alpha0 == "auto" else float(config.alpha0), config.alpha_margin)
    sampler = sde.sampler_from_config(config.initial_state, plant.n)
    times, means = sde.mean_trajectory(
        shift(plant, alpha), gain, sampler, config.sim, args.horizon, seed=config.sim.master_seed
    )
    path = exports.write_trajectory_csv(times, means, output_path(config) / "trajectory.csv")
    logger.info("trajectory_written", path=str(path), alpha=alpha)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
    except ValueError as exc:
        print(f"invalid environment settings: {exc}", file=sys.stderr)
        return 2
    configure_logging(settings)

    if args.command == "schema":
        print(config_schema())
        return 0
    handlers = {"run": cmd_run, "verify": cmd_verify, "simulate": cmd_simulate}
    try:
        return handlers[args.command](args, settings)
    except StabSynthError as exc:
        logger.error("command_failed", command=args.command, error=str(exc), error_type=type(exc).__name__)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
