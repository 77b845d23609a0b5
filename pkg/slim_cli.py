#!/usr/bin/env python3

"""
Command-line entry point for lifecycle runs.

Subcommands:
    run           one training run, outputs written to --out
    evaluate      frozen test evaluation of a saved bank and policy
    ablate        matched-seed regime comparison for one scenario
    theory-check  Monte Carlo checks of the controller's guarantees

Exit codes: 0 success, 2 configuration or invariant error, 1 anything else.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from harness.utils.phase_colors import cli_printer, configure_console, format_table
from harness.utils.run_settings import ConfigError, check_run_environment, load_settings
from lifecycle_log import LogLeakageError
from lifecycle_manager import LifecycleError, Regime
from sim_environment import SCENARIOS, Split, world_from_scenario
from skill_auditor import AuditError
from skill_bank import SkillBankError, load_bank
from skill_router import RetrievalError
from slim_trainer import ABLATION_REGIMES, RUN_PRESETS, RunConfig, compare_ablations, evaluate, run
from surrogate_policy import PolicyError, load_policy
from theory_checks import DeltaSource, Lemma, LemmaCheckConfig, run_theory_checks

logger = logging.getLogger("slim")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

KNOWN_ERRORS = (ConfigError, SkillBankError, RetrievalError, AuditError, LifecycleError, PolicyError,
                LogLeakageError)

# flag name -> settings key
FLAG_KEYS = {
    "scenario": "scenario",
    "regime": "regime",
    "seed": "seed",
    "out": "out_dir",
    "steps": "total_steps",
    "audit_interval": "audit_interval",
    "workers": "workers",
    "preset": "lifecycle_preset",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slim", description="Skill lifecycle control runs")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--env-file", help=".env file loaded before reading SLIM_* variables")
    parser.add_argument("--quiet", action="store_true", help="suppress colored console output")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--scenario", choices=sorted(SCENARIOS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="threads for LOSO reruns")
        p.add_argument("--preset", choices=sorted(RUN_PRESETS), help="named setting; explicit keys win")

    p_run = sub.add_parser("run", help="train with lifecycle control")
    common(p_run)
    p_run.add_argument("--regime", choices=[r.value for r in Regime])
    p_run.add_argument("--steps", type=int)
    p_run.add_argument("--audit-interval", type=int)

    p_eval = sub.add_parser("evaluate", help="frozen test evaluation of a saved run")
    common(p_eval)
    p_eval.add_argument("--run-dir", required=True, help="directory holding bank_final.jsonl and policy_final.jsonl")

    p_ablate = sub.add_parser("ablate", help="compare regimes under matched seeds")
    common(p_ablate)
    p_ablate.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p_ablate.add_argument("--regimes", nargs="+", choices=[r.value for r in Regime],
                          default=[r.value for r in ABLATION_REGIMES])
    p_ablate.add_argument("--steps", type=int)
    p_ablate.add_argument("--audit-interval", type=int)
    p_ablate.add_argument("--resamples", type=int, default=2000)

    p_theory = sub.add_parser("theory-check", help="Monte Carlo guarantee checks")
    p_theory.add_argument("--lemma", action="append", choices=[l.value for l in Lemma],
                          help="check to run (repeatable, default all)")
    p_theory.add_argument("--trials", type=int, default=500)
    p_theory.add_argument("--seed", type=int, default=0)
    p_theory.add_argument("--delta-source", choices=[s.value for s in DeltaSource], default=DeltaSource.SIMULATOR.value,
                          help="real rollouts of a planted world, or synthetic paired draws")
    p_theory.add_argument("--out", help="output directory for theory_checks.csv")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < SLIM_* environment < flags."""
    values, sources = load_settings(args.config, args.env_file, known_keys=RunConfig.known_keys())
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = str(value)
            sources[key] = "flag"
    cfg = RunConfig.from_settings(values)
    check_run_environment(cfg.flat(), sources)
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    summary = run(cfg)
    cli_printer.print_success(f"test with skills {summary.test_with_skills:.4f}, "
                              f"without {summary.test_without_skills:.4f}, active {summary.active_count}")
    if cfg.out_dir:
        cli_printer.print_info(f"Outputs in {cfg.out_dir}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    bank_path = os.path.join(args.run_dir, "bank_final.jsonl")
    policy_path = os.path.join(args.run_dir, "policy_final.jsonl")
    for path in (bank_path, policy_path):
        if not os.path.exists(path):
            raise ConfigError(f"Missing run artifact: {path}")

    world = world_from_scenario(cfg.env, cfg.scenario, cfg.seed)
    bank = load_bank(bank_path)
    policy = load_policy(policy_path)
    with_skills = evaluate(world, policy, bank, Split.TEST, True, cfg.seed, cfg.retrieval)
    without = evaluate(world, policy, bank, Split.TEST, False, cfg.seed, cfg.retrieval)
    cli_printer.print(format_table(["split", "with_skills", "without_skills", "active"],
                                   [["test", with_skills, without, len(bank.active)]]))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    regimes = [Regime(r) for r in args.regimes]
    report = compare_ablations(cfg.scenario, args.seeds, cfg, regimes, args.resamples)
    if report.insufficient_replication:
        cli_printer.print_warning("Single seed: ordering reported without replication")
    cli_printer.print(format_table(["regime", "mean", "std", "final_active", "gap_low", "gap_high"], report.rows()))
    for a, b in report.ties:
        cli_printer.print_info(f"tie: {a} = {b}")
    return EXIT_OK


def cmd_theory(args: argparse.Namespace) -> int:
    base = LemmaCheckConfig(trials=args.trials, seed=args.seed, delta_source=args.delta_source)
    reports = run_theory_checks(args.lemma, base, args.out or "")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILURE


COMMANDS = {
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "theory-check": cmd_theory,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.quiet:
        configure_console(False)

    try:
        return COMMANDS[args.command](args)
    except KNOWN_ERRORS as e:
        cli_printer.print_error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        cli_printer.print_info("Interrupted")
        return EXIT_FAILURE
    except Exception as e:
        logger.exception("Unexpected failure")
        cli_printer.print_error(f"Error: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
