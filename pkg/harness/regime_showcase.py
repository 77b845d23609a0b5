#!/usr/bin/env python3

"""
Regime showcase: active-set dynamics and the ablation table.

Runs the boundary regimes side by side on one seed and prints how the active
set and validation success move per audit cycle, then ranks the ablation
regimes under matched seeds.
"""

import argparse
from dataclasses import replace
from typing import Dict, List, Sequence

from harness.utils.phase_colors import cli_printer, configure_console, format_table, print_separator
from lifecycle_manager import Regime
from slim_trainer import ABLATION_REGIMES, REGIME_LABELS, AblationReport, RunConfig, RunSummary, \
    compare_ablations, run

DYNAMICS_REGIMES = (Regime.SLIM, Regime.ACCUMULATE_ONLY, Regime.ELIMINATE_ONLY)


def regime_dynamics(base: RunConfig, regimes: Sequence[Regime] = DYNAMICS_REGIMES) -> Dict[str, RunSummary]:
    """One run per regime with everything else matched."""
    out = {}
    for regime in regimes:
        cfg = replace(base, out_dir="", lifecycle=replace(base.lifecycle, regime=Regime(regime)))
        out[Regime(regime).value] = run(cfg)
    return out


def dynamics_rows(summaries: Dict[str, RunSummary]) -> List[List[object]]:
    """step, then (active, with-skill success) per regime."""
    steps = None
    for summary in summaries.values():
        steps = [row.step for row in summary.metrics]
        break
    rows = []
    for i, step in enumerate(steps or []):
        row: List[object] = [step]
        for summary in summaries.values():
            metric = summary.metrics[i]
            row.extend([metric.active_count, metric.with_skill_success])
        rows.append(row)
    return rows


def print_dynamics(summaries: Dict[str, RunSummary]):
    headers = ["step"]
    for key in summaries:
        label = REGIME_LABELS.get(Regime(key), key)
        headers.extend([f"{label} active", f"{label} success"])
    print_separator("=")
    cli_printer.print_info("Active-set dynamics")
    cli_printer.print(format_table(headers, dynamics_rows(summaries)))


def print_ablation(report: AblationReport):
    print_separator("=")
    cli_printer.print_info(f"Ablation on {report.scenario}, seeds {report.seeds}")
    if report.insufficient_replication:
        cli_printer.print_warning("Single seed: no replication")
    cli_printer.print(format_table(["regime", "mean", "std", "final_active", "gap_low", "gap_high"], report.rows()))
    print_separator("=")


def main():
    parser = argparse.ArgumentParser(description="Regime dynamics and ablation table")
    parser.add_argument("--scenario", default="reference")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--steps", type=int, default=120)
    args = parser.parse_args()

    base = RunConfig(scenario=args.scenario, seed=args.seed, total_steps=args.steps)
    configure_console(False)
    summaries = regime_dynamics(base)
    report = compare_ablations(args.scenario, args.seeds, base, ABLATION_REGIMES)
    configure_console(True)

    print_dynamics(summaries)
    print_ablation(report)


if __name__ == "__main__":
    main()
