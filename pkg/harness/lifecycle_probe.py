#!/usr/bin/env python3

"""
Lifecycle probe report.

Labels every audited skill of a finished run as retained, retired or
internalized. The label is read off the final records and policy only; it
never feeds back into training.
"""

import argparse
import csv
import logging
import os
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

from harness.utils.phase_colors import configure_console, format_table, lifecycle_printer, print_separator
from lifecycle_manager import LifecycleConfig
from skill_auditor import MecRecord
from slim_trainer import RunConfig, RunSummary, run
from surrogate_policy import internalization_probe

logger = logging.getLogger(__name__)

PROBE_FIELDS = ["skill_id", "tier", "state", "label", "exposure", "mec_smoothed", "perf_with", "perf_without"]


@dataclass(frozen=True)
class ProbeRow:
    skill_id: str
    tier: str
    state: str
    label: str
    exposure: int
    mec_smoothed: Optional[float]
    perf_with: Optional[float]
    perf_without: Optional[float]

    @property
    def drop(self) -> Optional[float]:
        """Validation drop when the skill is disabled."""
        if self.perf_with is None or self.perf_without is None:
            return None
        return self.perf_with - self.perf_without

    def as_row(self) -> List[object]:
        return [self.skill_id, self.tier, self.state, self.label, self.exposure,
                "" if self.mec_smoothed is None else self.mec_smoothed,
                "" if self.perf_with is None else self.perf_with,
                "" if self.perf_without is None else self.perf_without]


def looks_internalized(record: MecRecord, cfg: LifecycleConfig) -> bool:
    """Frequently selected, near-zero contribution and a small disable drop."""
    if record.mec_smoothed is None or record.exposure < cfg.min_exposure:
        return False
    if record.mec_smoothed >= cfg.tau_keep:
        return False
    if record.last_perf_with is not None and record.last_perf_without is not None:
        return record.last_perf_with - record.last_perf_without < cfg.tau_keep
    return True


def probe_labels(summary: RunSummary, cfg: RunConfig) -> List[ProbeRow]:
    """One row per audited skill, sorted by id."""
    bank, policy = summary.final_bank, summary.final_policy
    if bank is None or policy is None:
        raise ValueError("Run summary carries no final bank or policy")

    rows = []
    for skill_id in sorted(summary.records):
        record = summary.records[skill_id]
        if record.audits_seen == 0 or skill_id not in bank:
            continue
        skill = bank.get(skill_id)
        state = bank.state_of(skill_id)
        if looks_internalized(record, cfg.lifecycle) and internalization_probe(policy, skill, cfg.probe_threshold):
            label = "internalized"
        elif state == "retired":
            label = "retired"
        else:
            label = "retained"
        rows.append(ProbeRow(skill_id, skill.tier.value, state, label, record.exposure, record.mec_smoothed,
                             record.last_perf_with, record.last_perf_without))
    return rows


def coexistence(rows: Sequence[ProbeRow], tau_keep: float) -> bool:
    """An internalized skill was retired while another skill is retained on its contribution."""
    internalized_retired = any(r.label == "internalized" and r.state == "retired" for r in rows)
    retained_useful = any(r.label == "retained" and r.state == "active" and r.mec_smoothed is not None
                          and r.mec_smoothed >= tau_keep for r in rows)
    return internalized_retired and retained_useful


def capacity_coupling(summary: RunSummary, skill_id: str, lifecycle: LifecycleConfig, fits: bool) -> bool:
    """
    Whether a skill's final standing matches the spare capacity of the policy.

    A concept that fits must end with its skill retired or smoothed below
    tau_retire; a concept that does not fit must leave the skill active and
    retained at tau_keep or above.
    """
    record = summary.records.get(skill_id)
    if summary.final_bank is None or record is None or record.mec_smoothed is None:
        return False
    state = summary.final_bank.state_of(skill_id)
    if fits:
        return state == "retired" or record.mec_smoothed < lifecycle.tau_retire
    return state == "active" and record.mec_smoothed >= lifecycle.tau_keep


def write_probe_csv(rows: Sequence[ProbeRow], path: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PROBE_FIELDS)
        for row in rows:
            writer.writerow(row.as_row())


def print_probe_report(rows: Sequence[ProbeRow]):
    print_separator("=")
    lifecycle_printer.print_info(f"Lifecycle probe: {len(rows)} audited skill(s)")
    lifecycle_printer.print(format_table(PROBE_FIELDS, [r.as_row() for r in rows]))
    counts = {label: sum(1 for r in rows if r.label == label) for label in ("retained", "retired", "internalized")}
    lifecycle_printer.print_success(", ".join(f"{k}={v}" for k, v in counts.items()))
    print_separator("=")


def coexistence_rate(seeds: Sequence[int], base: RunConfig) -> float:
    """Fraction of seeds whose final state shows internalization and retention side by side."""
    hits = 0
    for seed in seeds:
        cfg = replace(base, seed=seed)
        rows = probe_labels(run(cfg), cfg)
        if coexistence(rows, cfg.lifecycle.tau_keep):
            hits += 1
    return hits / len(seeds) if seeds else 0.0


def main():
    parser = argparse.ArgumentParser(description="Lifecycle probe over finished runs")
    parser.add_argument("--scenario", default="capacity_limited")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--out", default="", help="write lifecycle_probe.csv for the first seed here")
    args = parser.parse_args()

    base = RunConfig(scenario=args.scenario)
    configure_console(False)
    first = replace(base, seed=args.seeds[0])
    rows = probe_labels(run(first), first)
    configure_console(True)
    print_probe_report(rows)
    if args.out:
        write_probe_csv(rows, os.path.join(args.out, "lifecycle_probe.csv"))

    if len(args.seeds) > 1:
        configure_console(False)
        rate = coexistence_rate(args.seeds, base)
        configure_console(True)
        lifecycle_printer.print_success(f"Coexistence in {rate:.0%} of {len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
