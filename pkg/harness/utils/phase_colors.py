#!/usr/bin/env python3

"""
Color utility system for lifecycle run output.
Provides colored printing functions for each training phase and cycle highlighting.
"""

from typing import Optional

_console_enabled = True


def configure_console(enabled: bool):
    """Turn operator-facing console output on or off (tests and sweeps run quiet)."""
    global _console_enabled
    _console_enabled = bool(enabled)


def console_enabled() -> bool:
    return _console_enabled


# ANSI color codes
class Colors:
    # Reset
    RESET = '\033[0m'

    # Phase-specific colors
    TRAINER = '\033[96m'      # Bright Cyan
    AUDIT = '\033[95m'        # Bright Magenta
    LIFECYCLE = '\033[92m'    # Bright Green
    THEORY = '\033[94m'       # Blue
    CLI = '\033[93m'          # Bright Yellow

    SUCCESS = '\033[92m'
    ERROR = '\033[91m'
    WARNING = '\033[93m'
    INFO = '\033[97m'

    BOLD = '\033[1m'
    DIM = '\033[2m'

    CYCLE_HIGHLIGHT = '\033[1;97;46m'  # Bold White on Cyan background
    CYCLE_BORDER = '\033[1;46m'


class PhasePrinter:
    """Colored printing utility for one training phase."""

    def __init__(self, phase_name: str, color: str, icon: str = "*"):
        self.phase_name = phase_name
        self.color = color
        self.icon = icon
        self.prefix = f"{color}{icon} {phase_name}:{Colors.RESET}"

    def __call__(self, message: str, style: Optional[str] = None):
        self.print(message, style)

    def print(self, message: str, style: Optional[str] = None):
        """Print a colored message from this phase."""
        if not _console_enabled:
            return
        if style:
            message = f"{style}{message}{Colors.RESET}"
        print(f"{self.prefix} {message}")

    def print_task(self, message: str):
        """Print a highlighted cycle message."""
        if not _console_enabled:
            return
        cycle_prefix = f"{Colors.CYCLE_HIGHLIGHT} CYCLE {Colors.RESET}"
        print(f"{cycle_prefix} {self.prefix} {Colors.BOLD}{message}{Colors.RESET}")

    def print_success(self, message: str):
        self.print(f"✅ {message}", Colors.SUCCESS)

    def print_error(self, message: str):
        self.print(f"❌ {message}", Colors.ERROR)

    def print_warning(self, message: str):
        self.print(f"⚠️ {message}", Colors.WARNING)

    def print_info(self, message: str):
        self.print(f"ℹ️ {message}", Colors.INFO)


trainer_printer = PhasePrinter("Trainer", Colors.TRAINER, "🏋️")
audit_printer = PhasePrinter("Audit", Colors.AUDIT, "🔎")
lifecycle_printer = PhasePrinter("Lifecycle", Colors.LIFECYCLE, "🌱")
theory_printer = PhasePrinter("Theory", Colors.THEORY, "📐")
cli_printer = PhasePrinter("slim", Colors.CLI, "🎯")


def print_separator(char: str = "─", length: int = 70, color: str = Colors.DIM):
    if _console_enabled:
        print(f"{color}{char * length}{Colors.RESET}")


def print_run_banner(scenario: str, regime: str, seed: int):
    """Print the colored run banner."""
    if not _console_enabled:
        return
    border = f"{Colors.CYCLE_BORDER}{'=' * 60}{Colors.RESET}"
    print()
    print(border)
    print(f"{Colors.BOLD}{Colors.CLI}  SKILL LIFECYCLE RUN{Colors.RESET}")
    print(f"  {Colors.BOLD}scenario:{Colors.RESET} {scenario}   "
          f"{Colors.BOLD}regime:{Colors.RESET} {regime}   "
          f"{Colors.BOLD}seed:{Colors.RESET} {seed}")
    print(border)


def format_table(headers, rows) -> str:
    """Plain fixed-width table for reports."""
    columns = [list(map(str, headers))] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in columns) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(columns):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
