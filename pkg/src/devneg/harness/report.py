"""Report rendering: fixed-width tables for people, sorted JSON for machines."""

from __future__ import annotations

import json
from typing import Any, Sequence

from .runner import AblationRow, Comparison, TrialReport

_COLUMNS = (  # (record key, width, precision or None for text, title)
    ("label", 26, None, "config"),
    ("success_rate", 8, 3, "success"),
    ("success_sd", 6, 3, "sd"),
    ("mean_rounds", 7, 2, "rounds"),
    ("mean_fairness", 8, 3, "fairness"),
    ("mean_leakage_bits", 9, 1, "leak_bits"),
    ("latency_ms", 10, 1, "latency_ms"),
    ("energy_j", 8, 3, "energy_j"),
    ("termination_share", 6, 3, "term"),
)


def _header() -> str:
    return " ".join(t.ljust(w) if p is None else t.rjust(w) for _, w, p, t in _COLUMNS)


def _row(r: TrialReport) -> str:
    d = r.record()
    return " ".join(str(d[k]).ljust(w) if p is None else f"{d[k]:>{w}.{p}f}" for k, w, p, _ in _COLUMNS)


def table(reports: Sequence[TrialReport]) -> str:
    lines = [_header()]
    lines += [_row(r) for r in reports]
    return "\n".join(lines) + "\n"


def breakdown_table(r: TrialReport) -> str:
    lines = [f"latency breakdown for {r.label} (mean ms per trial)"]
    for k, v in r.breakdown.items():
        lines.append(f"  {k:<12} {v:>10.1f}")
    lines.append(f"  {'total':<12} {r.latency_ms:>10.1f}")
    return "\n".join(lines) + "\n"


def checks_table(checks: dict[str, bool]) -> str:
    return "".join(f"  [{'PASS' if ok else 'FAIL'}] {name}\n" for name, ok in checks.items())


def ablation_table(full: TrialReport, rows: Sequence[AblationRow]) -> str:
    out = [table([full] + [r.report for r in rows]), "deltas vs full system (paired seeds)"]
    out.append(f"  {'component':<20} {'d_success':>10} {'d_latency_ms':>13}  expected")
    for r in rows:
        out.append(
            f"  {r.component:<20} {r.success_delta:>+10.3f} {r.latency_delta:>+13.1f}  "
            f"{r.expected} [{'PASS' if r.ok else 'FAIL'}]"
        )
    return "\n".join(out) + "\n"


def comparison_table(c: Comparison) -> str:
    return table(list(c.rows.values())) + "ordering checks\n" + checks_table(c.checks)


def records(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
