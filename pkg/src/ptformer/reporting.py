"""Deterministic result emission: results.csv, curves.csv, summary.md.

A table row's payload is either a RunResult or an exception (e.g. the
dense-attention capacity guard); failed rows are reported, not dropped.
"""

from __future__ import annotations

from pathlib import Path

from .training import RunResult

RESULTS_HEADER = "variant,seed,status,test_accuracy,best_val_accuracy,best_epoch,epochs_run"
CURVES_HEADER = "variant,seed,epoch,train_loss,train_accuracy,val_accuracy"

Row = tuple[str, "RunResult | Exception"]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_results_csv(path, rows: list[Row]) -> None:
    lines = [RESULTS_HEADER]
    for variant, result in rows:
        if isinstance(result, Exception):
            lines.append(f"{variant},,capacity_error,,,,")
            continue
        for r in result.per_seed:
            lines.append(
                f"{variant},{r.seed},ok,{_fmt(r.test_accuracy)},{_fmt(r.best_val_accuracy)},"
                f"{r.best_epoch},{r.epochs_run}"
            )
        for seed, _ in result.failed_seeds:
            lines.append(f"{variant},{seed},diverged,,,,")
    Path(path).write_text("\n".join(lines) + "\n")


def write_curves_csv(path, rows: list[Row]) -> None:
    lines = [CURVES_HEADER]
    for variant, result in rows:
        if isinstance(result, Exception):
            continue
        for r in result.per_seed:
            for epoch, (loss, tacc, vacc) in enumerate(
                zip(r.train_losses, r.train_accuracies, r.val_accuracies), start=1
            ):
                lines.append(f"{variant},{r.seed},{epoch},{_fmt(loss)},{_fmt(tacc)},{_fmt(vacc)}")
    Path(path).write_text("\n".join(lines) + "\n")


def format_mean_std(result: "RunResult | Exception") -> str:
    if isinstance(result, Exception):
        return "capacity error"
    if not result.per_seed:
        return "n/a"
    return f"{100 * result.mean:.2f} ± {100 * result.std:.2f}"


def write_summary_md(path, title: str, rows: list[Row]) -> None:
    lines = [f"# {title}", "", "| variant | test accuracy (%) | seeds | failed |", "|---|---|---|---|"]
    for variant, result in rows:
        if isinstance(result, Exception):
            lines.append(f"| {variant} | capacity error | 0 | - |")
        else:
            lines.append(
                f"| {variant} | {format_mean_std(result)} | {len(result.per_seed)} | {len(result.failed_seeds)} |"
            )
    Path(path).write_text("\n".join(lines) + "\n")
