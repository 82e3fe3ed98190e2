"""Run reports, comparison tables, and plot-ready curve files."""

import csv
import json
import os
from dataclasses import asdict

from ..errors import DataFormatError
from ..fedsim import read_round_log
from .runner import REPORT_SCHEMA_VERSION, RunReport

# Architectures acknowledged in the comparison matrix but not implemented here.
UNIMPLEMENTED_ROWS = ("LSTM", "Transformer")


def write_report(report: RunReport, out_dir):
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as f:
        json.dump(asdict(report), f, indent=2, sort_keys=True)
    return path


def load_report(run_dir) -> dict:
    path = os.path.join(run_dir, "report.json")
    with open(path) as f:
        report = json.load(f)
    if report.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise DataFormatError(f"{path}: unsupported report schema")
    return report


def recomputed_means(report: dict):
    """Recompute mean/std summaries from per-seed values (audit helper)."""
    import numpy as np

    accs = np.asarray([r["hospital_accs"] for r in report["per_seed"]])
    avgs = np.asarray([r["avg"] for r in report["per_seed"]])
    return {
        "mean_hospital_accs": accs.mean(axis=0).tolist(),
        "std_hospital_accs": accs.std(axis=0).tolist(),
        "mean_avg": float(avgs.mean()),
        "std_avg": float(avgs.std()),
        "upload_total": int(sum(r["uploads"] for r in report["per_seed"])),
    }


def comparison_table(reports, style="hospitals") -> str:
    """Markdown table over runs: per-hospital means plus the row average."""
    n_h = max(len(r["mean_hospital_accs"]) for r in reports)
    header = ["Model"] + [f"Hos{i + 1}" for i in range(n_h)] + ["Avg", "Uploads"]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(["---"] * len(header)) + "|"]
    for r in reports:
        cells = [r["variant"]]
        means = r["mean_hospital_accs"]
        for i in range(n_h):
            cells.append(f"{100 * means[i]:.2f}" if i < len(means) else "-")
        cells.append(f"{100 * r['mean_avg']:.2f}")
        cells.append(str(r["upload_total"]))
        lines.append("| " + " | ".join(cells) + " |")
    if style == "shots":
        for name in UNIMPLEMENTED_ROWS:
            lines.append("| " + " | ".join([name] + ["n/a"] * (n_h + 2)) + " |")
    return "\n".join(lines) + "\n"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def write_curves(run_dirs, out_dir):
    """Emit plot-ready CSVs from run artifacts.

    fusion_rounds.csv   per-hospital accuracy vs fusion round (plus the
                        global-model series), from the round logs
    finetune_steps.csv  meta-test accuracy vs fine-tuning steps
    training_steps.csv  meta-test accuracy vs local training iteration
    Columns are (x, y, seed, series, variant).
    """
    os.makedirs(out_dir, exist_ok=True)
    fusion_rows, finetune_rows, training_rows = [], [], []
    for run_dir in run_dirs:
        report = load_report(run_dir)
        variant = report["variant"]
        steps = report["config"]["run"]["finetune_curve_steps"]
        for seed_result in report["per_seed"]:
            seed = seed_result["seed"]
            if seed_result.get("rounds_log"):
                records = read_round_log(os.path.join(run_dir, seed_result["rounds_log"]))
                for rec in records:
                    for h, acc in enumerate(rec.client_accs):
                        if acc is not None:
                            fusion_rows.append([rec.round, acc, seed, f"hos{h + 1}", variant])
                    fusion_rows.append([rec.round, rec.global_acc_new, seed, "global", variant])
            if seed_result.get("finetune_curve"):
                for h, curve in enumerate(seed_result["finetune_curve"]):
                    for x, y in zip(steps, curve):
                        finetune_rows.append([x, y, seed, f"hos{h + 1}", variant])
            if seed_result.get("train_trace"):
                for h, trace in enumerate(seed_result["train_trace"]):
                    for x, y in trace:
                        training_rows.append([x, y, seed, f"hos{h + 1}", variant])
    header = ["x", "y", "seed", "series", "variant"]
    written = []
    for name, rows in [("fusion_rounds.csv", fusion_rows),
                       ("finetune_steps.csv", finetune_rows),
                       ("training_steps.csv", training_rows)]:
        if rows:
            path = os.path.join(out_dir, name)
            _write_csv(path, header, rows)
            written.append(path)
    return written
