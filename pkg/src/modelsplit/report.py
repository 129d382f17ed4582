"""Summary tables and bar-chart data, computed only from persisted records."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

from .completion.experiment import estimates_from_curves, summarize_ratios
from .records import RecordError, ResultRecord, load_results

SUMMARY_COLUMNS = ("experiment", "partition", "procedure", "alpha", "n", "censored",
                   "Median", "Mean", "SD", "Min", "Max", "best")
PLOT_COLUMNS = ("experiment", "partition", "procedure", "alpha", "height", "error", "n", "best")


@dataclass
class SummaryRow:
    experiment: str
    partition: str
    procedure: str
    alpha: float
    stats: dict
    censored: int
    best: bool

    def cells(self) -> list:
        s = self.stats
        return [self.experiment, self.partition, self.procedure, self.alpha, s["n"], self.censored,
                s["median"], s["mean"], s["sd"], s["min"], s["max"], int(self.best)]


def _alphas(records: list[ResultRecord]) -> list[float]:
    found = set()
    for r in records:
        if r.kind == "meta" and "config" in r.payload:
            found.update(r.payload["config"].get("alphas", []))
        if r.kind == "estimate" and r.alpha is not None:
            found.add(r.alpha)
    return sorted(found)


def summarize(records: list[ResultRecord], alphas=None) -> list[SummaryRow]:
    by_exp: dict[str, list[ResultRecord]] = {}
    for r in records:
        by_exp.setdefault(r.experiment_id, []).append(r)
    rows = []
    for exp, recs in sorted(by_exp.items()):
        if not any(r.kind == "curve" for r in recs):
            continue
        al = list(alphas) if alphas else _alphas(recs)
        if not al:
            raise RecordError(f"experiment {exp}: no alpha list in its records; pass alphas explicitly")
        for est in estimates_from_curves(recs, al):
            best = est.estimate.best_procedure if est.estimate is not None else None
            for proc, ps in est.procedures.items():
                rows.append(SummaryRow(exp, est.partition, proc, est.alpha, summarize_ratios(ps.ratios.values()),
                                       len(ps.censored), proc == best))
    if not rows:
        raise RecordError("records hold no completed curves to summarize")
    return rows


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.3f}"
    return str(v)


def format_table(rows: list[SummaryRow]) -> str:
    cells = [list(SUMMARY_COLUMNS)] + [[_fmt(c) for c in r.cells()] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(SUMMARY_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells)


def summary_tsv(rows: list[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow(["" if c is None else c for c in r.cells()])
    return buf.getvalue()


def plot_data_tsv(rows: list[SummaryRow]) -> str:
    """Long format: one line per bar (partition x procedure) and series (alpha); error is the SD."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for r in rows:
        s = r.stats
        w.writerow([r.experiment, r.partition, r.procedure, r.alpha, "" if s["mean"] is None else s["mean"],
                    "" if s["sd"] is None else s["sd"], s["n"], int(r.best)])
    return buf.getvalue()


def write_report(results_dir, out_dir=None, alphas=None) -> dict[str, Path]:
    """Read every record under ``results_dir`` and write summary.txt, summary.tsv and plot_data.tsv."""
    rows = summarize(load_results(results_dir), alphas)
    out = Path(out_dir or results_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "summary.txt", "summary": out / "summary.tsv", "plot": out / "plot_data.tsv"}
    paths["table"].write_text(format_table(rows) + "\n")
    paths["summary"].write_text(summary_tsv(rows))
    paths["plot"].write_text(plot_data_tsv(rows))
    return paths
