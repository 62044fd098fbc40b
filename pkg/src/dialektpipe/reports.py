"""Corpus statistics and report rendering (aligned text and CSV)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import Decimal
from typing import Dict, List, Optional, Sequence

from .errors import DataError
from .model import DialectRegion, Manifest, MetricReport, MetricRow

DISPLAY = {
    DialectRegion.CENTRAL_CH: "Central CH",
    DialectRegion.EASTERN_CH: "Eastern CH",
}

# evaluation tables list the Swiss regions alphabetically, then German
EVAL_ORDER = (
    DialectRegion.BASEL,
    DialectRegion.BERN,
    DialectRegion.CENTRAL_CH,
    DialectRegion.EASTERN_CH,
    DialectRegion.GRISONS,
    DialectRegion.VALAIS,
    DialectRegion.ZURICH,
    DialectRegion.GERMAN,
)


def display_name(d: Optional[DialectRegion]) -> str:
    if d is None:
        return "Total"
    return DISPLAY.get(d, d.value)


@dataclass(frozen=True)
class StatsRow:
    dialect: Optional[DialectRegion]
    samples: int
    duration_s: Decimal
    tokens: int
    pct: float

    @property
    def length_h(self) -> float:
        return float(self.duration_s / 3600)

    @property
    def label(self) -> str:
        return display_name(self.dialect)


@dataclass(frozen=True)
class CorpusStats:
    rows: tuple  # one per DialectRegion, in enum order
    total: StatsRow

    def row(self, dialect: DialectRegion) -> StatsRow:
        for r in self.rows:
            if r.dialect == dialect:
                return r
        raise KeyError(dialect)


def corpus_stats(manifest: Manifest) -> CorpusStats:
    """Per-dialect sample count, hours, share of duration and whitespace tokens."""
    missing = [s.segment_id for s in manifest if s.dialect is None]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise DataError(f"{len(missing)} record(s) have no dialect: {shown}")
    samples: Dict[DialectRegion, int] = {d: 0 for d in DialectRegion}
    dur: Dict[DialectRegion, Decimal] = {d: Decimal(0) for d in DialectRegion}
    toks: Dict[DialectRegion, int] = {d: 0 for d in DialectRegion}
    for s in manifest:
        samples[s.dialect] += 1
        dur[s.dialect] += s.duration_s
        toks[s.dialect] += len((s.transcript or "").split())
    total_dur = sum(dur.values(), Decimal(0))

    def pct(x: Decimal) -> float:
        return float(x / total_dur * 100) if total_dur else 0.0

    rows = tuple(StatsRow(d, samples[d], dur[d], toks[d], pct(dur[d])) for d in DialectRegion)
    total = StatsRow(None, sum(samples.values()), total_dur, sum(toks.values()), 100.0 if total_dur else 0.0)
    return CorpusStats(rows, total)


def _align(header: Sequence[str], body: Sequence[Sequence[str]], left: int = 1) -> str:
    """Left-align the first ``left`` columns, right-align the rest, two-space gutters."""
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    out = []
    for r in [header, *body]:
        cells = [c.ljust(w) if i < left else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
        out.append("  ".join(cells).rstrip())
    return "\n".join(out) + "\n"


def stats_cells(row: StatsRow, units: str = "raw") -> List[str]:
    if units == "scaled":
        # thousands of samples, hours, percent, millions of tokens
        return [
            row.label,
            f"{row.samples / 1000:.0f}",
            f"{row.length_h:.2f}",
            f"{row.pct:.2f}%",
            f"{row.tokens / 1e6:.2f}",
        ]
    if units != "raw":
        raise DataError(f"unknown units {units!r}")
    return [row.label, str(row.samples), f"{row.length_h:.4f}", f"{row.pct:.2f}%", str(row.tokens)]


def render_stats_text(stats: CorpusStats, units: str = "raw") -> str:
    if units == "scaled":
        header = ["Region", "Samples (K)", "Length (h)", "% of Dataset", "Tokens (M)"]
    else:
        header = ["Region", "Samples", "Length (h)", "% of Dataset", "Tokens"]
    body = [stats_cells(r, units) for r in stats.rows] + [stats_cells(stats.total, units)]
    return _align(header, body)


def render_stats_csv(stats: CorpusStats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region", "samples", "duration_s", "length_h", "pct", "tokens"])
    for r in list(stats.rows) + [stats.total]:
        w.writerow([r.label, r.samples, f"{r.duration_s:.3f}", repr(r.length_h), repr(r.pct), r.tokens])
    return buf.getvalue()


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.3f}"


def ordered_rows(report: MetricReport) -> List[MetricRow]:
    """Dialect-major order: every model for one dialect, German, then Total."""
    out = []
    for d in list(EVAL_ORDER) + [None]:
        for tag in report.model_tags:
            try:
                out.append(report.row(d, tag))
            except KeyError:
                pass
    return out


def render_metric_text(report: MetricReport) -> str:
    header = ["Dialect", "Model", "WER", "BLEU", "SIM", "DID", "Failed"]
    body, last = [], object()
    for r in ordered_rows(report):
        label = display_name(r.dialect) if r.dialect != last else ""
        last = r.dialect
        body.append([label, r.model_tag, _fmt(r.wer), _fmt(r.bleu), _fmt(r.sim), _fmt(r.did),
                     f"{r.items_failed}/{r.items_total}"])
    title = f"Automated evaluation ({report.scenario})\n" if report.scenario else ""
    return title + _align(header, body, left=2)


def render_metric_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "dialect", "model", "wer", "bleu", "sim", "did",
                "items_total", "items_scored", "items_failed"])
    for r in ordered_rows(report):
        w.writerow([report.scenario, r.label, r.model_tag,
                    *("" if v is None else repr(v) for v in (r.wer, r.bleu, r.sim, r.did)),
                    r.items_total, r.items_scored, r.items_failed])
    return buf.getvalue()


def _mos_rows(report):
    rows = list(report.rows)
    scen_order = {"short": 0, "long": 1}
    rows.sort(key=lambda r: (scen_order.get(r.scenario, 2), r.scenario, r.model_tag != report.baseline, r.model_tag))
    return rows


def render_mos_text(report) -> str:
    """Human evaluation table: one row per scenario x model, cells ``mean±std`` plus markers."""
    from .evaluation import RATING_FIELDS

    header = ["Eval Type", "Model", "SMOS", "CMOS", "Intelligibility"]
    body, last = [], None
    for r in _mos_rows(report):
        label = r.scenario.capitalize() if r.scenario != last else ""
        last = r.scenario
        body.append([label, r.model_tag, *(r.render(f) for f in RATING_FIELDS)])
    notes = "* differs from the baseline; † differs from the other non-baseline model(s) (alpha 0.05)\n"
    return _align(header, body, left=2) + notes


def render_mos_csv(report) -> str:
    from .evaluation import RATING_FIELDS

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "model", "metric", "mean", "std", "n", "vs_baseline", "vs_peers", "rendered"])
    for r in _mos_rows(report):
        for f in RATING_FIELDS:
            agg = r.scores.get(f)
            w.writerow([r.scenario, r.model_tag, f,
                        "" if agg is None else repr(agg.mean), "" if agg is None else repr(agg.std),
                        0 if agg is None else agg.n,
                        int(r.vs_baseline.get(f, False)), int(r.vs_peers.get(f, False)), r.render(f)])
    return buf.getvalue()
