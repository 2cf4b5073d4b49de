"""CSV, JSON and SVG output.

Curve CSVs share one schema::

    method,spec_kind,spec_param,n,x,value

preceded by ``#`` metadata lines. Rows are emitted in a fixed order so
reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from . import __version__
from .detection import PRCurve
from .evaluation import RecallReport, RepeatabilityResult

CURVE_COLUMNS = ("method", "spec_kind", "spec_param", "n", "x", "value")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict | None = None) -> None:
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_csv(path) -> tuple[dict[str, str], list[dict[str, str]]]:
    meta, lines = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
        else:
            lines.append(line)
    return meta, list(csv.DictReader(lines))


def write_json(path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def base_meta(**extra) -> dict:
    meta = OrderedDict(tool=f"propeval {__version__}")
    meta.update(extra)
    return meta


def grid_desc(thresholds) -> str:
    t = list(thresholds)
    step = (t[-1] - t[0]) / (len(t) - 1) if len(t) > 1 else 0.0
    return f"[{t[0]:g}, {t[-1]:g}] step {step:g} ({len(t)} points)"


# ---- recall ------------------------------------------------------------------


def recall_rows(report: RecallReport) -> dict[str, list[tuple]]:
    m = report.method
    curves, auc, r50, r80 = [], [], [], []
    for e in report.entries:
        for t, r in zip(e.curve.thresholds.tolist(), e.curve.recall.tolist()):
            curves.append((m, "none", "", e.n, t, r))
        auc.append((m, "none", "", e.n, e.avg_proposals, e.auc))
        r50.append((m, "none", "", e.n, e.avg_proposals, e.recall_50))
        r80.append((m, "none", "", e.n, e.avg_proposals, e.recall_80))
    return {
        "recall_vs_iou.csv": curves,
        "recall_auc_vs_n.csv": auc,
        "recall_50_vs_n.csv": r50,
        "recall_80_vs_n.csv": r80,
    }


def recall_summary(report: RecallReport) -> dict:
    return {
        "method": report.method,
        "num_images": report.num_images,
        "num_annotations": report.num_annotations,
        "counts": {
            str(e.n): {
                "auc": e.auc,
                "recall_0.5": e.recall_50,
                "recall_0.8": e.recall_80,
                "avg_proposals": e.avg_proposals,
            }
            for e in report.entries
        },
    }


# ---- repeatability -----------------------------------------------------------


def _spec_x(result: RepeatabilityResult) -> str:
    return result.spec.param_label()


def repeatability_rows(method: str, n: int, results: Sequence[RepeatabilityResult]) -> dict[str, list[tuple]]:
    auc, bins, curves = [], [], []
    for r in results:
        kind, label = r.spec.kind, r.spec.param_label()
        auc.append((method, kind, label, n, _spec_x(r), r.auc))
        for k, c in enumerate(r.bin_curves):
            if c is not None:
                bins.append((method, kind, label, n, k, c.auc))
        for t, v in zip(r.thresholds.tolist(), r.mean_recall().tolist()):
            curves.append((method, kind, label, n, t, v))
    return {
        "repeatability_auc.csv": auc,
        "repeatability_bin_auc.csv": bins,
        "repeatability_recall.csv": curves,
    }


def repeatability_summary(results: Sequence[RepeatabilityResult]) -> list[dict]:
    return [
        {
            "kind": r.spec.kind,
            "param": r.spec.param_label(),
            "auc": r.auc,
            "images": r.n_images,
            "avg_reference": r.n_reference / max(r.n_images, 1),
            "avg_perturbed": r.n_perturbed / max(r.n_images, 1),
            "avg_kept": r.n_kept / max(r.n_images, 1),
        }
        for r in results
    ]


# ---- detection ---------------------------------------------------------------


def write_ap_csv(path, aps: dict[str, float], map_value: float, meta: dict | None = None) -> None:
    rows = [(cls, ap) for cls, ap in aps.items()] + [("mAP", map_value)]
    write_csv(path, ("class", "AP"), rows, meta)


def pr_rows(method: str, curves: dict[str, PRCurve]) -> list[tuple]:
    rows = []
    for cls, c in curves.items():
        for r, p in zip(c.recall.tolist(), c.precision.tolist()):
            rows.append((method, cls, r, p))
    return rows


# ---- SVG line charts ---------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#17becf", "#bcbd22")


def _try_float(s: str) -> float | None:
    try:
        v = float(s)
    except (TypeError, ValueError):
        return None
    return v if math.isfinite(v) else None


def curve_series(rows: list[dict[str, str]]) -> OrderedDict:
    """Group curve-schema rows into (label -> [(x, y)]) series."""
    series: OrderedDict = OrderedDict()
    for row in rows:
        x, y = _try_float(row.get("x")), _try_float(row.get("value"))
        if x is None or y is None:
            continue
        parts = [row.get("method", "")]
        if row.get("spec_kind") and row["spec_kind"] != "none":
            parts.append(row["spec_kind"])
        if row.get("n"):
            parts.append(f"n={row['n']}")
        series.setdefault(" ".join(p for p in parts if p), []).append((x, y))
    return series


def render_svg(series: OrderedDict, title: str = "", xlabel: str = "x", ylabel: str = "value", logx: bool = False, width: int = 640, height: int = 420) -> str:
    left, right, top, bottom = 60, 170, 36, 48
    pw, ph = width - left - right, height - top - bottom
    pts = [(x, y) for s in series.values() for x, y in s if not logx or x > 0]
    if pts:
        xs = [math.log10(x) if logx else x for x, _ in pts]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(0.0, min(y for _, y in pts)), max(1.0, max(y for _, y in pts))
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5

    def sx(x: float) -> float:
        v = math.log10(x) if logx else x
        return left + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(y: float) -> float:
        return top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(6):
        yv = y_lo + (y_hi - y_lo) * i / 5
        y = sy(yv)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{yv:.2f}</text>')
    for i in range(6):
        xv = x_lo + (x_hi - x_lo) * i / 5
        x = left + pw * i / 5
        label = f"{10 ** xv:.3g}" if logx else f"{xv:.3g}"
        out.append(f'<text x="{x:.1f}" y="{top + ph + 16}" text-anchor="middle">{label}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, data) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        data = sorted((x, y) for x, y in data if not logx or x > 0)
        if data:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in data)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = top + 14 * i + 8
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 32}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_csv_svg(csv_path, svg_path=None, title: str | None = None, logx: bool = False) -> Path:
    csv_path = Path(csv_path)
    _, rows = read_csv(csv_path)
    svg_path = Path(svg_path) if svg_path else csv_path.with_suffix(".svg")
    svg = render_svg(curve_series(rows), title=title or csv_path.stem, logx=logx)
    svg_path.write_text(svg, encoding="utf-8")
    return svg_path
