"""Standalone SVG learning curves: inter-seed mean line with a shaded +-1 std band."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..records import RunRecord
from .runner import baseline_of

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 720, 420
MARGIN = dict(left=64, right=150, top=36, bottom=48)


def curve_stats(records: list[RunRecord], metric: str, split: str | None = None):
    """Per-group ``(steps, mean, std, n_seeds)``; groups come from the run ids.

    Seeds are aligned on the steps they all share.
    """
    groups: dict[str, list[RunRecord]] = {}
    for rec in records:
        groups.setdefault(baseline_of(rec.run_id), []).append(rec)
    out = {}
    for name, recs in groups.items():
        series = [rec.series(metric, split) for rec in recs]
        common = set(series[0][0].tolist())
        for steps, _ in series[1:]:
            common &= set(steps.tolist())
        steps = np.array(sorted(common))
        if steps.size == 0:
            raise ValueError(f"group '{name}' has no steps shared by all seeds")
        mat = np.array([[dict(zip(s.tolist(), v.tolist()))[t] for t in steps] for s, v in series])
        out[name] = (steps, mat.mean(axis=0), mat.std(axis=0), len(recs))
    return out


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or y.size < window:
        return y
    c = np.cumsum(np.insert(y, 0, 0.0))
    head = c[1:window] / np.arange(1, window)  # trailing mean over what exists so far
    return np.concatenate([head, (c[window:] - c[:-window]) / window])


def render_curves(records: list[RunRecord], path: str | Path, metric: str | None = None,
                  split: str | None = None, title: str | None = None, smooth: int = 1) -> Path:
    """Write one chart with a line per group (baseline or mode).

    Args:
        records: runs to plot; run ids of the form ``<experiment>-<group>-s<seed>``.
        path: output ``.svg`` file.
        metric: metric to plot. Defaults to the one metric every record shares,
            which must then be unique.
        split: optional split filter.
        smooth: trailing moving-average window applied to mean and std.

    Raises:
        ValueError: for an empty record set, or when the records do not all
            carry ``metric``.
    """
    if not records:
        raise ValueError("no records to render")
    shared = set.intersection(*(rec.metrics() for rec in records))
    if metric is None:
        if len(shared) != 1:
            union = set.union(*(rec.metrics() for rec in records))
            raise ValueError(f"records do not share a single metric (shared: {sorted(shared)}, "
                             f"seen: {sorted(union)}); pass metric=")
        metric = shared.pop()
    elif metric not in shared:
        missing = [rec.run_id for rec in records if metric not in rec.metrics()]
        raise ValueError(f"metric '{metric}' missing from runs: {', '.join(missing)}")

    stats = curve_stats(records, metric, split)
    all_x = np.concatenate([s[0] for s in stats.values()])
    lows, highs = [], []
    for steps, mean, std, n in stats.values():
        m, sd = _smooth(mean, smooth), _smooth(std, smooth)
        lows.append((m - sd).min() if n > 1 else m.min())
        highs.append((m + sd).max() if n > 1 else m.max())
    x0, x1 = float(all_x.min()), float(all_x.max())
    y0, y1 = float(min(lows)), float(max(highs))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}" style="font-family:sans-serif;font-size:12px">',
             f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" style="fill:#ffffff"/>',
             f'<text x="{MARGIN["left"]}" y="22" style="font-size:14px;font-weight:bold">'
             f'{escape(title or metric)}</text>']
    # axes and ticks
    parts.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
                 f'style="fill:none;stroke:#444444;stroke-width:1"/>')
    for v in _ticks(y0, y1):
        parts.append(f'<line x1="{MARGIN["left"] - 4}" y1="{sy(v):.2f}" x2="{MARGIN["left"]}" y2="{sy(v):.2f}" '
                     f'style="stroke:#444444"/>')
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(v) + 4:.2f}" style="text-anchor:end">{v:g}</text>')
    for v in _ticks(x0, x1):
        parts.append(f'<line x1="{sx(v):.2f}" y1="{MARGIN["top"] + ph}" x2="{sx(v):.2f}" '
                     f'y2="{MARGIN["top"] + ph + 4}" style="stroke:#444444"/>')
        parts.append(f'<text x="{sx(v):.2f}" y="{MARGIN["top"] + ph + 18}" style="text-anchor:middle">{v:g}</text>')
    parts.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 10}" style="text-anchor:middle">step</text>')

    for i, (name, (steps, mean, std, n)) in enumerate(stats.items()):
        color = PALETTE[i % len(PALETTE)]
        m, sd = _smooth(mean, smooth), _smooth(std, smooth)
        if n > 1:
            upper = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(steps, m + sd))
            lower = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(steps[::-1], (m - sd)[::-1]))
            parts.append(f'<polygon class="band" points="{upper} {lower}" '
                         f'style="fill:{color};fill-opacity:0.2;stroke:none"/>')
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(steps, m))
        parts.append(f'<polyline class="mean" points="{pts}" style="fill:none;stroke:{color};stroke-width:1.5"/>')
        ly = MARGIN["top"] + 14 + 18 * i
        lx = WIDTH - MARGIN["right"] + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                     f'style="stroke:{color};stroke-width:3"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}">{escape(name)} (n={n})</text>')
    parts.append("</svg>")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n")
    return path


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    return [round(first + i * step, 10) for i in range(int((hi - first) / step + 1e-9) + 1)]
