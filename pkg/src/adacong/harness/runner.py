"""Execute (baseline x seed) cells, persist one CSV per run, and aggregate.

Layout of an output directory::

    config.json      snapshot of the experiment config
    runs/<id>.csv    one file per cell, columns ``records.CSV_COLUMNS``
    summary.csv      per-baseline aggregate of the headline metric
    summary.md       the same as a mean +- std table
    failures.txt     only when some cell raised
"""

from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..gridworld.runner import run_gridworld
from ..pipelines.kd import run_kd
from ..pipelines.ssl import run_ssl
from ..records import CSV_COLUMNS, RunRecord
from .config import ExperimentConfig

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("baseline", "metric", "n", "mean", "std", "median", "min", "max")
_RUNNERS = {"kd": run_kd, "ssl": run_ssl, "gridworld": run_gridworld}


def cell_id(cfg: ExperimentConfig, baseline: str, seed: int) -> str:
    return f"{cfg.experiment}-{baseline}-s{seed}"


def baseline_of(run_id: str) -> str:
    """Strip the experiment prefix and seed suffix from a cell id."""
    stem = run_id.rsplit("-s", 1)[0]
    return stem.split("-", 1)[1] if "-" in stem else stem


def run_cell(cfg: ExperimentConfig, baseline: str, seed: int) -> RunRecord:
    rec = _RUNNERS[cfg.experiment](cfg.run_config(baseline), seed)
    rec.run_id = cell_id(cfg, baseline, seed)
    rec.extras.clear()  # arrays do not need to cross the process boundary
    return rec


def _safe_cell(args):
    cfg, baseline, seed = args
    try:
        return baseline, seed, run_cell(cfg, baseline, seed), None
    except Exception as exc:  # recorded, the remaining cells still run
        return baseline, seed, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


# --- CSV -------------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def write_csv(rec: RunRecord, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for step, split, metric, value in rec.rows:
            w.writerow((rec.run_id, rec.seed, step, split, metric, _fmt(value)))


def read_csv(path: str | Path) -> RunRecord:
    """Inverse of :func:`write_csv`.

    Raises:
        ValueError: on a header that does not match the schema, or a file
            mixing several runs.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
    if len(rows) == 1:
        return RunRecord(path.stem, 0)
    run_ids = {r[0] for r in rows[1:]}
    if len(run_ids) != 1:
        raise ValueError(f"{path}: expected one run per file, found {len(run_ids)}")
    rec = RunRecord(rows[1][0], int(rows[1][1]))
    for r in rows[1:]:
        rec.log(int(r[2]), r[3], r[4], float(r[5]))
    return rec


def load_records(directory: str | Path) -> list[RunRecord]:
    directory = Path(directory)
    run_dir = directory / "runs" if (directory / "runs").is_dir() else directory
    return [read_csv(p) for p in sorted(run_dir.glob("*.csv")) if p.name != "summary.csv"]


# --- aggregation -----------------------------------------------------------

def headline(cfg: ExperimentConfig, rec: RunRecord) -> float:
    """The per-run number that the summary aggregates.

    Final test accuracy for the supervised pipelines; mean reward over the
    last ``final_window`` episodes for the gridworld.
    """
    spec = cfg.spec
    _, values = rec.series(spec.summary_metric, spec.summary_split)
    if values.size == 0:
        raise KeyError(f"run {rec.run_id} has no {spec.summary_metric} rows")
    if cfg.experiment == "gridworld":
        return float(values[-cfg.final_window:].mean())
    return float(values[-1])


@dataclass(frozen=True)
class SummaryRow:
    baseline: str
    metric: str
    values: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        # population std over seeds; 0 for a single seed
        return float(np.std(self.values))

    @property
    def median(self) -> float:
        return float(np.median(self.values))

    def as_tuple(self) -> tuple:
        return (self.baseline, self.metric, self.n, self.mean, self.std, self.median,
                float(min(self.values)), float(max(self.values)))


def summarize(cfg: ExperimentConfig, records: list[RunRecord]) -> list[SummaryRow]:
    metric = f"{cfg.spec.summary_metric}" + (f"_last{cfg.final_window}" if cfg.experiment == "gridworld" else "")
    by_base: dict[str, list[float]] = {}
    for rec in sorted(records, key=lambda r: (baseline_of(r.run_id), r.seed)):
        by_base.setdefault(baseline_of(rec.run_id), []).append(headline(cfg, rec))
    return [SummaryRow(b, metric, tuple(by_base[b])) for b in cfg.baselines if b in by_base]


def gap_ratio(rows: list[SummaryRow]) -> float | None:
    """Median AdaConG reward over the best median of the IBRL variants."""
    med = {r.baseline: r.median for r in rows}
    rivals = [med[b] for b in ("ibrl", "soft_ibrl") if b in med]
    if "adacong" not in med or not rivals:
        return None
    best = max(rivals)
    return math.inf if best == 0 else med["adacong"] / best


def summary_markdown(cfg: ExperimentConfig, rows: list[SummaryRow]) -> str:
    lines = [f"# {cfg.experiment} summary", "", f"seeds: {', '.join(map(str, cfg.seeds))}", "",
             "| baseline | metric | n | mean ± std | median |", "|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.baseline} | {r.metric} | {r.n} | {r.mean:.4f} ± {r.std:.4f} | {r.median:.4f} |")
    ratio = gap_ratio(rows) if cfg.experiment == "gridworld" else None
    if ratio is not None:
        lines += ["", f"adacong / best(ibrl, soft_ibrl) median ratio: {ratio:.3f}"]
    return "\n".join(lines) + "\n"


def write_summary(cfg: ExperimentConfig, rows: list[SummaryRow], out: Path) -> None:
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in r.as_tuple()])
    (out / "summary.md").write_text(summary_markdown(cfg, rows))


# --- execution -------------------------------------------------------------

@dataclass
class RunResult:
    out_dir: Path
    records: list[RunRecord]
    summary: list[SummaryRow]
    failures: list[tuple[str, int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def run(cfg: ExperimentConfig, out_dir: str | Path, jobs: int = 1) -> RunResult:
    """Run every (baseline x seed) cell and write the artefacts to ``out_dir``.

    Cells run in a pool of at most ``jobs`` worker processes; each cell owns
    its state and its CSV file, so results do not depend on ``jobs``.
    """
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    cells = [(cfg, b, s) for b in cfg.baselines for s in cfg.seeds]
    if jobs == 1 or len(cells) == 1:
        results = [_safe_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
            results = list(pool.map(_safe_cell, cells))

    records, failures = [], []
    for baseline, seed, rec, err in results:
        if err is not None:
            log.error("cell %s failed: %s", cell_id(cfg, baseline, seed), err.splitlines()[0])
            failures.append((baseline, seed, err))
            continue
        write_csv(rec, out / "runs" / f"{rec.run_id}.csv")
        records.append(rec)

    rows = summarize(cfg, records)
    write_summary(cfg, rows, out)
    fail_path = out / "failures.txt"
    if failures:
        fail_path.write_text("".join(f"== {cell_id(cfg, b, s)}\n{e}\n" for b, s, e in failures))
    elif fail_path.exists():
        fail_path.unlink()
    return RunResult(out, records, rows, failures)


@dataclass
class SweepResult:
    param: str
    values: list
    runs: list[RunResult]

    def table(self) -> str:
        baselines = [r.baseline for r in self.runs[0].summary] if self.runs else []
        head = "| " + " | ".join([self.param, *baselines]) + " |"
        lines = [head, "|" + "---|" * (len(baselines) + 1)]
        for v, res in zip(self.values, self.runs):
            cells = {r.baseline: f"{r.mean:.4f} ± {r.std:.4f}" for r in res.summary}
            lines.append("| " + " | ".join([json.dumps(v), *(cells.get(b, "failed") for b in baselines)]) + " |")
        return "\n".join(lines) + "\n"

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.runs)


def sweep(cfg: ExperimentConfig, param: str, values, out_dir: str | Path, jobs: int = 1) -> SweepResult:
    """One full :func:`run` per value of ``param``; writes ``sweep_<param>.md``.

    Raises:
        ValueError: for an empty value list or a parameter the experiment
            does not have.
        ConfigError: if a value is out of range.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    fields = set(cfg.spec.run_config.__dataclass_fields__)
    if param not in fields or param == cfg.spec.baseline_field:
        raise ValueError(f"'{param}' is not a sweepable parameter of {cfg.experiment}")
    out = Path(out_dir)
    runs = []
    for v in values:
        sub = cfg.with_params(**{param: v})
        runs.append(run(sub, out / f"{param}={_slug(v)}", jobs))
    res = SweepResult(param, values, runs)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_{param}.md").write_text(res.table())
    return res


def _slug(v) -> str:
    return json.dumps(v).replace("/", "_").replace('"', "")
