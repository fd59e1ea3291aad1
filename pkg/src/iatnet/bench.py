"""Task generators, basis and mesh sweeps, pattern traces and CSV output."""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .basis import BasisFamily
from .iat import Sigma
from .net import (
    Arch,
    IATActivation,
    Network,
    TrainConfig,
    TrainingDiverged,
    init_network,
    stream,
    train,
)

log = logging.getLogger(__name__)

FAMILIES = [f.value for f in BasisFamily]
LOCAL_FAMILIES = ["rect", "pwl", "pwq"]
ZERO_INTEGRAL_FAMILIES = ["fourier", "pwl-w", "rect-w"]
SCALAR_BASELINES = ["relu", "tanh", "sigmoid"]
CSV_FIELDS = [
    "task", "input_basis", "output_basis", "mode", "M", "width", "depth",
    "seed", "epochs", "final_loss", "final_accuracy", "wall_ms",
]


class TaskKind(enum.Enum):
    FIT1D = "fit1d"
    FIT2D = "fit2d"
    MEMORIZE = "memorize"


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    kind: TaskKind

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.targets.ndim != 2 or self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must be 2-D with matching row counts")
        if self.inputs.shape[0] == 0:
            raise ValueError("dataset is empty")

    @property
    def is_classification(self) -> bool:
        return self.kind is TaskKind.MEMORIZE

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def _sin_2pi(x: np.ndarray) -> np.ndarray:
    # exact zeros and ones on quarter-integer x
    out = np.sin(2.0 * np.pi * x)
    q = 4.0 * x
    exact = q == np.round(q)
    out[exact] = np.array([0.0, 1.0, 0.0, -1.0])[np.mod(np.round(q[exact]).astype(np.int64), 4)]
    return out


def _mesh2d(grid: int) -> np.ndarray:
    if grid < 2:
        raise ValueError(f"grid must be >= 2, got {grid}")
    g = np.linspace(-1.0, 1.0, grid)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    return np.column_stack((xx.ravel(), yy.ravel()))


def gen_memorize_task(grid: int, seed: int) -> Dataset:
    X = _mesh2d(grid)
    labels = stream(seed, "data/memorize").choice(np.array([-1.0, 1.0]), size=X.shape[0])
    return Dataset(X, labels[:, None], TaskKind.MEMORIZE)


def gen_fit1d_task(n: int) -> Dataset:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    x = np.linspace(-1.0, 1.0, n)
    return Dataset(x[:, None], _sin_2pi(x)[:, None], TaskKind.FIT1D)


def gen_fit2d_task(grid: int) -> Dataset:
    X = _mesh2d(grid)
    return Dataset(X, (_sin_2pi(X[:, 0]) * _sin_2pi(X[:, 1]))[:, None], TaskKind.FIT2D)


def make_task(name: str, *, grid: int = 20, n: int = 200, seed: int = 0) -> Dataset:
    kind = TaskKind(name)
    if kind is TaskKind.FIT1D:
        return gen_fit1d_task(n)
    if kind is TaskKind.FIT2D:
        return gen_fit2d_task(grid)
    return gen_memorize_task(grid, seed)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepConfig:
    width: int = 50
    depth: int = 3
    epochs: int = 3000
    lr: float = 1e-3
    mode: str = "disc"
    sigma: str = "relu"
    jobs: int = 1

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(optimizer="adam", lr=self.lr, epochs=self.epochs, seed=seed)


@dataclass
class RunRecord:
    task: str
    input_basis: str
    output_basis: str
    mode: str
    M: int | None
    width: int
    depth: int
    seed: int
    epochs: int
    final_loss: float
    final_accuracy: float | None
    wall_ms: float
    diverged: bool = False
    loss_curve: list[float] = field(default_factory=list, repr=False)

    def metric(self, classification: bool) -> float:
        if self.diverged:
            return math.nan
        return float(self.final_accuracy) if classification else self.final_loss


@dataclass(frozen=True)
class Job:
    dataset: Dataset
    arch: Arch
    cfg: TrainConfig
    row: str
    col: str


def _run_job(job: Job) -> RunRecord:
    arch, cfg = job.arch, job.cfg
    net = init_network(arch, cfg.seed)
    t0 = time.perf_counter()
    mode = job.row if job.row == "scalar" else arch.mode
    M = arch.M if arch.activation == "iat" and arch.mode == "disc" else None
    base = dict(
        task=job.dataset.kind.value, input_basis=job.row, output_basis=job.col, mode=mode, M=M,
        width=arch.width, depth=arch.depth, seed=cfg.seed, epochs=cfg.epochs,
    )
    try:
        _, rep = train(net, job.dataset, cfg)
    except TrainingDiverged as exc:
        log.warning("run %s/%s seed %d diverged: %s", job.row, job.col, cfg.seed, exc)
        wall = 1e3 * (time.perf_counter() - t0)
        return RunRecord(**base, final_loss=math.nan, final_accuracy=None, wall_ms=wall, diverged=True)
    wall = 1e3 * (time.perf_counter() - t0)
    return RunRecord(**base, final_loss=rep.final_loss, final_accuracy=rep.final_accuracy,
                     wall_ms=wall, loss_curve=rep.loss_curve)


def run_jobs(jobs: Sequence[Job], n_workers: int = 1) -> list[RunRecord]:
    """Run jobs in a process pool; results come back in submission order."""
    if n_workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_run_job, jobs))


@dataclass
class Cell:
    row: str
    col: str
    values: tuple[float, ...]
    seeds: tuple[int, ...]
    n_diverged: int

    @property
    def mean(self) -> float:
        # a diverged seed makes the mean nan rather than vanishing from it
        return float(np.mean(self.values)) if self.values else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.values)) if self.values else math.nan


@dataclass
class SweepTable:
    task: str
    metric: str
    rows: list[str]
    cols: list[str]
    cells: dict[tuple[str, str], Cell]
    runs: list[RunRecord]
    axis: str = "basis"

    def __len__(self) -> int:
        return len(self.cells)

    def cell(self, row: str, col) -> Cell:
        return self.cells[(row, str(col))]

    def mean(self, row: str, col) -> float:
        return self.cell(row, col).mean

    def row_mean(self, row: str) -> float:
        vals = [c.mean for (r, _), c in self.cells.items() if r == row]
        return float(np.mean(vals))

    @property
    def complete(self) -> bool:
        """Every cell holds one value per seed (diverged seeds included as nan)."""
        counts = {len(c.values) for c in self.cells.values()}
        return len(counts) == 1 and counts != {0}

    def format(self) -> str:
        lines = [f"{self.task}: seed-mean {self.metric}"]
        width = max(len(c) for c in self.cols) + 2
        lines.append(" " * 10 + "".join(f"{c:>{max(width, 11)}}" for c in self.cols))
        for r in self.rows:
            vals = []
            for c in self.cols:
                cell = self.cells.get((r, c))
                vals.append(f"{cell.mean:>{max(width, 11)}.3e}" if cell else " " * max(width, 11))
            lines.append(f"{r:<10}" + "".join(vals))
        return "\n".join(lines)

    def cell_rows(self, timing: bool = False) -> list[dict]:
        by_cell: dict[tuple[str, str], list[RunRecord]] = {}
        for run in self.runs:
            by_cell.setdefault(self._key(run), []).append(run)
        out = []
        for key in self.cells:
            runs = by_cell[key]
            first = runs[0]
            losses = [r.final_loss for r in runs]
            accs = [r.final_accuracy for r in runs]
            acc = "" if any(a is None for a in accs) else _fmt(float(np.mean(accs)))
            out.append(_row(first, seed=";".join(str(r.seed) for r in runs),
                            final_loss=_fmt(float(np.mean(losses))), final_accuracy=acc,
                            wall_ms=_fmt(sum(r.wall_ms for r in runs)) if timing else ""))
        return out

    def run_rows(self, timing: bool = False) -> list[dict]:
        return [
            _row(r, seed=str(r.seed), final_loss=_fmt(r.final_loss),
                 final_accuracy="" if r.final_accuracy is None else _fmt(r.final_accuracy),
                 wall_ms=_fmt(r.wall_ms) if timing else "")
            for r in self.runs
        ]

    def _key(self, run: RunRecord) -> tuple[str, str]:
        if self.axis == "ratio":
            return (f"{run.input_basis}/{run.output_basis}", str(run.M // run.width))
        return (run.input_basis, run.output_basis)

    def to_csv(self, path, timing: bool = False, per_run: bool = False) -> None:
        rows = self.run_rows(timing) if per_run else self.cell_rows(timing)
        write_csv(path, rows)


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else repr(float(v))


def _row(run: RunRecord, **over) -> dict:
    d = {
        "task": run.task, "input_basis": run.input_basis, "output_basis": run.output_basis,
        "mode": run.mode, "M": "" if run.M is None else str(run.M), "width": str(run.width),
        "depth": str(run.depth), "seed": str(run.seed), "epochs": str(run.epochs),
        "final_loss": _fmt(run.final_loss), "final_accuracy": "", "wall_ms": "",
    }
    d.update(over)
    return d


def write_csv(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _table(task: Dataset, rows, cols, keys, runs, axis="basis") -> SweepTable:
    classification = task.is_classification
    cells: dict[tuple[str, str], Cell] = {}
    for key, run in zip(keys, runs):
        cells.setdefault(key, Cell(key[0], key[1], (), (), 0))
        c = cells[key]
        cells[key] = Cell(c.row, c.col, c.values + (run.metric(classification),),
                          c.seeds + (run.seed,), c.n_diverged + int(run.diverged))
    return SweepTable(task.kind.value, "accuracy" if classification else "mse", rows, cols, cells, list(runs), axis)


def run_basis_sweep(task: Dataset, M: int, seeds: Sequence[int], cfg: SweepConfig,
                    families: Sequence[str] = FAMILIES, baselines: Sequence[str] = SCALAR_BASELINES) -> SweepTable:
    """Every (input, output) family pair plus scalar baselines, one model per seed."""
    d_in, d_out = task.inputs.shape[1], task.targets.shape[1]
    jobs, keys = [], []
    for fin in families:
        for fout in families:
            arch = Arch(d_in, d_out, cfg.width, cfg.depth, "iat", fin, fout, cfg.sigma, cfg.mode, M)
            for s in seeds:
                jobs.append(Job(task, arch, cfg.train_config(s), fin, fout))
                keys.append((fin, fout))
    for act in baselines:
        arch = Arch(d_in, d_out, cfg.width, cfg.depth, act)
        for s in seeds:
            jobs.append(Job(task, arch, cfg.train_config(s), "scalar", act))
            keys.append(("scalar", act))
    runs = run_jobs(jobs, cfg.jobs)
    rows = list(families) + (["scalar"] if baselines else [])
    cols = list(dict.fromkeys(list(families) + list(baselines)))
    return _table(task, rows, cols, keys, runs)


def run_mesh_sweep(task: Dataset, ratios: Sequence[int], cfg: SweepConfig, seeds: Sequence[int] = (1,),
                   basis_in: str = "fourier", basis_out: str = "pwq") -> SweepTable:
    """One model per (ratio, seed) with ``M = width * ratio``."""
    for r in ratios:
        if int(r) != r or r < 1:
            raise ValueError(f"mesh ratios must be positive integers, got {r}")
    d_in, d_out = task.inputs.shape[1], task.targets.shape[1]
    label = f"{basis_in}/{basis_out}"
    jobs, keys = [], []
    for r in ratios:
        arch = Arch(d_in, d_out, cfg.width, cfg.depth, "iat", basis_in, basis_out, cfg.sigma, "disc",
                    cfg.width * int(r))
        for s in seeds:
            jobs.append(Job(task, arch, cfg.train_config(s), basis_in, basis_out))
            keys.append((label, str(int(r))))
    runs = run_jobs(jobs, cfg.jobs)
    return _table(task, [label], [str(int(r)) for r in ratios], keys, runs, axis="ratio")


def mesh_sizes(width: int, ratios: Sequence[int]) -> list[int]:
    return [width * int(r) for r in ratios]


# ---------------------------------------------------------------------------
# pattern traces


def _mask_intervals(mask: np.ndarray, M: int) -> list[tuple[float, float]]:
    edges = -1.0 + 2.0 * np.arange(M + 1) / M
    padded = np.concatenate(([False], mask, [False]))
    starts = np.nonzero(~padded[:-1] & padded[1:])[0]
    ends = np.nonzero(padded[:-1] & ~padded[1:])[0]
    return [(float(edges[a]), float(edges[b])) for a, b in zip(starts, ends)]


def pattern_trace(net: Network, x_start, x_end, n: int) -> list[tuple[float, int, float, float]]:
    """Activation-pattern intervals of every IAT layer along a segment of inputs.

    Rows are ``(x, k, lo, hi)`` with ``k`` the ordinal of the IAT layer. ``x``
    is the input itself for 1-D inputs and the segment parameter in [0, 1]
    otherwise. Discretized layers report unions of midpoint cells.
    """
    iat = net.iat_layers()
    if not iat:
        raise ValueError("network has no IAT layers")
    a = np.atleast_1d(np.asarray(x_start, dtype=float))
    b = np.atleast_1d(np.asarray(x_end, dtype=float))
    t = np.linspace(0.0, 1.0, n)
    X = a + t[:, None] * (b - a)
    xs = X[:, 0] if net.d_in == 1 else t
    rows: list[tuple[float, int, float, float]] = []
    per_layer: dict[int, list] = {}
    H = X
    for i, layer in enumerate(net.layers):
        if isinstance(layer, IATActivation):
            if layer.cfg.sigma is not Sigma.RELU:
                raise ValueError("pattern traces need ReLU IAT layers")
            if layer.cfg.analytic:
                per_layer[i] = [list(p.intervals) for p in layer.interval_patterns(H)]
            else:
                M = layer.cfg.mode.M
                per_layer[i] = [_mask_intervals(m, M) for m in layer.pattern_of(H)]
        H, _ = layer.forward(H)
    for j in range(n):
        for k, i in enumerate(iat):
            for lo, hi in per_layer[i][j]:
                rows.append((float(xs[j]), k, lo, hi))
    return rows


def group_means(table: SweepTable, rows: Sequence[str], cols: Sequence[str] | None = None) -> float:
    """Average of seed-mean cells over the given rows (and columns)."""
    cols = table.cols if cols is None else cols
    vals = [table.mean(r, c) for r in rows for c in cols if (r, c) in table.cells]
    return float(np.mean(vals))
