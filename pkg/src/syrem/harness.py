"""Experiment driver: run strategies over the one-pass task stream, fill result matrices, write reports."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import STRATEGIES, ContinualEndpointRegressor
from .metrics import ResultMatrix, bwt, ct, evaluate, fwt
from .stream import DataError, StreamConfig, build_stream, generate_datasets

RECORD_SCHEMA = "syrem-run-record"
RECORD_VERSION = 1
CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    init: int = 0
    buffer: int = 0
    selection: int = 0


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str = "syrem"
    buffer_capacity: int = 1000
    m_candidates: int = 16
    batch_size: int = 8
    gc_mode: str = "batch_mean"
    seeds: Seeds = Seeds()
    hidden_dims: tuple = (128, 128)
    n_heads: int = 6
    activation: str = "relu"
    output_scale: float = 10.0
    head_coupling: float = 0.9
    lr: float = 1e-3
    rehearsal: bool | None = None
    projection: bool | None = None

    def __post_init__(self):
        if isinstance(self.seeds, dict):
            object.__setattr__(self, "seeds", Seeds(**self.seeds))
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {sorted(STRATEGIES)}, got {self.strategy!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.m_candidates < 2 * self.batch_size:
            raise ConfigError(f"m_candidates ({self.m_candidates}) must be at least "
                              f"2 * batch_size ({2 * self.batch_size})")
        if self.buffer_capacity < 0:
            raise ConfigError("buffer_capacity must be >= 0")

    def estimator(self, stream_length: int | None = None) -> ContinualEndpointRegressor:
        est = ContinualEndpointRegressor(
            strategy=self.strategy, hidden_dims=self.hidden_dims, n_heads=self.n_heads,
            activation=self.activation, output_scale=self.output_scale,
            head_coupling=self.head_coupling, lr=self.lr, batch_size=self.batch_size,
            buffer_capacity=self.buffer_capacity, m_candidates=self.m_candidates,
            gc_mode=self.gc_mode, rehearsal=self.rehearsal, projection=self.projection,
            init_seed=self.seeds.init, buffer_seed=self.seeds.buffer,
            selection_seed=self.seeds.selection, stream_length=stream_length)
        try:
            est._validate_hyperparams()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return est

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


def with_data_seed(stream: StreamConfig, seed: int) -> StreamConfig:
    """Copy of ``stream`` whose generation and shuffling use ``seed``."""
    tasks = [dataclasses.replace(t, seed=seed) for t in stream.tasks]
    return dataclasses.replace(stream, tasks=tasks, seed=seed)


def config_hash(stream: StreamConfig, strategy: StrategyConfig) -> str:
    blob = json.dumps({"stream": stream.to_dict(), "strategy": strategy.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- run records --------------------------------------------------------------

@dataclass
class RunRecord:
    """Everything needed to rebuild a run's metrics and reports."""

    label: str
    config: dict
    matrix: ResultMatrix
    joint: list                      # [(fde_jt, mr_jt)] per stage
    transfer: dict                   # logged bwt/ct/fwt per stage
    steps_per_stage: list
    step_log: list = field(default_factory=list)
    similarity_trace: list = field(default_factory=list)
    intra_task: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)

    @property
    def strategy(self) -> str:
        return self.config["strategy"]["strategy"]

    @property
    def n_steps(self) -> int:
        return int(sum(self.steps_per_stage))

    def to_dict(self) -> dict:
        return {"schema": RECORD_SCHEMA, "version": RECORD_VERSION, "label": self.label,
                "config": self.config, "matrix": self.matrix.to_dict(),
                "joint": [list(j) for j in self.joint], "transfer": self.transfer,
                "steps_per_stage": list(self.steps_per_stage), "step_log": self.step_log,
                "similarity_trace": [list(s) for s in self.similarity_trace],
                "intra_task": self.intra_task, "wall_clock": self.wall_clock}

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        if d.get("schema") != RECORD_SCHEMA or d.get("version") != RECORD_VERSION:
            raise ValueError(f"unsupported run record schema {d.get('schema')!r} "
                             f"version {d.get('version')!r} (expected {RECORD_VERSION})")
        return cls(d["label"], d["config"], ResultMatrix.from_dict(d["matrix"]),
                   [tuple(j) for j in d["joint"]], d["transfer"], d["steps_per_stage"],
                   d.get("step_log", []), [tuple(s) for s in d.get("similarity_trace", [])],
                   d.get("intra_task", []), d.get("wall_clock", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))


def transfer_metrics(matrix: ResultMatrix) -> dict:
    """BWT for stages 2..N, CT for 1..N, FWT for 1..N-1, keyed by 1-based stage."""
    n = matrix.rows_filled()
    return {
        "bwt": {c: bwt(matrix, c) for c in range(2, n + 1)},
        "ct": {c: ct(matrix, c) for c in range(1, n + 1)},
        "fwt": {c: fwt(matrix, c) for c in range(1, min(n, matrix.n_tasks - 1) + 1)},
    }


def _jsonable_transfer(t: dict) -> dict:
    return {k: {str(c): list(v) for c, v in rows.items()} for k, rows in t.items()}


# -- training -----------------------------------------------------------------

def train_step(state: ContinualEndpointRegressor, batch) -> ContinualEndpointRegressor:
    """One strategy step on one stream batch; the estimator owns buffer and optimizer state."""
    return state.partial_fit_samples(batch)


def _datasets_for(stream: StreamConfig, datasets):
    if datasets is None:
        return generate_datasets(stream)
    missing = [t.task_id for t in stream.tasks if t.task_id not in datasets]
    if missing:
        raise DataError(f"no data for task ids {missing}")
    for t in stream.tasks:
        train, test = datasets[t.task_id]
        if not train or not test:
            raise DataError(f"task {t.task_id} needs non-empty train and test sets")
    return datasets


def _evaluate_row(est, stream, datasets):
    fde, mr = [], []
    for t in stream.tasks:
        f, m = evaluate(est.predict, datasets[t.task_id][1])
        fde.append(f)
        mr.append(m)
    return fde, mr


def _union_test(stream, datasets):
    return [s for t in stream.tasks for s in datasets[t.task_id][1]]


def run_experiment(stream: StreamConfig, strategy: StrategyConfig, datasets=None,
                   eval_every: int | None = None, label: str | None = None) -> RunRecord:
    """One continual-learning run over the stream.

    ``datasets`` maps task id to (train, test) samples; generated from ``stream``
    when omitted. ``eval_every`` adds a joint-test evaluation every that many
    steps inside each task (diagnostics only).
    """
    if strategy.strategy == "jotr":
        return run_jotr(stream, strategy, datasets, label)
    t0 = time.perf_counter()
    stream = dataclasses.replace(with_data_seed(stream, strategy.seeds.data),
                                 batch_size=strategy.batch_size)
    datasets = _datasets_for(stream, datasets)
    n_train = sum(len(datasets[t.task_id][0]) for t in stream.tasks)
    est = strategy.estimator(stream_length=n_train if STRATEGIES[strategy.strategy][0] else None)
    union = _union_test(stream, datasets)
    matrix = ResultMatrix(len(stream.tasks))
    joint, steps, intra = [], [], []
    stage_steps = 0
    for sb in build_stream(stream, datasets):
        train_step(est, sb.batch)
        stage_steps += 1
        if eval_every and stage_steps % eval_every == 0 and not sb.task_end:
            intra.append({"stage": sb.stage, "step": est.n_steps_,
                          "joint": list(evaluate(est.predict, union))})
        if sb.task_end:
            matrix.fill_row(sb.stage, *_evaluate_row(est, stream, datasets))
            joint.append(evaluate(est.predict, union))
            steps.append(stage_steps)
            stage_steps = 0
    cfg = {"stream": stream.to_dict(), "strategy": strategy.to_dict(),
           "config_hash": config_hash(stream, strategy)}
    matrix.metadata = {"strategy": strategy.strategy, "seeds": dataclasses.asdict(strategy.seeds),
                       "config_hash": cfg["config_hash"]}
    return RunRecord(label or strategy.strategy, cfg, matrix, joint,
                     _jsonable_transfer(transfer_metrics(matrix)), steps, est.step_log_,
                     list(est.similarity_trace_), intra,
                     {"seconds": time.perf_counter() - t0})


def _budget_batches(n: int, steps: int, b: int, rng) -> list[np.ndarray]:
    """``steps`` batches of ``b`` indices into range(n), reshuffling after each full pass."""
    need = steps * b
    order = np.concatenate([rng.permutation(n) for _ in range(math.ceil(need / n))])
    return [order[i * b:(i + 1) * b] for i in range(steps)]


def run_jotr(stream: StreamConfig, strategy: StrategyConfig, datasets=None,
             label: str | None = None) -> RunRecord:
    """Joint training on every task prefix, one fresh model per prefix length.

    The model for prefix ``N'`` gets exactly as many optimizer steps as the
    continual run spends on tasks ``1..N'``. Row ``N'`` of the result matrix
    holds that model's per-task test metrics.
    """
    t0 = time.perf_counter()
    strategy = dataclasses.replace(strategy, strategy="jotr")
    stream = dataclasses.replace(with_data_seed(stream, strategy.seeds.data),
                                 batch_size=strategy.batch_size)
    datasets = _datasets_for(stream, datasets)
    b = strategy.batch_size
    union_test = _union_test(stream, datasets)
    n_tasks = len(stream.tasks)
    matrix = ResultMatrix(n_tasks)
    joint, steps, step_log = [], [], []
    for prefix in range(1, n_tasks + 1):
        pool = [s for t in stream.tasks[:prefix] for s in datasets[t.task_id][0]]
        budget = sum(math.ceil(len(datasets[t.task_id][0]) / b) for t in stream.tasks[:prefix])
        rng = np.random.default_rng([strategy.seeds.data, prefix])
        est = strategy.estimator()
        for idx in _budget_batches(len(pool), budget, b, rng):
            train_step(est, [pool[i] for i in idx])
        matrix.fill_row(prefix, *_evaluate_row(est, stream, datasets))
        joint.append(evaluate(est.predict, union_test))
        steps.append(budget)
        step_log.extend(dict(entry, prefix=prefix) for entry in est.step_log_)
    cfg = {"stream": stream.to_dict(), "strategy": strategy.to_dict(),
           "config_hash": config_hash(stream, strategy)}
    matrix.metadata = {"strategy": "jotr", "seeds": dataclasses.asdict(strategy.seeds),
                       "config_hash": cfg["config_hash"]}
    return RunRecord(label or "jotr", cfg, matrix, joint,
                     _jsonable_transfer(transfer_metrics(matrix)), steps, step_log, [], [],
                     {"seconds": time.perf_counter() - t0})


# -- reports ------------------------------------------------------------------

def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def report(records, out_dir) -> dict:
    """Write CSV tables and ``summary.txt`` for ``records`` (RunRecords or paths to saved ones).

    Returns a mapping from report name to written path.
    """
    records = [r if isinstance(r, RunRecord) else RunRecord.load(r) for r in records]
    if not records:
        raise ValueError("report needs at least one run record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    rows = {"bwt": [], "ct": [], "fwt": []}
    jt_rows, sim_rows, proj_rows = [], [], []
    for rec in records:
        seeds = rec.config["strategy"]["seeds"]
        run_id = f"{rec.label}"
        tm = transfer_metrics(rec.matrix)
        for kind in rows:
            for c, (f, m) in tm[kind].items():
                rows[kind].append([rec.strategy, run_id, seeds["data"], c, f, m])
        for c, (f, m) in enumerate(rec.joint, start=1):
            jt_rows.append([rec.strategy, run_id, seeds["data"], c, f, m])
        for step, rank_, idx, score in rec.similarity_trace:
            sim_rows.append([rec.strategy, run_id, step, rank_, idx, score])
        for e in rec.step_log:
            if "projected" in e and rec.strategy != "jotr":
                proj_rows.append([rec.strategy, run_id, e["step"], e["task_id"], int(e["projected"]),
                                  e["inner_product"], e["lambda"], e["loss"]])
        grid_path = out / f"rmatrix_{run_id}.csv"
        n = rec.matrix.n_tasks
        _write_csv(grid_path, ["metric", "stage"] + [f"task_{j}" for j in range(1, n + 1)],
                   [[name, i + 1, *grid[i]] for name, grid in (("fde", rec.matrix.fde),
                                                               ("mr", rec.matrix.mr))
                    for i in range(n)])
        paths[f"rmatrix_{run_id}"] = grid_path
    head = ["strategy", "run", "data_seed", "stage"]
    for kind, r in rows.items():
        paths[kind] = out / f"{kind}.csv"
        _write_csv(paths[kind], head + [f"fde_{kind}", f"mr_{kind}"], r)
    paths["jt"] = out / "jt.csv"
    _write_csv(paths["jt"], ["strategy", "run", "data_seed", "n_learned", "fde_jt", "mr_jt"], jt_rows)
    paths["similarity"] = out / "similarity_trace.csv"
    _write_csv(paths["similarity"], ["strategy", "run", "step", "rank", "buffer_index", "score"],
               sim_rows)
    paths["projection"] = out / "projection_log.csv"
    _write_csv(paths["projection"], ["strategy", "run", "step", "task_id", "projected",
                                     "inner_product", "lambda", "loss"], proj_rows)
    paths["summary"] = out / "summary.txt"
    paths["summary"].write_text(summary_text(records))
    return paths


def summary_text(records) -> str:
    """Per-strategy means over runs of stage-averaged BWT/CT/FWT and final joint test."""
    by = {}
    for rec in records:
        by.setdefault(rec.strategy, []).append(rec)
    lines = [f"{'strategy':<11} {'runs':>4} {'FDE-BWT':>8} {'MR-BWT':>8} {'FDE-CT':>8} {'MR-CT':>8} "
             f"{'FDE-FWT':>8} {'MR-FWT':>8} {'FDE-JT':>8} {'MR-JT':>8} {'sim':>6}"]
    for strat, recs in by.items():
        vals = np.array([run_summary(r) for r in recs])
        m = [float(np.mean(col[~np.isnan(col)])) if np.any(~np.isnan(col)) else float("nan")
             for col in vals.T]
        lines.append(f"{strat:<11} {len(recs):>4} " + " ".join(
            f"{x:>8.3f}" if i < 8 else f"{x:>6.3f}" for i, x in enumerate(m)))
    lines.append("")
    lines.append("BWT/CT/FWT are averaged over stages; JT is the joint test after the last stage;")
    lines.append("sim is the mean similarity score of rehearsed samples (nan without rehearsal).")
    return "\n".join(lines) + "\n"


def run_summary(rec: RunRecord) -> list[float]:
    tm = transfer_metrics(rec.matrix)

    def avg(kind, k):
        v = [x[k] for x in tm[kind].values()]
        return float(np.mean(v)) if v else float("nan")
    sim = [s[3] for s in rec.similarity_trace]
    return [avg("bwt", 0), avg("bwt", 1), avg("ct", 0), avg("ct", 1), avg("fwt", 0), avg("fwt", 1),
            rec.joint[-1][0], rec.joint[-1][1], float(np.mean(sim)) if sim else float("nan")]
