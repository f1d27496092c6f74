"""Synthetic forecasting tasks, the one-pass task stream, and trajectory CSV I/O.

Every case is a set of agent tracks sampled every ``dt`` seconds. The first
``n_obs = t_obs / dt`` steps are observed; the current time ``t_c`` is the last
observed step and the target endpoint is the target agent's position
``n_pred = t_pred / dt`` steps later.

Features are expressed in the target agent's frame at ``t_c``: origin at its
position, x-axis along its last observed velocity (world axes when it moves
slower than ``MIN_HEADING_SPEED``). Layout is agent-major: the target first,
then surrounding agents nearest-first, each contributing ``n_obs`` rows of
(x, y, vx, vy). Missing agents are zero rows.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .memory import Sample

logger = logging.getLogger(__name__)

FAMILIES = ("constant_velocity", "constant_turn", "sinusoidal_weave", "stop_and_go", "merge_drift")
MIN_HEADING_SPEED = 0.1
POS_SCALE = 10.0      # target agent: meters per feature unit
VEL_SCALE = 10.0      # target agent: m/s per feature unit
SA_POS_SCALE = 50.0   # surrounding agents
SA_VEL_SCALE = 50.0
CSV_COLUMNS = ("task_id", "case_id", "agent_id", "t", "x", "y", "vx", "vy", "is_target")


class DataError(ValueError):
    """Malformed or inconsistent trajectory data."""


@dataclass(frozen=True)
class Horizon:
    t_obs: float = 1.0
    t_pred: float = 3.0
    dt: float = 0.1

    def __post_init__(self):
        if not (self.t_obs > 0 and self.t_pred > 0 and self.dt > 0):
            raise ValueError("t_obs, t_pred and dt must be positive")

    @property
    def n_obs(self) -> int:
        return int(round(self.t_obs / self.dt))

    @property
    def n_pred(self) -> int:
        return int(round(self.t_pred / self.dt))


@dataclass
class TaskSpec:
    task_id: int
    family: str
    family_params: dict = field(default_factory=dict)
    n_surrounding: int = 2
    n_train: int = 2000
    n_test: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")
        if self.family_params.get("noise_sigma", 0.0) < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.n_surrounding < 0:
            raise ValueError("n_surrounding must be >= 0")


@dataclass
class StreamConfig:
    tasks: list
    batch_size: int = 8
    t_obs: float = 1.0
    t_pred: float = 3.0
    dt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        Horizon(self.t_obs, self.t_pred, self.dt)
        self.tasks = [t if isinstance(t, TaskSpec) else TaskSpec(**t) for t in self.tasks]
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate task ids in {ids}")
        dims = {t.n_surrounding for t in self.tasks}
        if len(dims) > 1:
            raise ValueError("all tasks must share n_surrounding so the feature size is fixed")

    @property
    def horizon(self) -> Horizon:
        return Horizon(self.t_obs, self.t_pred, self.dt)

    @property
    def n_surrounding(self) -> int:
        return self.tasks[0].n_surrounding

    @property
    def input_dim(self) -> int:
        return feature_dim(self.n_surrounding, self.horizon)

    @property
    def total_train(self) -> int:
        return sum(t.n_train for t in self.tasks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [asdict(t) for t in self.tasks]
        return d


def feature_dim(n_surrounding: int, horizon: Horizon) -> int:
    return (n_surrounding + 1) * horizon.n_obs * 4


@dataclass
class CaseTracks:
    """Raw world-frame tracks of one case. Tracks are (T, 4) arrays of x, y, vx, vy."""

    task_id: int
    case_id: int
    times: np.ndarray
    target: np.ndarray
    others: list = field(default_factory=list)
    other_times: list = field(default_factory=list)


# -- feature construction -----------------------------------------------------

def _frame(velocity):
    speed = float(np.hypot(*velocity))
    if speed < MIN_HEADING_SPEED:
        return speed, np.eye(2)
    c, s = velocity / speed
    return speed, np.array([[c, s], [-s, c]])


def make_sample(case: CaseTracks, horizon: Horizon, n_surrounding: int) -> Sample:
    n_obs, n_pred = horizon.n_obs, horizon.n_pred
    if len(case.target) < n_obs + n_pred:
        raise DataError(f"task {case.task_id} case {case.case_id}: target track has "
                        f"{len(case.target)} steps, need {n_obs + n_pred}")
    ta = case.target
    p_c = ta[n_obs - 1, :2]
    speed, rot = _frame(ta[n_obs - 1, 2:])

    def local(track, pos_scale=POS_SCALE, vel_scale=VEL_SCALE):
        out = np.empty_like(track)
        out[:, :2] = (track[:, :2] - p_c) @ rot.T / pos_scale
        out[:, 2:] = track[:, 2:] @ rot.T / vel_scale
        return out

    obs_times = case.times[:n_obs]
    blocks = [local(ta[:n_obs])]
    others = []
    for track, times in zip(case.others, case.other_times):
        aligned = _align(track, times, obs_times, horizon.dt)
        present = ~np.all(np.isnan(aligned), axis=1)
        last = np.nonzero(present)[0]
        dist = np.hypot(*(aligned[last[-1], :2] - p_c)) if len(last) else np.inf
        block = local(np.nan_to_num(aligned), SA_POS_SCALE, SA_VEL_SCALE) * present[:, None]
        others.append((dist, block))
    others.sort(key=lambda o: o[0])
    for _, block in others[:n_surrounding]:
        blocks.append(block)
    while len(blocks) < n_surrounding + 1:
        blocks.append(np.zeros((n_obs, 4)))

    gt = rot @ (ta[n_obs - 1 + n_pred, :2] - p_c)
    norm = float(np.hypot(*gt))
    if speed >= MIN_HEADING_SPEED and norm > 1e-9:
        heading = gt / norm
    else:
        heading = np.array([1.0, 0.0])
    return Sample(case.task_id, case.case_id, np.concatenate(blocks).ravel(), gt, speed, heading)


def _align(track, times, obs_times, dt):
    """Rows of ``track`` at ``obs_times`` (NaN where the agent was not observed)."""
    out = np.full((len(obs_times), 4), np.nan)
    if len(times) == 0:
        return out
    idx = np.clip(np.searchsorted(times, obs_times), 0, len(times) - 1)
    for k, t in enumerate(obs_times):
        for j in (idx[k] - 1, idx[k]):
            if 0 <= j < len(times) and abs(times[j] - t) <= 0.5 * dt:
                out[k] = track[j]
                break
    return out


# -- synthetic families -------------------------------------------------------

# Reference parameters of every family; background cases are drawn with these.
FAMILY_DEFAULTS = {
    "constant_velocity": {"speed_min": 8.0, "speed_max": 14.0},
    "constant_turn": {"speed_min": 4.0, "speed_max": 8.0, "turn_rate": 0.3},
    "stop_and_go": {"speed_min": 4.0, "speed_max": 9.0, "accel": -2.0},
    "sinusoidal_weave": {"speed_min": 6.0, "speed_max": 10.0, "amplitude": 1.5, "period": 5.0},
    "merge_drift": {"speed_min": 10.0, "speed_max": 16.0, "lateral_offset": 3.5, "duration": 3.0},
}

def _uniform(rng, params, lo_key, hi_key, lo, hi):
    return rng.uniform(params.get(lo_key, lo), params.get(hi_key, hi))


def _family_track(family, params, t, rng):
    """Positions and velocities (T, 4) in a frame where the agent starts along +x at t=0."""
    v = _uniform(rng, params, "speed_min", "speed_max", 6.0, 12.0)
    if family == "constant_velocity":
        x, y = v * t, np.zeros_like(t)
        vx, vy = np.full_like(t, v), np.zeros_like(t)
    elif family == "constant_turn":
        w = params.get("turn_rate", 0.2)
        if params.get("random_sign", False) and rng.random() < 0.5:
            w = -w
        x, y = v / w * np.sin(w * t), v / w * (1.0 - np.cos(w * t))
        vx, vy = v * np.cos(w * t), v * np.sin(w * t)
    elif family == "sinusoidal_weave":
        amp = params.get("amplitude", 1.5)
        k = 2.0 * np.pi / params.get("period", 4.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x, y = v * t, amp * (np.sin(k * t + phase) - np.sin(phase))
        vx, vy = np.full_like(t, v), amp * k * np.cos(k * t + phase)
    elif family == "stop_and_go":
        # Constant acceleration from the observed state, held at standstill once stopped.
        accel = params.get("accel", -2.0)
        t_c = params["_t_c"]
        v_c = v
        v0 = v_c - accel * t_c
        if accel < 0:
            t_stop = t_c + v_c / -accel
            tt = np.minimum(t, t_stop)
        else:
            tt = t
        speed = np.maximum(v0 + accel * tt, 0.0)
        x = v0 * tt + 0.5 * accel * tt ** 2
        y = np.zeros_like(t)
        vx, vy = speed, np.zeros_like(t)
    elif family == "merge_drift":
        offset = params.get("lateral_offset", 3.5)
        duration = params.get("duration", 3.0)
        start = rng.uniform(params.get("start_min", -1.5), params.get("start_max", 0.5))
        u = np.clip((t - start) / duration, 0.0, 1.0)
        x, y = v * t, offset * (3 * u ** 2 - 2 * u ** 3)
        vx = np.full_like(t, v)
        vy = np.where((u > 0) & (u < 1), offset * (6 * u - 6 * u ** 2) / duration, 0.0)
    else:  # pragma: no cover - guarded by TaskSpec
        raise ValueError(family)
    return np.column_stack([x, y, vx, vy])


def _rigid(track, angle, offset):
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    out = np.empty_like(track)
    out[:, :2] = track[:, :2] @ rot.T + offset
    out[:, 2:] = track[:, 2:] @ rot.T
    return out


def generate_cases(spec: TaskSpec, horizon: Horizon) -> list[CaseTracks]:
    """World-frame tracks for ``n_train + n_test`` cases; case ids are 0..n-1 in that order."""
    rng = np.random.default_rng([spec.seed, spec.task_id])
    n_obs, n_pred = horizon.n_obs, horizon.n_pred
    t = np.arange(n_obs + n_pred) * horizon.dt
    t_c = t[n_obs - 1]
    sigma = spec.family_params.get("noise_sigma", 0.0)
    params = dict(spec.family_params, _t_c=t_c)
    background = spec.family_params.get("background_fraction", 0.0)
    others_fam = [f for f in FAMILIES if f != spec.family]
    n_sa = spec.family_params.get("n_present", spec.n_surrounding)
    cases = []
    for case_id in range(spec.n_train + spec.n_test):
        if background > 0 and rng.random() < background:
            fam = others_fam[rng.integers(len(others_fam))]
            local = _family_track(fam, dict(FAMILY_DEFAULTS[fam], _t_c=t_c), t, rng)
        else:
            local = _family_track(spec.family, params, t, rng)
        angle = rng.uniform(-np.pi, np.pi)
        offset = rng.uniform(-50.0, 50.0, size=2)
        target = _rigid(local, angle, offset)
        if sigma > 0:
            target[:n_obs] += rng.normal(0.0, sigma, size=(n_obs, 4))
        others = []
        for _ in range(n_sa):
            lat = rng.choice([-3.5, 3.5]) + rng.normal(0.0, 0.3)
            lon = rng.uniform(-20.0, 20.0)
            v_sa = max(0.0, local[n_obs - 1, 2] + rng.normal(0.0, 2.0))
            tt = t[:n_obs] - t_c
            sa = np.column_stack([local[n_obs - 1, 0] + lon + v_sa * tt,
                                  np.full(n_obs, local[n_obs - 1, 1] + lat),
                                  np.full(n_obs, v_sa), np.zeros(n_obs)])
            others.append(_rigid(sa, angle, offset))
        cases.append(CaseTracks(spec.task_id, case_id, t.copy(), target, others,
                                [t[:n_obs].copy() for _ in others]))
    return cases


def generate_task(spec: TaskSpec, horizon: Horizon = Horizon()) -> tuple[list, list]:
    """Deterministic (train, test) samples for one task."""
    cases = generate_cases(spec, horizon)
    samples = [make_sample(c, horizon, spec.n_surrounding) for c in cases]
    return samples[:spec.n_train], samples[spec.n_train:]


def generate_datasets(config: StreamConfig) -> dict:
    return {t.task_id: generate_task(t, config.horizon) for t in config.tasks}


# -- one-pass stream ----------------------------------------------------------

@dataclass(frozen=True)
class StreamBatch:
    task_id: int
    stage: int            # 1-based position of the task in the stream
    batch: list
    task_end: bool        # last batch of this task


def build_stream(config: StreamConfig, datasets: dict) -> Iterator[StreamBatch]:
    """Yield each task's training samples once, shuffled within the task, in task order.

    Batches never straddle a task boundary, so a task's last batch may be short.
    """
    b = config.batch_size
    for stage, spec in enumerate(config.tasks, start=1):
        train = datasets[spec.task_id][0]
        order = np.random.default_rng([config.seed, spec.task_id]).permutation(len(train))
        for start in range(0, len(train), b):
            chunk = [train[i] for i in order[start:start + b]]
            yield StreamBatch(spec.task_id, stage, chunk, start + b >= len(train))


def steps_per_task(config: StreamConfig) -> list[int]:
    return [math.ceil(t.n_train / config.batch_size) for t in config.tasks]


# -- CSV ----------------------------------------------------------------------

def write_csv(path, cases, splits: dict | None = None) -> None:
    """Write tracks in the trajectory CSV schema.

    ``splits`` optionally maps (task_id, case_id) to "train"/"test" and adds a
    ``split`` column.
    """
    cols = list(CSV_COLUMNS) + (["split"] if splits is not None else [])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for case in cases:
            agents = [(0, case.times, case.target, 1)]
            agents += [(k + 1, tt, tr, 0) for k, (tr, tt) in enumerate(zip(case.others, case.other_times))]
            extra = [splits[(case.task_id, case.case_id)]] if splits is not None else []
            for agent_id, times, track, is_target in agents:
                for ti, row in zip(times, track):
                    w.writerow([case.task_id, case.case_id, agent_id, repr(float(ti)),
                                *(repr(float(v)) for v in row), is_target, *extra])


def export_task(path, spec: TaskSpec, horizon: Horizon = Horizon()) -> None:
    cases = generate_cases(spec, horizon)
    splits = {(c.task_id, c.case_id): ("train" if c.case_id < spec.n_train else "test") for c in cases}
    write_csv(path, cases, splits)


def export_stream(path, config: StreamConfig) -> None:
    cases, splits = [], {}
    for spec in config.tasks:
        task_cases = generate_cases(spec, config.horizon)
        cases += task_cases
        splits.update({(c.task_id, c.case_id): ("train" if c.case_id < spec.n_train else "test")
                       for c in task_cases})
    write_csv(path, cases, splits)


def read_cases(path, dt: float) -> tuple[list[CaseTracks], dict]:
    """Parse a trajectory CSV into cases, grouped by (task_id, case_id) regardless of row order."""
    rows = defaultdict(lambda: defaultdict(list))
    targets = defaultdict(set)
    splits = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                key = (int(rec["task_id"]), int(rec["case_id"]))
                agent = int(rec["agent_id"])
                vals = [float(rec[c]) for c in ("t", "x", "y", "vx", "vy")]
                is_target = int(rec["is_target"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
            if is_target not in (0, 1) or not all(map(math.isfinite, vals)):
                raise DataError(f"{path}:{lineno}: malformed row")
            split = rec.get("split")
            if split:
                if split not in ("train", "test"):
                    raise DataError(f"{path}:{lineno}: split must be train or test, got {split!r}")
                if splits.setdefault(key, split) != split:
                    raise DataError(f"{path}:{lineno}: case {key} has conflicting split labels")
            rows[key][agent].append(vals)
            if is_target:
                targets[key].add(agent)

    cases = []
    for key in sorted(rows):
        if len(targets[key]) != 1:
            raise DataError(f"{path}: task {key[0]} case {key[1]} has {len(targets[key])} "
                            f"target agents, expected exactly one")
        (ta_id,) = targets[key]
        tracks = {}
        for agent, recs in rows[key].items():
            arr = np.array(sorted(recs), dtype=float)
            steps = np.diff(arr[:, 0])
            if np.any(steps <= 0):
                raise DataError(f"{path}: task {key[0]} case {key[1]} agent {agent}: "
                                f"non-monotone timestamps")
            if agent == ta_id and np.any(np.abs(steps - dt) > 1e-6 * max(1.0, dt) + 1e-9):
                raise DataError(f"{path}: task {key[0]} case {key[1]}: target sampled at "
                                f"irregular intervals (expected dt={dt})")
            tracks[agent] = arr
        ta = tracks.pop(ta_id)
        other_ids = sorted(tracks)
        cases.append(CaseTracks(key[0], key[1], ta[:, 0], ta[:, 1:],
                                [tracks[a][:, 1:] for a in other_ids],
                                [tracks[a][:, 0] for a in other_ids]))
    return cases, splits


def load_csv(path, horizon: Horizon = Horizon(), n_surrounding: int = 2,
             test_fraction: float = 1 / 6) -> dict:
    """Read a trajectory CSV into ``{task_id: (train, test)}``.

    Without a ``split`` column the last ``test_fraction`` of each task's cases
    (by case id) form the test set.
    """
    cases, splits = read_cases(path, horizon.dt)
    by_task = defaultdict(list)
    for case in cases:
        by_task[case.task_id].append(case)
    out = {}
    for task_id, task_cases in sorted(by_task.items()):
        samples = [make_sample(c, horizon, n_surrounding) for c in task_cases]
        if splits:
            train = [s for s in samples if splits.get((s.task_id, s.case_id)) == "train"]
            test = [s for s in samples if splits.get((s.task_id, s.case_id)) == "test"]
        else:
            n_test = max(1, int(round(test_fraction * len(samples)))) if len(samples) > 1 else 0
            train, test = samples[:len(samples) - n_test], samples[len(samples) - n_test:]
        out[task_id] = (train, test)
    return out


# -- default suite ------------------------------------------------------------

def default_tasks(n_train: int = 2000, n_test: int = 400, seed: int = 0,
                  n_surrounding: int = 2, background_fraction: float = 0.05) -> list[TaskSpec]:
    """Five tasks, one per family; each also mixes in the other families as background."""
    order = ["constant_velocity", "constant_turn", "stop_and_go", "sinusoidal_weave", "merge_drift"]
    return [TaskSpec(i + 1, fam,
                     dict(FAMILY_DEFAULTS[fam], noise_sigma=0.05,
                          background_fraction=background_fraction),
                     n_surrounding, n_train, n_test, seed)
            for i, fam in enumerate(order)]
