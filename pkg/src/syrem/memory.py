"""Long-term reservoir buffer and the temporal (last batch) buffer."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

BUFFER_FORMAT = "syrem-buffer"
BUFFER_VERSION = 1
# Upper bound on capacity as a fraction of the declared stream length.
MAX_CAPACITY_FRACTION = 0.05


@dataclass(frozen=True, eq=False)
class Sample:
    """One forecasting case in the target agent's heading-aligned frame."""

    task_id: int
    case_id: int
    features: np.ndarray
    gt_endpoint: np.ndarray
    ta_speed: float = 0.0
    heading_unit: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        gt = np.asarray(self.gt_endpoint, dtype=float).reshape(2)
        heading = np.asarray(self.heading_unit, dtype=float).reshape(2)
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"non-finite features in case {self.case_id}")
        if not np.all(np.isfinite(gt)):
            raise ValueError(f"non-finite ground truth in case {self.case_id}")
        if self.ta_speed < 0:
            raise ValueError("ta_speed must be >= 0")
        if abs(np.hypot(*heading) - 1.0) > 1e-9:
            raise ValueError(f"heading_unit must be a unit vector, got {heading}")
        for name, arr in (("features", feats), ("gt_endpoint", gt), ("heading_unit", heading)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "ta_speed", float(self.ta_speed))

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.task_id == other.task_id and self.case_id == other.case_id
                and self.ta_speed == other.ta_speed
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.gt_endpoint, other.gt_endpoint)
                and np.array_equal(self.heading_unit, other.heading_unit))

    def __hash__(self):
        return hash((self.task_id, self.case_id))

    def to_dict(self) -> dict:
        return {
            "task_id": int(self.task_id),
            "case_id": int(self.case_id),
            "features": self.features.tolist(),
            "gt_endpoint": self.gt_endpoint.tolist(),
            "ta_speed": self.ta_speed,
            "heading_unit": self.heading_unit.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        return cls(d["task_id"], d["case_id"], np.array(d["features"], dtype=float),
                   np.array(d["gt_endpoint"], dtype=float), d["ta_speed"],
                   np.array(d["heading_unit"], dtype=float))


def stack(samples) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix (n, d) and target matrix (n, 2) for a list of samples."""
    X = np.stack([s.features for s in samples])
    Y = np.stack([s.gt_endpoint for s in samples])
    return X, Y


class LongTermBuffer:
    """Fixed-capacity reservoir over a one-pass stream.

    After ``k`` offers every offered sample is held with probability
    ``capacity / k`` and ``len(buffer) == min(k, capacity)``.
    """

    def __init__(self, capacity: int, seed: int = 0, stream_length: int | None = None):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.seed = seed
        self.seen = 0
        self.slots: list[Sample] = []
        self.rng = np.random.default_rng(seed)
        if stream_length is not None and capacity > MAX_CAPACITY_FRACTION * stream_length:
            warnings.warn(
                f"buffer capacity {capacity} exceeds {MAX_CAPACITY_FRACTION:.0%} of the "
                f"declared stream length {stream_length}", stacklevel=2)

    def __len__(self):
        return len(self.slots)

    def __getitem__(self, i):
        return self.slots[i]

    def reservoir_insert(self, sample) -> "LongTermBuffer":
        self.seen += 1
        if self.seen <= self.capacity:
            self.slots.append(sample)
        elif self.capacity > 0:
            r = int(self.rng.integers(1, self.seen + 1))
            if r <= self.capacity:
                self.slots[r - 1] = sample
        return self

    def extend(self, samples) -> "LongTermBuffer":
        """Offer ``samples`` in order; same result and rng consumption as repeated inserts."""
        samples = list(samples)
        i = 0
        while i < len(samples) and self.seen < self.capacity:
            self.reservoir_insert(samples[i])
            i += 1
        rest = samples[i:]
        if rest and self.capacity > 0:
            # Array bounds draw the same values as one scalar call per offer.
            r = self.rng.integers(1, self.seen + 2 + np.arange(len(rest)))
            for s, ri in zip(rest, r):
                if ri <= self.capacity:
                    self.slots[ri - 1] = s
        self.seen += len(rest)
        return self

    def sample_candidates(self, m: int, rng: np.random.Generator) -> tuple[np.ndarray, list]:
        """Draw ``m`` distinct slots uniformly without replacement.

        Returns (slot indices, samples). The buffer itself is untouched.
        """
        if m > len(self.slots):
            raise ValueError(f"cannot draw {m} candidates from a buffer holding {len(self.slots)}")
        idx = rng.choice(len(self.slots), size=m, replace=False)
        return idx, [self.slots[i] for i in idx]

    # Projection batches follow the same contract as candidate draws.
    sample_projection_batch = sample_candidates

    def dump(self, path) -> None:
        doc = {
            "format": BUFFER_FORMAT,
            "version": BUFFER_VERSION,
            "capacity": self.capacity,
            "seen": self.seen,
            "seed": self.seed,
            "rng_state": self.rng.bit_generator.state,
            "slots": [s.to_dict() for s in self.slots],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def restore(cls, path) -> "LongTermBuffer":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != BUFFER_FORMAT or doc.get("version") != BUFFER_VERSION:
            raise ValueError(f"{path}: not a version {BUFFER_VERSION} buffer dump")
        buf = cls(doc["capacity"], doc["seed"])
        buf.seen = doc["seen"]
        buf.slots = [Sample.from_dict(d) for d in doc["slots"]]
        buf.rng.bit_generator.state = doc["rng_state"]
        return buf


class TemporalBuffer:
    """Holds the most recently trained batch."""

    def __init__(self, batch=()):
        self.batch = list(batch)

    def __len__(self):
        return len(self.batch)

    def set(self, batch) -> "TemporalBuffer":
        self.batch = list(batch)
        return self
