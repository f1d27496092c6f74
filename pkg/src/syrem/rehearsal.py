"""Gradient-similarity scoring of buffer candidates and the rehearsal/total losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .memory import Sample, stack
from .net import EndpointMLP

# Gradients with a norm below this are treated as zero and score 0.
ZERO_NORM = 1e-12
GC_MODES = ("batch_mean", "last_sample")


@dataclass(frozen=True)
class ScoredCandidate:
    sample: Sample
    score: float
    buffer_index: int


@dataclass(frozen=True)
class RehearsalSet:
    samples: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    buffer_indices: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)


def cosine_score(g_c, g_k) -> float:
    g_c = np.asarray(g_c, dtype=float)
    g_k = np.asarray(g_k, dtype=float)
    if g_c.shape != g_k.shape:
        raise ValueError(f"misaligned gradients: {g_c.shape} vs {g_k.shape}")
    n_c = np.linalg.norm(g_c)
    n_k = np.linalg.norm(g_k)
    if n_c < ZERO_NORM or n_k < ZERO_NORM:
        return 0.0
    return float(np.dot(g_c, g_k) / (n_c * n_k))


def reference_gradient(model: EndpointMLP, params, temporal_batch, gc_mode="batch_mean"):
    """Gradient of the loss on the last observed batch (or just its last sample)."""
    if not temporal_batch:
        raise ValueError("temporal buffer is empty")
    if gc_mode == "batch_mean":
        ref = temporal_batch
    elif gc_mode == "last_sample":
        ref = temporal_batch[-1:]
    else:
        raise ValueError(f"gc_mode must be one of {GC_MODES}, got {gc_mode!r}")
    return model.loss_and_grad(params, *stack(ref))[1]


def score_candidates(model: EndpointMLP, params, temporal_batch, candidates,
                     buffer_indices=None, gc_mode="batch_mean") -> list[ScoredCandidate]:
    """Cosine similarity of every candidate's own loss gradient against the reference gradient."""
    if buffer_indices is None:
        buffer_indices = range(len(candidates))
    g_c = reference_gradient(model, params, temporal_batch, gc_mode)
    _, g_k = model.per_sample_grads(params, *stack(candidates))
    return [ScoredCandidate(s, cosine_score(g_c, g), int(i))
            for s, g, i in zip(candidates, g_k, buffer_indices)]


def rank(scored: list[ScoredCandidate]) -> list[ScoredCandidate]:
    """Descending score; equal scores ordered by ascending buffer index."""
    return sorted(scored, key=lambda c: (-c.score, c.buffer_index))


def select_rehearsal(model: EndpointMLP, params, temporal_batch, candidates, b: int,
                     buffer_indices=None, gc_mode="batch_mean") -> RehearsalSet:
    """Keep the ``b`` candidates whose gradients point most nearly along the reference gradient."""
    if b < 1:
        raise ValueError("b must be >= 1")
    if len(candidates) < b:
        raise ValueError(f"need at least {b} candidates, got {len(candidates)}")
    top = rank(score_candidates(model, params, temporal_batch, candidates,
                                buffer_indices, gc_mode))[:b]
    return RehearsalSet([c.sample for c in top], [c.score for c in top],
                        [c.buffer_index for c in top])


def rehearsal_loss(model: EndpointMLP, params, reh: RehearsalSet) -> float:
    if len(reh) == 0:
        raise ValueError("rehearsal set is empty")
    return model.loss_and_grad(params, *stack(reh.samples))[0]


def total_loss_and_grad(model: EndpointMLP, params, current_batch, reh: RehearsalSet | None = None):
    """Unweighted sum of the current-batch mean loss and the rehearsal mean loss, with gradient."""
    loss, grad = model.loss_and_grad(params, *stack(current_batch))
    if reh is not None and len(reh):
        r_loss, r_grad = model.loss_and_grad(params, *stack(reh.samples))
        loss, grad = loss + r_loss, grad + r_grad
    return loss, grad


def total_loss(model: EndpointMLP, params, current_batch, reh: RehearsalSet | None = None) -> float:
    return total_loss_and_grad(model, params, current_batch, reh)[0]
