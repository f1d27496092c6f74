"""Closest-gradient projection onto the half-space ``<g, g_mem> >= 0``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProjectionOutcome:
    gradient: np.ndarray
    projected: bool
    inner_product: float
    lam: float = 0.0


def project(g, g_mem, eps: float = 1e-12) -> ProjectionOutcome:
    """Return ``g`` if it does not increase the memory loss to first order, else its projection.

    The projection solves ``min 0.5*||g - h||^2 s.t. h . g_mem >= 0``; with the
    constraint active the multiplier is ``lam = -g.g_mem / ||g_mem||^2`` and
    ``h = g + lam * g_mem``. A memory gradient with squared norm below ``eps``
    carries no direction and leaves ``g`` untouched.
    """
    g = np.asarray(g, dtype=float)
    g_mem = np.asarray(g_mem, dtype=float)
    if g.shape != g_mem.shape:
        raise ValueError(f"misaligned gradients: {g.shape} vs {g_mem.shape}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    inner = float(np.dot(g, g_mem))
    sq = float(np.dot(g_mem, g_mem))
    if inner >= 0 or sq < eps:
        return ProjectionOutcome(g, False, inner, 0.0)
    lam = -inner / sq
    return ProjectionOutcome(g + lam * g_mem, True, inner, lam)
