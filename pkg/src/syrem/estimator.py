"""Online continual-learning endpoint regressor with a scikit-learn style interface.

Each call to ``partial_fit`` is one optimisation step on one batch of the
stream. ``strategy`` picks which continual-learning mechanisms are active:

=============  ================  ========================  ===================
strategy       long-term buffer  rehearsal                 gradient projection
=============  ================  ========================  ===================
``vanilla``    no                no                        no
``vanilla_gp`` yes               no                        yes
``syrem_r``    yes               random ``B`` of ``M``     yes
``syrem``      yes               top-``B`` cosine of ``M`` yes
``jotr``       no                no                        no
=============  ================  ========================  ===================

``jotr`` trains exactly like ``vanilla``; the joint-training regime lives in
the data it is fed (see :func:`syrem.harness.run_jotr`).
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .memory import LongTermBuffer, Sample, TemporalBuffer, stack
from .net import EndpointMLP, NetConfig, OptimizerState, optimizer_step
from .projection import project
from .rehearsal import GC_MODES, RehearsalSet, rank, score_candidates, total_loss_and_grad

logger = logging.getLogger(__name__)

# strategy -> (keeps long-term buffer, rehearsal mode, projection)
STRATEGIES = {
    "vanilla": (False, None, False),
    "vanilla_gp": (True, None, True),
    "syrem_r": (True, "random", True),
    "syrem": (True, "similarity", True),
    "jotr": (False, None, False),
}


class ContinualEndpointRegressor(BaseEstimator):
    """Multi-head endpoint regressor trained online with optional rehearsal and projection.

    Parameters
    ----------
    strategy : {"vanilla", "vanilla_gp", "syrem_r", "syrem", "jotr"}
    rehearsal, projection : bool or None
        Override the strategy's default for that mechanism (None keeps it).
        Rehearsal can only be switched on for strategies that define a
        rehearsal mode.
    m_candidates : int
        Buffer candidates scored per step; must be at least ``2 * batch_size``.
    gc_mode : {"batch_mean", "last_sample"}
        Reference gradient for scoring: the mean loss of the whole last batch,
        or only its last sample.

    Attributes
    ----------
    params_ : ndarray of shape (n_params,)
    buffer_ : LongTermBuffer
    step_log_ : list of dict
        One entry per step: loss, whether rehearsal ran, projection details and the
        buffer slots drawn for scoring and for the projection batch (separate draws).
    similarity_trace_ : list of tuple
        ``(step, rank, buffer_index, score)`` for every rehearsed sample.
    """

    def __init__(self, strategy="syrem", hidden_dims=(128, 128), n_heads=6, activation="relu",
                 output_scale=10.0, head_coupling=0.9, lr=1e-3, batch_size=8, buffer_capacity=100,
                 m_candidates=16, gc_mode="batch_mean", rehearsal=None, projection=None,
                 init_seed=0, buffer_seed=0, selection_seed=0, stream_length=None):
        self.strategy = strategy
        self.hidden_dims = hidden_dims
        self.n_heads = n_heads
        self.activation = activation
        self.output_scale = output_scale
        self.head_coupling = head_coupling
        self.lr = lr
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.m_candidates = m_candidates
        self.gc_mode = gc_mode
        self.rehearsal = rehearsal
        self.projection = projection
        self.init_seed = init_seed
        self.buffer_seed = buffer_seed
        self.selection_seed = selection_seed
        self.stream_length = stream_length

    # -- setup ----------------------------------------------------------------

    def _validate_hyperparams(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {sorted(STRATEGIES)}, got {self.strategy!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.m_candidates < 2 * self.batch_size:
            raise ValueError(f"m_candidates ({self.m_candidates}) must be at least "
                             f"2 * batch_size ({2 * self.batch_size})")
        if self.gc_mode not in GC_MODES:
            raise ValueError(f"gc_mode must be one of {GC_MODES}, got {self.gc_mode!r}")
        if self.buffer_capacity < 0:
            raise ValueError("buffer_capacity must be >= 0")
        keeps_buffer, mode, proj = STRATEGIES[self.strategy]
        if self.rehearsal and mode is None:
            raise ValueError(f"strategy {self.strategy!r} has no rehearsal mechanism to enable")
        if self.projection and not keeps_buffer:
            raise ValueError(f"strategy {self.strategy!r} keeps no buffer to project against")
        self._uses_buffer = keeps_buffer
        self._rehearsal_mode = mode if self.rehearsal in (None, True) else None
        self._project = proj if self.projection is None else bool(self.projection)

    def _initialize(self, input_dim: int):
        self._validate_hyperparams()
        self.n_features_in_ = input_dim
        self.net_config_ = NetConfig(input_dim, tuple(self.hidden_dims), self.n_heads,
                                     self.activation, self.output_scale, self.head_coupling)
        self.model_ = EndpointMLP(self.net_config_)
        self.params_ = self.model_.init_params(self.init_seed)
        self.opt_state_ = OptimizerState.zeros(self.model_.n_params, lr=self.lr)
        reservoir_seq, projection_seq = np.random.SeedSequence(self.buffer_seed).spawn(2)
        candidate_seq, pick_seq = np.random.SeedSequence(self.selection_seed).spawn(2)
        self.buffer_ = LongTermBuffer(self.buffer_capacity,
                                      seed=int(reservoir_seq.generate_state(1)[0]),
                                      stream_length=self.stream_length)
        self.temporal_ = TemporalBuffer()
        self._projection_rng = np.random.default_rng(projection_seq)
        self._candidate_rng = np.random.default_rng(candidate_seq)
        self._pick_rng = np.random.default_rng(pick_seq)
        self.n_steps_ = 0
        self._n_seen = 0
        self.step_log_ = []
        self.similarity_trace_ = []

    # -- training -------------------------------------------------------------

    def fit(self, X, y):
        """Reset and make one pass over ``(X, y)`` in order, ``batch_size`` rows per step."""
        X, y = self._check_Xy(X, y)
        self._initialize(X.shape[1])
        for start in range(0, len(X), self.batch_size):
            self.partial_fit(X[start:start + self.batch_size], y[start:start + self.batch_size])
        return self

    def partial_fit(self, X, y, task_id: int = 0):
        """One optimisation step on the batch ``(X, y)``; y holds (x, y) endpoints."""
        X, y = self._check_Xy(X, y)
        if not hasattr(self, "params_"):
            self._initialize(X.shape[1])
        batch = []
        for xi, yi in zip(X, y):
            batch.append(Sample(task_id, self._n_seen, xi, yi))
            self._n_seen += 1
        return self.partial_fit_samples(batch)

    def partial_fit_samples(self, batch):
        """One optimisation step on a list of :class:`~syrem.memory.Sample`."""
        if not batch:
            raise ValueError("cannot train on an empty batch")
        if not hasattr(self, "params_"):
            self._initialize(len(batch[0].features))
        step = self.n_steps_ + 1
        log = {"step": step, "task_id": int(batch[0].task_id), "rehearsed": False,
               "projected": False, "inner_product": None, "lambda": 0.0}

        reh = None
        if (self._rehearsal_mode is not None and len(self.temporal_)
                and len(self.buffer_) >= self.m_candidates):
            reh, log["candidate_indices"] = self._rehearsal_set(step)
            log["rehearsed"] = True
            log["mean_similarity"] = float(np.mean(reh.scores))

        loss, grad = total_loss_and_grad(self.model_, self.params_, batch, reh)
        log["loss"] = loss

        if self._project and len(self.buffer_):
            b = min(self.batch_size, len(self.buffer_))
            mem_idx, mem = self.buffer_.sample_projection_batch(b, self._projection_rng)
            log["projection_indices"] = [int(i) for i in mem_idx]
            _, g_mem = self.model_.loss_and_grad(self.params_, *stack(mem))
            outcome = project(grad, g_mem)
            grad = outcome.gradient
            log.update(projected=outcome.projected, inner_product=outcome.inner_product,
                       **{"lambda": outcome.lam})

        self.params_, self.opt_state_ = optimizer_step(self.params_, grad, self.opt_state_)
        self.n_steps_ = step

        if self._uses_buffer:
            if STRATEGIES[self.strategy][1] is not None:
                self.temporal_.set(batch)
            self.buffer_.extend(batch)
        self.step_log_.append(log)
        return self

    def _rehearsal_set(self, step) -> tuple[RehearsalSet, list]:
        idx, cands = self.buffer_.sample_candidates(self.m_candidates, self._candidate_rng)
        scored = score_candidates(self.model_, self.params_, self.temporal_.batch, cands, idx,
                                  self.gc_mode)
        if self._rehearsal_mode == "similarity":
            chosen = rank(scored)[:self.batch_size]
        else:
            pick = self._pick_rng.choice(len(scored), size=self.batch_size, replace=False)
            chosen = [scored[i] for i in pick]
        for r, c in enumerate(chosen):
            self.similarity_trace_.append((step, r, c.buffer_index, c.score))
        reh = RehearsalSet([c.sample for c in chosen], [c.score for c in chosen],
                           [c.buffer_index for c in chosen])
        return reh, [int(i) for i in idx]

    # -- inference ------------------------------------------------------------

    def predict(self, X) -> np.ndarray:
        """Predicted endpoints, shape (n_samples, n_heads, 2)."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.forward(self.params_, X)

    def score(self, X, y) -> float:
        """Negative mean minimum final displacement error (higher is better)."""
        X, y = self._check_Xy(X, y)
        pred = self.predict(X)
        return -float(np.hypot(*(pred - y[:, None, :]).transpose(2, 0, 1)).min(axis=1).mean())

    @staticmethod
    def _check_Xy(X, y):
        X = check_array(X, dtype=float)
        y = check_array(y, dtype=float)
        if y.shape != (len(X), 2):
            raise ValueError(f"y must have shape ({len(X)}, 2), got {y.shape}")
        return X, y
