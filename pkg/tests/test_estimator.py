import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from syrem.estimator import ContinualEndpointRegressor
from syrem.stream import StreamConfig, TaskSpec, build_stream, generate_datasets

SMALL = dict(hidden_dims=(12,), n_heads=3, batch_size=4, m_candidates=8, buffer_capacity=20)


def toy_stream(n_train=40, seed=0):
    tasks = [TaskSpec(1, "constant_velocity", {"noise_sigma": 0.05}, 1, n_train, 8, seed),
             TaskSpec(2, "constant_turn", {"noise_sigma": 0.05}, 1, n_train, 8, seed)]
    cfg = StreamConfig(tasks, batch_size=4, seed=seed)
    return cfg, generate_datasets(cfg)


def train(est, cfg, data, upto=None):
    for k, sb in enumerate(build_stream(cfg, data)):
        if upto is not None and k >= upto:
            break
        est.partial_fit_samples(sb.batch)
    return est


def test_sklearn_params_and_clone():
    est = ContinualEndpointRegressor(strategy="vanilla_gp", lr=0.01, **SMALL)
    params = est.get_params()
    assert params["strategy"] == "vanilla_gp" and params["lr"] == 0.01
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "params_")
    est.set_params(strategy="syrem")
    assert est.strategy == "syrem"


def test_fit_predict_score(rng):
    X, y = rng.normal(size=(30, 6)), rng.normal(size=(30, 2))
    est = ContinualEndpointRegressor(**SMALL).fit(X, y)
    assert est.predict(X).shape == (30, 3, 2)
    assert est.n_steps_ == 8 and est.n_features_in_ == 6
    assert est.score(X, y) <= 0
    with pytest.raises(ValueError):
        est.predict(rng.normal(size=(2, 5)))
    with pytest.raises(ValueError):
        est.fit(X, y[:, :1])


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        ContinualEndpointRegressor().predict(np.zeros((1, 3)))


@pytest.mark.parametrize("bad", [dict(strategy="ewc"), dict(m_candidates=15), dict(batch_size=0),
                                 dict(gc_mode="median"), dict(strategy="vanilla", rehearsal=True),
                                 dict(strategy="vanilla", projection=True)])
def test_invalid_hyperparameters(bad, rng):
    with pytest.raises(ValueError):
        ContinualEndpointRegressor(**bad).fit(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))


def test_partial_fit_arrays_accumulate(rng):
    est = ContinualEndpointRegressor(strategy="syrem", **SMALL)
    for t in range(6):
        est.partial_fit(rng.normal(size=(4, 5)), rng.normal(size=(4, 2)), task_id=t // 3)
    assert est.n_steps_ == 6 and len(est.buffer_) == 20 and est.buffer_.seen == 24
    ids = [s.case_id for s in est.buffer_.slots]
    assert len(set(ids)) == 20 and set(ids) <= set(range(24))


def run_strategy(strategy, n_steps=None, **kw):
    cfg, data = toy_stream()
    params = dict(SMALL, **kw)
    return train(ContinualEndpointRegressor(strategy=strategy, **params), cfg, data, n_steps)


def test_syrem_without_mechanisms_is_vanilla():
    a = run_strategy("syrem", rehearsal=False, projection=False)
    b = run_strategy("vanilla")
    assert np.array_equal(a.params_, b.params_)


def test_syrem_without_rehearsal_is_vanilla_gp():
    cfg, data = toy_stream(n_train=200)
    kw = dict(SMALL, head_coupling=0.0)
    a = train(ContinualEndpointRegressor(strategy="syrem", rehearsal=False, **kw), cfg, data)
    b = train(ContinualEndpointRegressor(strategy="vanilla_gp", **kw), cfg, data)
    assert any(e["projected"] for e in b.step_log_)
    assert np.array_equal(a.params_, b.params_)


def test_cold_start_first_step_is_vanilla():
    a, b = run_strategy("syrem", n_steps=1), run_strategy("vanilla", n_steps=1)
    assert np.array_equal(a.params_, b.params_)
    assert not a.step_log_[0]["rehearsed"] and not a.step_log_[0]["projected"]


def test_syrem_and_random_variant_split_at_first_rehearsal():
    # rehearsal becomes eligible once the buffer holds m_candidates = 8 samples (after step 2)
    for k in (1, 2):
        assert np.array_equal(run_strategy("syrem", k).params_, run_strategy("syrem_r", k).params_)
    a, b = run_strategy("syrem", 3), run_strategy("syrem_r", 3)
    assert a.step_log_[2]["rehearsed"] and b.step_log_[2]["rehearsed"]
    assert not np.array_equal(a.params_, b.params_)


def test_projection_inactive_run_matches_unprojected(rng):
    # one repeated case: every gradient points the same way, so projection never triggers
    x, y = rng.normal(size=(1, 5)), rng.normal(size=(1, 2))
    X, Y = np.repeat(x, 40, axis=0), np.repeat(y, 40, axis=0)
    a = ContinualEndpointRegressor(strategy="syrem", **SMALL).fit(X, Y)
    b = ContinualEndpointRegressor(strategy="syrem", projection=False, **SMALL).fit(X, Y)
    assert not any(e["projected"] for e in a.step_log_)
    assert any(e["rehearsed"] for e in a.step_log_)
    assert np.array_equal(a.params_, b.params_)


def test_buffer_smaller_than_candidates_never_rehearses():
    est = run_strategy("syrem", buffer_capacity=5)
    assert len(est.buffer_) == 5
    assert not any(e["rehearsed"] for e in est.step_log_)
    assert all(e["projected"] in (True, False) for e in est.step_log_)


def test_similarity_selection_beats_random_on_average():
    a, b = run_strategy("syrem"), run_strategy("syrem_r")
    assert np.mean([s[3] for s in a.similarity_trace_]) > np.mean([s[3] for s in b.similarity_trace_])
    steps = {s[0] for s in a.similarity_trace_}
    assert all(sum(1 for s in a.similarity_trace_ if s[0] == k) == 4 for k in steps)


def test_vanilla_keeps_no_buffer():
    est = run_strategy("vanilla")
    assert len(est.buffer_) == 0 and len(est.temporal_) == 0
    gp = run_strategy("vanilla_gp")
    assert len(gp.buffer_) == 20 and len(gp.temporal_) == 0


def test_determinism_and_seed_sensitivity():
    a, b = run_strategy("syrem"), run_strategy("syrem")
    assert np.array_equal(a.params_, b.params_)
    assert a.similarity_trace_ == b.similarity_trace_
    c = run_strategy("syrem", selection_seed=1)
    assert not np.array_equal(a.params_, c.params_)


def test_step_log_records_both_buffer_draws():
    est = run_strategy("syrem")
    late = est.step_log_[-1]
    assert len(late["candidate_indices"]) == 8 and len(set(late["candidate_indices"])) == 8
    assert len(late["projection_indices"]) == 4
    assert "candidate_indices" not in est.step_log_[0] and "projection_indices" not in est.step_log_[0]
