import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from syrem.memory import Sample
from syrem.net import EndpointMLP, NetConfig
from syrem.rehearsal import (RehearsalSet, cosine_score, rank, reference_gradient,
                             rehearsal_loss, score_candidates, select_rehearsal, total_loss,
                             total_loss_and_grad)

from conftest import make_samples
from oracles import brute_force_selection


def test_cosine_examples():
    assert np.isclose(cosine_score([2.0, 3.0], [2.0, 3.0]), 1.0)
    assert np.isclose(cosine_score([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]), -1.0)
    assert np.isclose(cosine_score([1.0, 1.0], [1.0, 0.0]), 1 / np.sqrt(2), atol=1e-5)
    assert cosine_score([0.0, 0.0], [1.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        cosine_score([1.0], [1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31))
def test_cosine_range(d, seed):
    r = np.random.default_rng(seed)
    assert -1 - 1e-9 <= cosine_score(r.normal(size=d), r.normal(size=d)) <= 1 + 1e-9


def test_scores_in_range_on_random_nets(rng):
    for seed in range(5):
        model = EndpointMLP(NetConfig(4, (5,), 3, "relu"))
        p = model.init_params(seed)
        for c in score_candidates(model, p, make_samples(rng, 4, 4), make_samples(rng, 12, 4)):
            assert -1 - 1e-9 <= c.score <= 1 + 1e-9


def test_exact_copy_of_temporal_sample_selected_first(small_model, rng):
    p = small_model.init_params(0)
    temporal = make_samples(rng, 1, 5)
    cands = make_samples(rng, 10, 5, start=100) + [temporal[0]]
    reh = select_rehearsal(small_model, p, temporal, cands, 3)
    assert reh.buffer_indices[0] == 10 and np.isclose(reh.scores[0], 1.0)


def test_b_equal_all_returns_all_sorted(small_model, rng):
    p = small_model.init_params(1)
    cands = make_samples(rng, 6, 5)
    reh = select_rehearsal(small_model, p, make_samples(rng, 3, 5), cands, 6)
    assert sorted(reh.buffer_indices) == list(range(6))
    assert reh.scores == sorted(reh.scores, reverse=True)


def test_matches_brute_force_16_candidates_30_params():
    model = EndpointMLP(NetConfig(3, (4,), 1, "tanh"))  # 3*4+4 + 4*2+2 = 26
    r = np.random.default_rng(5)
    for trial in range(10):
        p = model.init_params(trial)
        temporal = make_samples(r, 8, 3)
        cands = make_samples(r, 16, 3, start=50)
        idx = r.permutation(100)[:16]
        got = select_rehearsal(model, p, temporal, cands, 8, idx)
        want_idx, want_scores = brute_force_selection(model, p, temporal, cands, idx, 8)
        assert got.buffer_indices == want_idx
        assert np.allclose(got.scores, want_scores, atol=1e-12)


def test_last_sample_mode_matches_oracle(small_model, rng):
    p = small_model.init_params(3)
    temporal, cands = make_samples(rng, 5, 5), make_samples(rng, 12, 5)
    idx = np.arange(12)
    got = select_rehearsal(small_model, p, temporal, cands, 4, idx, gc_mode="last_sample")
    assert got.buffer_indices == brute_force_selection(small_model, p, temporal, cands, idx, 4,
                                                       last_only=True)[0]
    with pytest.raises(ValueError):
        reference_gradient(small_model, p, temporal, "first_sample")
    with pytest.raises(ValueError):
        reference_gradient(small_model, p, [], "batch_mean")


def test_ties_resolved_by_buffer_index(small_model, rng):
    p = small_model.init_params(0)
    temporal = make_samples(rng, 2, 5)
    base = make_samples(rng, 4, 5)
    cands = base + base  # every score appears twice
    idx = np.array([7, 3, 9, 1, 2, 8, 0, 5])
    reh = select_rehearsal(small_model, p, temporal, cands, 8, idx)
    for a, b in zip(reh.buffer_indices[::2], reh.buffer_indices[1::2]):
        assert a < b
    perm = rng.permutation(8)
    again = select_rehearsal(small_model, p, temporal, [cands[i] for i in perm], 5, idx[perm])
    assert again.buffer_indices == select_rehearsal(small_model, p, temporal, cands, 5, idx).buffer_indices


def test_selection_monotone(small_model, rng):
    p = small_model.init_params(4)
    temporal, cands = make_samples(rng, 3, 5), make_samples(rng, 16, 5)
    scored = score_candidates(small_model, p, temporal, cands)
    reh = select_rehearsal(small_model, p, temporal, cands, 8)
    chosen = set(reh.buffer_indices)
    worst_chosen = min(reh.scores)
    assert all(c.score <= worst_chosen for c in scored if c.buffer_index not in chosen)


def test_scale_invariance_of_selection(small_model, rng):
    p = small_model.init_params(2)
    temporal, cands = make_samples(rng, 3, 5), make_samples(rng, 10, 5)
    g_c = reference_gradient(small_model, p, temporal)
    _, g_k = small_model.per_sample_grads(p, np.stack([c.features for c in cands]),
                                          np.stack([c.gt_endpoint for c in cands]))
    for alpha in (1e-3, 0.5, 7.0, 1e4):
        a = np.argsort([-cosine_score(g_c, g) for g in g_k], kind="stable")[:5]
        b = np.argsort([-cosine_score(alpha * g_c, g) for g in g_k], kind="stable")[:5]
        assert set(a) == set(b)


def test_select_errors(small_model, rng):
    p = small_model.init_params(0)
    with pytest.raises(ValueError):
        select_rehearsal(small_model, p, make_samples(rng, 2, 5), make_samples(rng, 3, 5), 4)
    with pytest.raises(ValueError):
        select_rehearsal(small_model, p, make_samples(rng, 2, 5), make_samples(rng, 3, 5), 0)


def one_head_bias_model():
    return EndpointMLP(NetConfig(1, (), 1))


def sample_at(gt, case_id=0):
    return Sample(0, case_id, [0.0], gt)


def test_rehearsal_loss_examples():
    model = one_head_bias_model()
    p = np.zeros(model.n_params)  # predicts (0, 0)
    s = sample_at([1.0, 1.0])
    assert np.isclose(rehearsal_loss(model, p, RehearsalSet([s, s, s])), 2.0)
    exact = RehearsalSet([sample_at([0.0, 0.0]), sample_at([0.0, 0.0], 1)])
    assert rehearsal_loss(model, p, exact) == 0.0
    two = RehearsalSet([sample_at([1.0, 0.0]), sample_at([1.0, np.sqrt(2.0)], 1)])
    assert np.isclose(rehearsal_loss(model, p, two), 2.0)
    with pytest.raises(ValueError):
        rehearsal_loss(model, p, RehearsalSet())


def test_total_loss_examples():
    model = one_head_bias_model()
    p = np.zeros(model.n_params)
    cur = [sample_at([np.sqrt(1.5), 0.0])]
    reh = RehearsalSet([sample_at([0.0, np.sqrt(0.5)], 1)])
    assert np.isclose(total_loss(model, p, cur, None), 1.5)
    assert np.isclose(total_loss(model, p, cur, RehearsalSet()), 1.5)
    assert np.isclose(total_loss(model, p, cur, reh), 2.0)
    zero = [sample_at([0.0, 0.0])]
    assert total_loss(model, p, zero, RehearsalSet(zero)) == 0.0
    l, g = total_loss_and_grad(model, p, cur, reh)
    assert np.allclose(g, model.loss_and_grad(p, [[0.0]], [[np.sqrt(1.5), 0]])[1]
                       + model.loss_and_grad(p, [[0.0]], [[0, np.sqrt(0.5)]])[1])


def test_rank_order():
    from syrem.rehearsal import ScoredCandidate
    cs = [ScoredCandidate(None, 0.5, 4), ScoredCandidate(None, 0.9, 9), ScoredCandidate(None, 0.5, 1)]
    assert [c.buffer_index for c in rank(cs)] == [9, 1, 4]
