import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from syrem.memory import LongTermBuffer, Sample, TemporalBuffer, stack

from conftest import make_samples


def test_fills_in_order_before_full():
    buf = LongTermBuffer(3, seed=0).extend(["a", "b", "c"])
    assert buf.slots == ["a", "b", "c"]


def test_zero_capacity_stays_empty():
    buf = LongTermBuffer(0, seed=0).extend(range(50))
    assert len(buf) == 0 and buf.seen == 50


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 12), st.integers(0, 60), st.integers(0, 2**31))
def test_occupancy_law(capacity, k, seed):
    buf = LongTermBuffer(capacity, seed=seed)
    for i in range(k):
        buf.reservoir_insert(i)
        assert len(buf) == min(i + 1, capacity)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 12), st.lists(st.integers(0, 20), max_size=6), st.integers(0, 2**31))
def test_extend_equals_repeated_insert(capacity, chunks, seed):
    a, b = LongTermBuffer(capacity, seed=seed), LongTermBuffer(capacity, seed=seed)
    item = 0
    for n in chunks:
        batch = list(range(item, item + n))
        item += n
        a.extend(batch)
        for x in batch:
            b.reservoir_insert(x)
    assert a.slots == b.slots and a.seen == b.seen
    assert a.rng.bit_generator.state == b.rng.bit_generator.state


def test_determinism():
    a = LongTermBuffer(5, seed=9).extend(range(300))
    b = LongTermBuffer(5, seed=9).extend(range(300))
    assert a.slots == b.slots
    assert a.slots != LongTermBuffer(5, seed=10).extend(range(300)).slots


def test_monte_carlo_inclusion_within_three_sigma():
    cap, n, trials = 10, 1000, 20000
    counts = np.zeros(n)
    for t in range(trials):
        counts[LongTermBuffer(cap, seed=t).extend(range(n)).slots] += 1
    p = cap / n
    sigma = np.sqrt(trials * p * (1 - p))
    # a single element outside 3 sigma is expected ~2.7 times in 1000; allow a few
    assert np.sum(np.abs(counts - trials * p) > 3 * sigma) <= 10
    assert abs(counts.sum() - cap * trials) == 0


def test_inclusion_chi_square_small_instance():
    cap, n, trials = 3, 20, 10000
    counts = np.zeros(n)
    for t in range(trials):
        counts[LongTermBuffer(cap, seed=10_000 + t).extend(range(n)).slots] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_candidates_do_not_mutate_and_are_distinct():
    buf = LongTermBuffer(8, seed=0).extend(range(8))
    before = list(buf.slots)
    r = np.random.default_rng(0)
    idx, cands = buf.sample_candidates(8, r)
    assert sorted(cands) == before and buf.slots == before
    assert sorted(idx.tolist()) == list(range(8))
    assert [buf.slots[i] for i in idx] == cands
    one = LongTermBuffer(1).extend(["only"])
    assert one.sample_candidates(1, r)[1] == ["only"]
    with pytest.raises(ValueError):
        buf.sample_candidates(9, r)
    assert buf.sample_projection_batch(2, r)[0].shape == (2,)


def test_candidate_draws_uniform():
    buf = LongTermBuffer(10, seed=0).extend(range(10))
    r = np.random.default_rng(1)
    counts = np.zeros(10)
    for _ in range(5000):
        counts[buf.sample_candidates(3, r)[0]] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_capacity_warning():
    with pytest.warns(UserWarning):
        LongTermBuffer(100, stream_length=1000)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        LongTermBuffer(100, stream_length=2000)


def test_dump_restore_roundtrip(tmp_path, rng):
    samples = make_samples(rng, 30, 4)
    buf = LongTermBuffer(5, seed=3).extend(samples[:20])
    buf.dump(tmp_path / "b.json")
    back = LongTermBuffer.restore(tmp_path / "b.json")
    assert back.slots == buf.slots and back.seen == buf.seen
    buf.extend(samples[20:])
    back.extend(samples[20:])
    assert back.slots == buf.slots
    (tmp_path / "bad.json").write_text('{"format": "other", "version": 1}')
    with pytest.raises(ValueError):
        LongTermBuffer.restore(tmp_path / "bad.json")


def test_temporal_buffer():
    tb = TemporalBuffer()
    assert len(tb) == 0
    tb.set(["a", "b"])
    assert tb.batch == ["a", "b"]
    tb.set(["c"])
    assert tb.batch == ["c"]
    tb.set([])
    assert len(tb) == 0


def test_sample_validation_and_roundtrip(rng):
    s = make_samples(rng, 1, 3)[0]
    assert Sample.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        s.features[0] = 1.0
    with pytest.raises(ValueError):
        Sample(0, 0, [np.nan], [0, 0])
    with pytest.raises(ValueError):
        Sample(0, 0, [1.0], [0, 0], ta_speed=-1)
    with pytest.raises(ValueError):
        Sample(0, 0, [1.0], [0, 0], heading_unit=[1, 1])
    X, Y = stack(make_samples(rng, 4, 3))
    assert X.shape == (4, 3) and Y.shape == (4, 2)
