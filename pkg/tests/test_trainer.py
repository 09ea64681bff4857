import numpy as np
import pytest

from dectrain.stream import StreamSample
from dectrain.trainer import (
    LearnerReplayBuffer,
    current_loss,
    relative_utility,
    train_step,
    true_next_utility,
)


def sample(x, y=50.0, t=0):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return StreamSample(t, x, y, y, 1.0, np.zeros(10), 100, 0, True)


def test_relative_utility_values():
    assert relative_utility(2.0, 1.5) == (0.25, False)
    assert relative_utility(2.0, 3.0) == (-0.5, False)
    assert relative_utility(0.0, 1.0) == (0.0, True)
    assert relative_utility(-1.0, -2.0) == (0.0, True)


def test_buffer_first_insert_always():
    buf = LearnerReplayBuffer(capacity=3, rho=10.0)
    assert buf.maybe_update(sample([0.0]))
    assert len(buf) == 1


def test_buffer_gate_is_strict():
    buf = LearnerReplayBuffer(capacity=5, rho=0.5)
    buf.maybe_update(sample([0.0]))
    assert not buf.maybe_update(sample([0.5]))
    assert not buf.maybe_update(sample([0.2]))
    assert buf.maybe_update(sample([0.5000001]))


def test_buffer_fifo_eviction():
    buf = LearnerReplayBuffer(capacity=3, rho=0.5)
    for i in range(5):
        buf.maybe_update(sample([float(i)], t=i))
    assert [s.t for s in buf] == [2, 3, 4]


def test_buffer_draw_without_replacement():
    buf = LearnerReplayBuffer(capacity=10, rho=0.0)
    for i in range(5):
        buf.maybe_update(sample([float(i)], t=i))
    for seed in range(20):
        d = buf.draw(np.random.default_rng(seed))
        assert len(d) == 2
        assert d[0].t != d[1].t


def test_draw_from_small_buffers():
    buf = LearnerReplayBuffer()
    assert buf.draw(np.random.default_rng(0)) == []
    buf.maybe_update(sample([0.0]))
    assert len(buf.draw(np.random.default_rng(0))) == 1


def test_train_step_batch_is_current_plus_two(learner, small_stream):
    buf = LearnerReplayBuffer()
    for s in small_stream[:20]:
        buf.maybe_update(s)
    rep = train_step(learner, small_stream[20], buf, np.random.default_rng(0))
    assert rep.batch_size == 3


def test_train_step_with_empty_buffer_uses_current_only(learner, small_stream):
    rep = train_step(learner, small_stream[5], LearnerReplayBuffer(), np.random.default_rng(0))
    assert rep.batch_size == 1


def test_train_step_reports_post_step_loss(learner, small_stream):
    cur = small_stream[10]
    before = current_loss(learner, cur)
    rep = train_step(learner, cur, LearnerReplayBuffer(), np.random.default_rng(0))
    assert rep.loss_before == pytest.approx(before)
    assert rep.loss_after == pytest.approx(current_loss(learner, cur))
    u, _ = relative_utility(rep.loss_before, rep.loss_after)
    assert rep.realized_utility == pytest.approx(u)


def test_single_sample_step_lowers_its_loss(learner, small_stream):
    cur = small_stream[30]
    rep = train_step(learner, cur, LearnerReplayBuffer(), np.random.default_rng(0))
    assert rep.loss_after < rep.loss_before


def test_true_next_utility_restores_learner(learner, small_stream):
    ref = {k: v.copy() for k, v in learner.params_.items()}
    u, rep, _ = true_next_utility(learner, small_stream[10], LearnerReplayBuffer(), small_stream[11],
                                  np.random.default_rng(0))
    for k in ref:
        assert np.array_equal(learner.params_[k], ref[k])
    assert np.isfinite(u)


def test_true_next_utility_commit_equals_training(learner, small_stream):
    twin = learner.copy()
    buf = LearnerReplayBuffer()
    true_next_utility(learner, small_stream[10], buf, small_stream[11], np.random.default_rng(1), commit=True)
    train_step(twin, small_stream[10], buf, np.random.default_rng(1))
    for k in twin.params_:
        assert np.array_equal(learner.params_[k], twin.params_[k])
