"""The train action: replay buffer, one online step, realized utility."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .learner import nll_loss

EPSILON_LOSS = 1e-12
REPLAY_DRAWS = 2


class LearnerReplayBuffer:
    """FIFO store of past samples, admitting only inputs far from all stored ones."""

    def __init__(self, capacity=300, rho=0.5):
        self.capacity = capacity
        self.rho = rho
        self._items = deque()
        self._X = None

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    @property
    def inputs(self):
        if self._X is None:
            self._X = np.array([s.x for s in self._items]).reshape(len(self._items), -1)
        return self._X

    def maybe_update(self, sample) -> bool:
        if self._items:
            dist = np.sqrt(((self.inputs - sample.x) ** 2).sum(axis=1)).min()
            if not dist > self.rho:
                return False
        if len(self._items) >= self.capacity:
            self._items.popleft()
        self._items.append(sample)
        self._X = None
        return True

    def draw(self, rng, k=REPLAY_DRAWS):
        """Up to ``k`` distinct stored samples, uniformly without replacement."""
        k = min(k, len(self._items))
        if k == 0:
            return []
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]


def maybe_update_buffer(buffer: LearnerReplayBuffer, sample) -> bool:
    return buffer.maybe_update(sample)


@dataclass
class TrainStepReport:
    loss_before: float
    loss_after: float
    realized_utility: float
    degenerate: bool
    batch_size: int
    flops_train: int = 0
    flops_extra_inference: int = 0


def relative_utility(loss_before, loss_after, eps=EPSILON_LOSS):
    """``(l_a - l_b) / l_a``; returns ``(0.0, True)`` when ``l_a < eps``."""
    if not loss_before >= eps:
        return 0.0, True
    return (loss_before - loss_after) / loss_before, False


def current_loss(learner, sample) -> float:
    """Mean member NLL of the current sample against its pseudo-label."""
    mu, s = learner.member_outputs(sample.x)
    return float(np.mean(nll_loss(mu[:, 0], s[:, 0], sample.y_pseudo)))


def train_step(learner, current, buffer, rng, cost_model=None, loss_before=None) -> TrainStepReport:
    """One optimizer step on the current sample plus up to two replayed ones.

    ``rng`` drives only the replay draw, so replaying the same generator state
    reproduces the same step.
    """
    la = current_loss(learner, current) if loss_before is None else loss_before
    batch = [current] + buffer.draw(rng)
    X = np.stack([s.x for s in batch])
    y = np.array([s.y_pseudo for s in batch])
    learner.partial_fit(X, y)
    lb = current_loss(learner, current)
    u, degenerate = relative_utility(la, lb)
    report = TrainStepReport(la, lb, u, degenerate, len(batch))
    if cost_model is not None:
        report.flops_train = cost_model.train(len(batch))
        report.flops_extra_inference = cost_model.label_inference()
    return report


def true_next_utility(learner, current, buffer, nxt, rng, commit=False):
    """Relative next-sample loss change caused by training on ``current``.

    Returns ``(utility, report, degenerate)``.  Unless ``commit`` is set the
    learner is restored bitwise afterwards.
    """
    snap = learner.snapshot()
    la = current_loss(learner, nxt)
    report = train_step(learner, current, buffer, rng)
    lb = current_loss(learner, nxt)
    u, degenerate = relative_utility(la, lb)
    if not commit:
        learner.restore(snap)
    return u, report, degenerate
