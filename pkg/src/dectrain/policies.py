"""Episode runner for the train/no-train policies."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._rng import substream
from .cost import CostLedger, CostModel
from .decision import (
    ONLINE_DRAWS,
    ONLINE_EPOCHS,
    Action,
    DecisionBuffers,
    DecisionNet,
    features_from_outputs,
    greedy_decide,
    online_update_decision,
    predict_utility,
)
from .learner import nll_loss
from .metrics import DELTA1_THRESHOLD
from .trainer import LearnerReplayBuffer, train_step, true_next_utility

FIRST_DECISION_T = 2
RECORD_COLUMNS = (
    "t",
    "action",
    "u_pred",
    "u_true",
    "loss_before",
    "loss_after",
    "pred",
    "y_true",
    "delta1_hit",
    "flops_inf",
    "flops_train",
    "flops_dec1",
    "flops_dec2",
    "pose_available",
)
WARMUP = "warmup"


@dataclass(frozen=True)
class NoTrain:
    name = "no_train"

    @property
    def parameter(self):
        return None


@dataclass(frozen=True)
class AllTrain:
    name = "all_train"

    @property
    def parameter(self):
        return None


@dataclass(frozen=True)
class FixedPeriodic:
    beta: float
    name = "fixed_periodic"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta!r}")

    @property
    def parameter(self):
        return self.beta


@dataclass(frozen=True)
class GreedyOracle:
    alpha: float
    name = "greedy_oracle"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    @property
    def parameter(self):
        return self.alpha


@dataclass
class DecTrain:
    """Learned-utility policy.

    ``utility_fn`` replaces the decision net when given; it receives a
    :class:`StepContext` and returns the utility estimate.  Online updates of
    the net only happen when it is the one making predictions.
    """

    alpha: float
    net: Optional[DecisionNet] = None
    buffers: Optional[DecisionBuffers] = None
    utility_fn: Optional[Callable] = None
    online_update: bool = True
    online_epochs: int = ONLINE_EPOCHS
    online_draws: int = ONLINE_DRAWS
    name = "dectrain"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        if self.net is None and self.utility_fn is None:
            raise ValueError("DecTrain needs a decision net or a utility_fn")
        if self.net is not None and self.buffers is None:
            self.buffers = DecisionBuffers()

    @property
    def parameter(self):
        return self.alpha


@dataclass
class StepContext:
    t: int
    learner: object
    current: object
    next: object
    buffer: LearnerReplayBuffer
    replay_rng_factory: Callable


@dataclass
class TimestepRecord:
    t: int
    action: str
    u_pred: Optional[float]
    u_true: Optional[float]
    loss_before: float
    loss_after: Optional[float]
    pred: float
    y_true: float
    delta1_hit: bool
    flops_inf: int = 0
    flops_train: int = 0
    flops_dec1: int = 0
    flops_dec2: int = 0
    pose_available: bool = True
    psi: Optional[np.ndarray] = field(default=None, repr=False)
    u_realized: Optional[float] = None
    degenerate: bool = False

    @property
    def trained(self):
        return self.action == Action.TRAIN.value

    @property
    def decided(self):
        return self.action != WARMUP

    def row(self):
        def num(v):
            return "" if v is None else repr(float(v))

        return [
            self.t,
            self.action,
            num(self.u_pred),
            num(self.u_true),
            num(self.loss_before),
            num(self.loss_after),
            num(self.pred),
            num(self.y_true),
            int(self.delta1_hit),
            self.flops_inf,
            self.flops_train,
            self.flops_dec1,
            self.flops_dec2,
            int(self.pose_available),
        ]


def fixed_periodic_schedule(beta, n):
    """``n`` evenly spaced flags with exactly ``round(beta*n)`` set."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta!r}")
    k = int(math.floor(beta * n + 0.5))
    return [((i + 1) * k) // n > (i * k) // n for i in range(n)] if n else []


def oracle_decide(learner, current, buffer, nxt, alpha, rng):
    """Probe-train on ``current`` and keep the step only if it pays off.

    Returns ``(action, committed, utility, report, degenerate)``; on
    ``NO_TRAIN`` the learner is restored bitwise.
    """
    snap = learner.snapshot()
    u, report, degenerate = true_next_utility(learner, current, buffer, nxt, rng, commit=True)
    action = Action.NO_TRAIN if degenerate else greedy_decide(u, alpha)
    if action is Action.TRAIN:
        return action, True, u, report, degenerate
    learner.restore(snap)
    return action, False, u, report, degenerate


def perfect_utility(ctx: StepContext) -> float:
    """Ground-truth next-sample utility (simulator peek); 0 at the last step."""
    if ctx.next is None:
        return 0.0
    u, _, degenerate = true_next_utility(
        ctx.learner, ctx.current, ctx.buffer, ctx.next, ctx.replay_rng_factory(), commit=False
    )
    return 0.0 if degenerate else u


def _delta1_hit(pred, y):
    return abs(pred - y) / y <= DELTA1_THRESHOLD


class _FrameCache:
    """Per-frame ensemble outputs tagged with the weight version that produced them."""

    def __init__(self, learner, stream):
        self.learner = learner
        self.stream = stream
        self._store = {}

    def get(self, t):
        """``(mu, s, recomputed)`` for frame ``t`` under the current weights."""
        hit = self._store.get(t)
        if hit is not None and hit[0] == self.learner.version_:
            return hit[1], hit[2], False
        mu, s = self.learner.member_outputs(self.stream[t].x)
        mu, s = mu[:, 0], s[:, 0]
        self._store[t] = (self.learner.version_, mu, s)
        self._store.pop(t - FIRST_DECISION_T - 1, None)
        return mu, s, True


def run_episode(
    policy,
    stream,
    learner,
    ledger: Optional[CostLedger] = None,
    seed: int = 0,
    cost_model: Optional[CostModel] = None,
    buffer: Optional[LearnerReplayBuffer] = None,
    collect_features: bool = False,
):
    """Run one policy over a stream, mutating ``learner`` (and the DecTrain net).

    Timesteps before the first full feature window are inference-only.
    """
    n = len(stream)
    if n < FIRST_DECISION_T + 1:
        raise ValueError(f"stream needs at least {FIRST_DECISION_T + 1} samples, got {n}")
    ledger = CostLedger() if ledger is None else ledger
    if cost_model is None:
        cost_model = CostModel(
            d_in=learner.n_features_in_,
            hidden=learner.hidden,
            n_members=learner.n_members,
            trainable_params=learner.n_parameters(trainable_only=True),
        )
    buffer = LearnerReplayBuffer() if buffer is None else buffer
    c_inf = cost_model.inference()
    schedule = None
    if isinstance(policy, FixedPeriodic):
        schedule = fixed_periodic_schedule(policy.beta, n - FIRST_DECISION_T)
    is_dectrain = isinstance(policy, DecTrain)
    need_window = is_dectrain or collect_features
    decision_rng = substream(seed, "decision-online")
    cache = _FrameCache(learner, stream)
    records = []

    for t in range(n):
        cur = stream[t]

        def replay_rng(t=t):
            return substream(seed, "replay", t)

        mu_c, s_c, _ = cache.get(t)
        pred = float(mu_c.mean())
        la = float(np.mean(nll_loss(mu_c, s_c, cur.y_pseudo)))
        ledger.record("inference", c_inf, t)
        rec = TimestepRecord(
            t, Action.NO_TRAIN.value, None, None, la, None, pred, cur.y_true,
            _delta1_hit(pred, cur.y_true), flops_inf=c_inf, pose_available=cur.pose_available,
        )
        if t < FIRST_DECISION_T:
            rec.action = WARMUP
            records.append(rec)
            if cur.pose_available:
                buffer.maybe_update(cur)
            continue

        psi = None
        recomputed = 0
        if need_window:
            outs = [cache.get(t - 2), cache.get(t - 1), (mu_c, s_c, False)]
            recomputed = sum(o[2] for o in outs)
            mu_w = np.stack([o[0] for o in outs], axis=1)
            s_w = np.stack([o[1] for o in outs], axis=1)
            psi = features_from_outputs(stream[t - 2 : t + 1], mu_w, s_w)
        rec.psi = psi if collect_features else None
        nxt = stream[t + 1] if t + 1 < n else None
        i = t - FIRST_DECISION_T

        report = None
        if isinstance(policy, NoTrain):
            action = Action.NO_TRAIN
        elif isinstance(policy, AllTrain):
            action = Action.TRAIN
        elif schedule is not None:
            action = Action.TRAIN if schedule[i] else Action.NO_TRAIN
        elif isinstance(policy, GreedyOracle):
            action = Action.NO_TRAIN
            if cur.pose_available and nxt is not None:
                action, _, u, report, degenerate = oracle_decide(
                    learner, cur, buffer, nxt, policy.alpha, replay_rng()
                )
                rec.u_true = u
                rec.degenerate = degenerate
        else:
            ctx = StepContext(t, learner, cur, nxt, buffer, replay_rng)
            if policy.utility_fn is not None:
                u_hat = float(policy.utility_fn(ctx))
            else:
                u_hat = predict_utility(policy.net, psi)
            rec.u_pred = u_hat
            rec.flops_dec1 = cost_model.decision_every_step(recomputed)
            ledger.record("dec1", rec.flops_dec1, t)
            action = greedy_decide(u_hat, policy.alpha)

        if not cur.pose_available:
            action = Action.NO_TRAIN

        if action is Action.TRAIN:
            if report is None:
                report = train_step(learner, cur, buffer, replay_rng(), loss_before=la)
            rec.action = Action.TRAIN.value
            rec.loss_after = report.loss_after
            rec.u_realized = None if report.degenerate else report.realized_utility
            rec.degenerate = rec.degenerate or report.degenerate
            rec.flops_train = cost_model.train(report.batch_size)
            ledger.record("train", rec.flops_train, t)
            if is_dectrain:
                # the label inference leaves frame t valid for the next window
                cache.get(t)
                dec2 = cost_model.label_inference()
                if policy.utility_fn is None and policy.online_update and not report.degenerate:
                    sizes = online_update_decision(
                        policy.net, psi, report.realized_utility, policy.buffers, decision_rng,
                        epochs=policy.online_epochs, draws=policy.online_draws,
                    )
                    dec2 += cost_model.decision_update(sizes)
                rec.flops_dec2 = dec2
                ledger.record("dec2", dec2, t)
        if cur.pose_available:
            buffer.maybe_update(cur)
        records.append(rec)
    return records


def decisions(records):
    """Boolean train flags over the decided timesteps."""
    return [r.trained for r in records if r.decided]


def write_records_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_records_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
