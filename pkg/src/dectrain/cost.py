"""Analytic FLOP model and the per-episode cost ledger.

Counting conventions (all per single input row unless noted):

* dense layer forward ``in -> out``: ``2*in*out + out``
* backward pass: twice the matching forward
* Adam update: 10 FLOPs per updated parameter
* tanh: not counted (folded into the dense cost)
* summary statistics (mean/median/max/min) over ``n`` values:
  ``n`` for the mean, ``n - 1`` each for max and min, and a comparison sort
  of ``n*ceil(log2 n)`` for the median
* population variance over ``n`` values: ``3n``
* NLL per prediction: 6; relative utility: 2; greedy threshold: 2

Window frames whose ensemble outputs are still valid for the current
weights are reused rather than recomputed, and only recomputations are
charged.

The learner stands in for a dense per-pixel predictor, so every learner
forward/backward is charged ``pixels_per_frame`` times.  Decision-net work
operates on one compact feature vector and is charged once.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

CATEGORIES = ("inference", "train", "dec1", "dec2")
DEFAULT_PIXELS_PER_FRAME = 224 * 224

_KINDS = (
    "dense_forward",
    "dense_backward",
    "mlp_forward",
    "mlp_backward",
    "adam",
    "stats",
    "variance",
    "nll",
    "utility",
    "threshold",
)


def flops_of(op_kind: str, shape=(), count: int = 1) -> int:
    """FLOPs of ``count`` applications of ``op_kind`` on ``shape``.

    ``shape`` is ``(in, out)`` for dense layers, the list of layer widths for
    whole MLPs, ``(n_params,)`` for Adam and ``(n,)`` for reductions.
    """
    if op_kind not in _KINDS:
        raise ValueError(f"unknown op kind {op_kind!r}")
    if count < 0:
        raise ValueError("count must be non-negative")
    if op_kind == "dense_forward":
        n_in, n_out = shape
        per = 2 * n_in * n_out + n_out
    elif op_kind == "dense_backward":
        per = 2 * flops_of("dense_forward", shape)
    elif op_kind == "mlp_forward":
        widths = list(shape)
        per = sum(flops_of("dense_forward", (a, b)) for a, b in zip(widths[:-1], widths[1:]))
    elif op_kind == "mlp_backward":
        per = 2 * flops_of("mlp_forward", shape)
    elif op_kind == "adam":
        (n,) = shape
        per = 10 * n
    elif op_kind == "stats":
        (n,) = shape
        per = n + 2 * (n - 1) + n * max(1, math.ceil(math.log2(max(n, 2))))
    elif op_kind == "variance":
        (n,) = shape
        per = 3 * n
    elif op_kind == "nll":
        per = 6
    elif op_kind == "utility":
        per = 2
    else:
        per = 2
    return int(per) * int(count)


@dataclass
class CostModel:
    """Per-event FLOP costs for one learner/decision-net configuration."""

    d_in: int = 8
    hidden: int = 16
    n_members: int = 5
    trainable_params: int = 0
    pixels_per_frame: int = DEFAULT_PIXELS_PER_FRAME
    decision_widths: Sequence[int] = (42, 32, 32, 1)
    replay_batch: int = 3

    @property
    def member_widths(self):
        return (self.d_in, self.hidden, self.hidden, 2)

    def ensemble_frame(self) -> int:
        """Ensemble forward on one frame plus mean/variance aggregation."""
        E, P = self.n_members, self.pixels_per_frame
        fwd = flops_of("mlp_forward", self.member_widths, count=E * P)
        agg = P * (E + flops_of("variance", (E,)) + 2 * E)
        return fwd + agg

    def inference(self) -> int:
        return self.ensemble_frame()

    def train(self, batch: int | None = None) -> int:
        b = self.replay_batch if batch is None else batch
        E, P = self.n_members, self.pixels_per_frame
        fwd = flops_of("mlp_forward", self.member_widths, count=E * P * b)
        bwd = flops_of("mlp_backward", self.member_widths, count=E * P * b)
        loss = flops_of("nll", count=E * P * b)
        return fwd + bwd + loss + flops_of("adam", (self.trainable_params,), count=E)

    def label_inference(self) -> int:
        """Extra post-training inference on the current frame and its utility."""
        P, E = self.pixels_per_frame, self.n_members
        return (
            flops_of("mlp_forward", self.member_widths, count=E * P)
            + flops_of("nll", count=E * P)
            + flops_of("utility")
        )

    def decision_features(self, recomputed_frames: int = 2, window: int = 3) -> int:
        """Feature assembly: stale window frames re-run through the ensemble,
        the current-loss term, and two sets of summary statistics."""
        E, P = self.n_members, self.pixels_per_frame
        return (
            recomputed_frames * self.ensemble_frame()
            + flops_of("nll", count=E * P)
            + 2 * flops_of("stats", (window + 1,))
        )

    def decision_forward(self, batch: int = 1) -> int:
        return flops_of("mlp_forward", self.decision_widths, count=batch)

    def decision_every_step(self, recomputed_frames: int = 2) -> int:
        return self.decision_features(recomputed_frames) + self.decision_forward() + flops_of("threshold")

    def decision_update(self, batch_sizes: Sequence[int]) -> int:
        n_params = sum(a * b + b for a, b in zip(self.decision_widths[:-1], self.decision_widths[1:]))
        total = 0
        for b in batch_sizes:
            total += flops_of("mlp_forward", self.decision_widths, count=b)
            total += flops_of("mlp_backward", self.decision_widths, count=b)
            total += flops_of("adam", (n_params,))
        return total


@dataclass
class CostLedger:
    """Per-timestep FLOP records with running per-category sums."""

    entries: list = field(default_factory=list)
    sums: dict = field(default_factory=lambda: {c: 0 for c in CATEGORIES})
    counts: dict = field(default_factory=lambda: {c: 0 for c in CATEGORIES})
    timesteps: set = field(default_factory=set)

    def record(self, category: str, flops: int, t: int | None = None) -> None:
        if category not in CATEGORIES:
            raise ValueError(f"unknown cost category {category!r}")
        if flops < 0:
            raise ValueError("flops must be non-negative")
        flops = int(flops)
        self.entries.append((t, category, flops))
        self.sums[category] += flops
        self.counts[category] += 1
        if t is not None:
            self.timesteps.add(t)

    def total(self) -> int:
        return sum(self.sums.values())

    def per_timestep(self) -> dict:
        out = defaultdict(int)
        for t, _, flops in self.entries:
            out[t] += flops
        return dict(out)

    def breakdown(self, n_timesteps: int | None = None) -> dict:
        """``{category: (total, average per timestep)}`` plus a ``"total"`` row."""
        n = n_timesteps if n_timesteps is not None else len(self.timesteps)
        rows = {}
        for c in CATEGORIES + ("total",):
            tot = self.total() if c == "total" else self.sums[c]
            rows[c] = (tot, tot / n if n else 0.0)
        return rows

    def write_breakdown_csv(self, path, n_timesteps: int | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["category", "total_flops", "avg_per_timestep"])
            for c, (tot, avg) in self.breakdown(n_timesteps).items():
                w.writerow([c, tot, repr(float(avg))])


def total_cost(n, n_train, c_inf, c_train, c_dec1=0, c_dec2=0):
    """Closed-form episode cost for constant per-step costs."""
    return n * c_inf + n_train * c_train + n * c_dec1 + n_train * c_dec2
