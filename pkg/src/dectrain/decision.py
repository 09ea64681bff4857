"""Utility prediction and the greedy train/no-train rule.

The decision input is a fixed 42-slot vector::

    [0:4)    aleatoric variance  mean, median, max, min
    [4:8)    epistemic variance  mean, median, max, min
    [8]      current loss
    [9:12)   landmark counts for frames t-2, t-1, t
    [12:42)  pose proxies for frames t-2, t-1, t (10 each)

Uncertainty statistics are taken over four evaluation points: the three
window frames with the current frame counted twice.
"""
from __future__ import annotations

import json
from collections import deque
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._nn import Adam, uniform_init
from ._rng import substream
from .exceptions import StateError, TraceParseError
from .learner import nll_loss

N_FEATURES = 42
WINDOW = 3
ALEATORIC_SLOTS = slice(0, 4)
EPISTEMIC_SLOTS = slice(4, 8)
LOSS_SLOT = 8
LANDMARK_SLOTS = slice(9, 12)
POSE_SLOTS = slice(12, 42)
VARIANCE_FLOOR = 1e-12


class Action(str, Enum):
    TRAIN = "train"
    NO_TRAIN = "no_train"


def summary_stats(values):
    """(mean, median, max, min) of a 1-D array."""
    v = np.asarray(values, dtype=np.float64)
    return np.array([v.mean(), np.median(v), v.max(), v.min()])


def window_evaluation(window, learner):
    """Member outputs on the window frames, shape ``(E, 3)`` each.

    Frames are evaluated one at a time so the values match per-frame
    inference bitwise.
    """
    if len(window) != WINDOW:
        raise ValueError(f"feature window needs exactly {WINDOW} samples, got {len(window)}")
    outs = [learner.member_outputs(s.x) for s in window]
    return np.hstack([o[0] for o in outs]), np.hstack([o[1] for o in outs])


def features_from_outputs(window, mu, s):
    psi = np.empty(N_FEATURES)
    var_a = np.exp(s).mean(axis=0)
    var_e = mu.var(axis=0)
    points = [0, 1, 2, 2]
    psi[ALEATORIC_SLOTS] = summary_stats(var_a[points])
    psi[EPISTEMIC_SLOTS] = summary_stats(var_e[points])
    cur = window[-1]
    psi[LOSS_SLOT] = np.mean(nll_loss(mu[:, -1], s[:, -1], cur.y_pseudo))
    psi[LANDMARK_SLOTS] = [w.landmark_proxy for w in window]
    psi[POSE_SLOTS] = np.concatenate([np.asarray(w.pose_proxy, dtype=np.float64) for w in window])
    return psi


def assemble_features(window, learner, net=None):
    """Raw decision features for the last three samples.

    With ``net`` given the vector is z-normalized with that net's frozen
    pretraining statistics.
    """
    mu, s = window_evaluation(window, learner)
    psi = features_from_outputs(window, mu, s)
    if net is not None:
        psi = net.normalize(psi)
    return psi


def greedy_decide(u_hat, alpha):
    """Train iff the predicted utility beats the cost threshold ``1/alpha``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    return Action.TRAIN if -1.0 / alpha + u_hat > 0 else Action.NO_TRAIN


def _pearson_terms(preds, targets):
    pc = preds - preds.mean()
    tc = targets - targets.mean()
    sp = np.sqrt(np.sum(pc * pc))
    st = np.sqrt(np.sum(tc * tc))
    return pc, tc, sp, st


def _corr_active(preds, targets):
    n = preds.shape[0]
    return n >= 2 and preds.var() >= VARIANCE_FLOOR and targets.var() >= VARIANCE_FLOOR


def decision_loss(preds, targets, corr_weight=1.0):
    """MSE plus ``corr_weight * (1 - pearson)``; the correlation part is
    dropped for fewer than two points or a (near-)constant side."""
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"preds and targets lengths differ: {p.shape[0]} vs {y.shape[0]}")
    if p.size == 0:
        raise ValueError("decision_loss needs at least one pair")
    loss = np.mean((p - y) ** 2)
    if _corr_active(p, y):
        pc, tc, sp, st = _pearson_terms(p, y)
        loss += corr_weight * (1.0 - np.sum(pc * tc) / (sp * st))
    return float(loss)


def decision_loss_grad(preds, targets, corr_weight=1.0):
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(targets, dtype=np.float64).ravel()
    g = 2.0 * (p - y) / p.size
    if _corr_active(p, y):
        pc, tc, sp, st = _pearson_terms(p, y)
        rho = np.sum(pc * tc) / (sp * st)
        g -= corr_weight * (tc / (sp * st) - rho * pc / (sp * sp))
    return g


class DecisionNet(BaseEstimator, RegressorMixin):
    """Fully connected utility regressor ``42 -> 32 -> 32 -> 1`` (tanh).

    Consumes raw feature vectors; ``fit`` freezes per-feature z-normalization
    statistics that every later ``predict``/``partial_fit`` reuses.  Targets
    are standardized the same way, so the loss is computed on standardized
    utilities and ``predict`` maps back to raw utility units.
    """

    def __init__(
        self,
        hidden=(32, 32),
        lr=1e-3,
        batch_size=512,
        max_epochs=200,
        corr_weight=1.0,
        validation_fraction=0.1,
        patience=20,
        random_state=0,
    ):
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.corr_weight = corr_weight
        self.validation_fraction = validation_fraction
        self.patience = patience
        self.random_state = random_state

    @property
    def widths(self):
        return (N_FEATURES,) + tuple(self.hidden) + (1,)

    def initialize(self, feature_mean=None, feature_scale=None, target_mean=0.0, target_scale=1.0):
        widths = self.widths
        self.weights_ = []
        self.biases_ = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            rng = substream(self.random_state, "decision-init", i)
            self.weights_.append(uniform_init(rng, a, (b, a)))
            self.biases_.append(uniform_init(rng, a, (b,)))
        self.feature_mean_ = np.zeros(N_FEATURES) if feature_mean is None else np.asarray(feature_mean, float)
        self.feature_scale_ = np.ones(N_FEATURES) if feature_scale is None else np.asarray(feature_scale, float)
        self.target_mean_ = float(target_mean)
        self.target_scale_ = float(target_scale)
        self.n_features_in_ = N_FEATURES
        self.optimizer_ = Adam(self._param_dict(), self.lr)
        return self

    def _param_dict(self):
        d = {}
        for i, (W, b) in enumerate(zip(self.weights_, self.biases_)):
            d[f"W{i}"] = W
            d[f"b{i}"] = b
        return d

    def n_parameters(self):
        return int(sum(W.size + b.size for W, b in zip(self.weights_, self.biases_)))

    def normalize(self, Psi):
        return (np.asarray(Psi, dtype=np.float64) - self.feature_mean_) / self.feature_scale_

    def _forward(self, Z):
        acts = [Z]
        h = Z
        last = len(self.weights_) - 1
        for i, (W, b) in enumerate(zip(self.weights_, self.biases_)):
            h = h @ W.T + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return acts

    def _check_psi(self, Psi):
        Psi = np.asarray(Psi, dtype=np.float64)
        if Psi.ndim == 1:
            Psi = Psi[None, :]
        if Psi.shape[-1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {Psi.shape[-1]}")
        if not np.all(np.isfinite(Psi)):
            raise ValueError("feature vector contains non-finite entries")
        return Psi

    def predict(self, Psi):
        check_is_fitted(self, "weights_")
        Psi = self._check_psi(Psi)
        out = self._forward(self.normalize(Psi))[-1][:, 0]
        return out * self.target_scale_ + self.target_mean_

    def gradient(self, Psi, targets):
        """Analytic parameter gradients of ``decision_loss`` on a raw batch."""
        Psi = self._check_psi(Psi)
        y = (np.asarray(targets, dtype=np.float64).ravel() - self.target_mean_) / self.target_scale_
        acts = self._forward(self.normalize(Psi))
        preds = acts[-1][:, 0]
        delta = decision_loss_grad(preds, y, self.corr_weight)[:, None]
        grads = {}
        for i in range(len(self.weights_) - 1, -1, -1):
            grads[f"W{i}"] = delta.T @ acts[i]
            grads[f"b{i}"] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights_[i]) * (1.0 - acts[i] ** 2)
        return grads, decision_loss(preds, y, self.corr_weight)

    def partial_fit(self, Psi, targets):
        """One Adam step of ``decision_loss`` on a raw batch."""
        check_is_fitted(self, "weights_")
        grads, loss = self.gradient(Psi, targets)
        self.optimizer_.lr = self.lr
        self.optimizer_.step(self._param_dict(), grads)
        self.last_loss_ = loss
        return self

    def score_loss(self, Psi, targets):
        """``decision_loss`` in standardized target units."""
        z = (self.predict(Psi) - self.target_mean_) / self.target_scale_
        y = (np.asarray(targets, dtype=np.float64) - self.target_mean_) / self.target_scale_
        return decision_loss(z, y, self.corr_weight)

    def fit(self, Psi, U):
        """Mini-batch pretraining with early stopping on a held-out split."""
        Psi = check_array(Psi, dtype=np.float64)
        U = np.asarray(U, dtype=np.float64).ravel()
        if Psi.shape[0] != U.shape[0]:
            raise ValueError("Psi and U lengths differ")
        n = Psi.shape[0]
        if n < 2:
            raise ValueError("pretraining needs at least 2 labeled pairs")
        rng = substream(self.random_state, "decision-pretrain")
        order = rng.permutation(n)
        n_val = max(1, int(round(self.validation_fraction * n))) if n >= 10 else 0
        val_idx, tr_idx = order[:n_val], order[n_val:]
        mean = Psi[tr_idx].mean(axis=0)
        scale = Psi[tr_idx].std(axis=0)
        scale[scale < 1e-12] = 1.0
        u_scale = float(U[tr_idx].std())
        self.initialize(mean, scale, float(U[tr_idx].mean()), u_scale if u_scale > 1e-12 else 1.0)
        best = (np.inf, None)
        stale = 0
        self.history_ = []
        for epoch in range(self.max_epochs):
            perm = rng.permutation(tr_idx)
            for start in range(0, perm.size, self.batch_size):
                idx = perm[start : start + self.batch_size]
                self.partial_fit(Psi[idx], U[idx])
            if n_val == 0:
                continue
            val_loss = self.score_loss(Psi[val_idx], U[val_idx])
            self.history_.append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, self._state())
                stale = 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        if best[1] is not None:
            self._load_state(best[1])
        self.validation_loss_ = best[0] if n_val else float("nan")
        self.validation_indices_ = val_idx
        self.optimizer_ = Adam(self._param_dict(), self.lr)
        return self

    def _state(self):
        return [w.copy() for w in self.weights_], [b.copy() for b in self.biases_]

    def _load_state(self, state):
        for W, Ws in zip(self.weights_, state[0]):
            W[...] = Ws
        for b, bs in zip(self.biases_, state[1]):
            b[...] = bs

    def to_document(self):
        check_is_fitted(self, "weights_")
        return {
            "kind": "decision-net",
            "header": {"widths": list(self.widths)},
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "feature_mean": self.feature_mean_.tolist(),
            "feature_scale": self.feature_scale_.tolist(),
            "target_mean": self.target_mean_,
            "target_scale": self.target_scale_,
            "params": {k: v.ravel().tolist() for k, v in self._param_dict().items()},
        }

    @classmethod
    def from_document(cls, doc):
        if doc.get("kind") != "decision-net":
            raise StateError("not a decision-net checkpoint")
        cfg = dict(doc["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        net = cls(**cfg)
        if list(net.widths) != list(doc["header"]["widths"]):
            raise StateError(f"decision-net widths {doc['header']['widths']} != {list(net.widths)}")
        net.initialize(doc["feature_mean"], doc["feature_scale"], doc["target_mean"], doc["target_scale"])
        for k, v in net._param_dict().items():
            v[...] = np.asarray(doc["params"][k]).reshape(v.shape)
        return net


def predict_utility(net, psi):
    return float(net.predict(psi)[0])


class DecisionBuffers:
    """Online label store (FIFO target) and a frozen sample of pretraining data (source)."""

    def __init__(self, source_psi=None, source_u=None, target_capacity=300, source_capacity=3000, seed=0):
        self.target = deque(maxlen=target_capacity)
        self.target_capacity = target_capacity
        if source_psi is None:
            self.source_psi = np.empty((0, N_FEATURES))
            self.source_u = np.empty(0)
        else:
            source_psi = np.asarray(source_psi, dtype=np.float64)
            source_u = np.asarray(source_u, dtype=np.float64)
            n = source_psi.shape[0]
            rng = substream(seed, "decision-source")
            idx = np.sort(rng.choice(n, size=min(n, source_capacity), replace=False))
            self.source_psi = source_psi[idx]
            self.source_u = source_u[idx]
        self.source_psi.setflags(write=False)
        self.source_u.setflags(write=False)

    def push(self, psi, u):
        self.target.append((np.asarray(psi, dtype=np.float64).copy(), float(u)))


ONLINE_EPOCHS = 10
ONLINE_DRAWS = 32


def online_update_decision(net, psi, u_realized, buffers, rng, epochs=ONLINE_EPOCHS, draws=ONLINE_DRAWS):
    """Store the new label and take ``epochs`` steps on composite batches.

    Each batch is the current pair plus up to ``draws`` earlier target-buffer
    pairs and up to ``draws`` source pairs, drawn without replacement.
    Returns the list of batch sizes used.
    """
    psi = np.asarray(psi, dtype=np.float64)
    earlier = list(buffers.target)
    buffers.push(psi, u_realized)
    sizes = []
    n_src = buffers.source_psi.shape[0]
    for _ in range(epochs):
        rows = [psi]
        labels = [u_realized]
        k = min(draws, len(earlier))
        for i in rng.choice(len(earlier), size=k, replace=False) if k else ():
            rows.append(earlier[i][0])
            labels.append(earlier[i][1])
        k = min(draws, n_src)
        if k:
            idx = rng.choice(n_src, size=k, replace=False)
            rows.extend(buffers.source_psi[idx])
            labels.extend(buffers.source_u[idx])
        net.partial_fit(np.stack(rows), np.asarray(labels))
        sizes.append(len(rows))
    return sizes


def save_decision_net(net, path):
    """Write a decision-net checkpoint as canonical JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_document(), fh, sort_keys=True, allow_nan=False)
        fh.write("\n")


def load_decision_net(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    return DecisionNet.from_document(doc)
