"""Ensemble of two-headed MLP regressors with hand-written backprop.

Each member maps ``x`` to a mean and a log-variance through two tanh hidden
layers.  The ensemble mean is the prediction, the average predicted
variance is the aleatoric uncertainty and the spread of member means is the
epistemic uncertainty.  Parameters are stored stacked along a leading member
axis so a whole ensemble step is a handful of batched matmuls.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from ._nn import Adam, uniform_init
from ._rng import substream
from .exceptions import StateError

PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")
MEAN_ROW = 0
LOGVAR_ROW = 1


def nll_loss(mu, logvar, y):
    """Heteroscedastic Gaussian NLL without the constant: ½·e^{-s}(y-μ)² + ½·s."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    r = np.asarray(y, dtype=np.float64) - mu
    out = 0.5 * np.exp(-logvar) * r * r + 0.5 * logvar
    return float(out) if out.ndim == 0 else out


@dataclass
class MlpMember:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @property
    def d_in(self):
        return self.W1.shape[1]

    @classmethod
    def zeros(cls, d_in, hidden):
        return cls(
            W1=np.zeros((hidden, d_in)),
            b1=np.zeros(hidden),
            W2=np.zeros((hidden, hidden)),
            b2=np.zeros(hidden),
            W3=np.zeros((2, hidden)),
            b3=np.zeros(2),
        )


def forward(member: MlpMember, x, mean_gain=1.0):
    """Single-member forward pass; returns ``(mu, logvar)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (member.d_in,):
        raise ValueError(f"expected input of shape ({member.d_in},), got {x.shape}")
    h1 = np.tanh(member.W1 @ x + member.b1)
    h2 = np.tanh(member.W2 @ h1 + member.b2)
    out = member.W3 @ h2 + member.b3
    return float(mean_gain * out[MEAN_ROW]), float(out[LOGVAR_ROW])


class EnsembleLearner(BaseEstimator, RegressorMixin):
    """Deep-ensemble heteroscedastic regressor.

    ``fit`` pretrains every member from a fresh initialization on bootstrap
    resamples of ``(X, y)``; ``partial_fit`` performs exactly one Adam step
    per member at the online learning rate ``lr``.

    Parameters
    ----------
    n_members : int
        Ensemble size ``E`` (at least 2).
    hidden : int
        Width of both hidden layers.
    lr : float
        Online Adam learning rate used by ``partial_fit``.
    pretrain_lr, pretrain_epochs, pretrain_batch_size : pretraining schedule.
    freeze_encoder : bool
        Keep the first hidden layer fixed during ``partial_fit``.
    freeze_variance_head : bool
        Keep the log-variance output row fixed during ``partial_fit``.
    mean_gain : float
        Fixed multiplier on the mean head's pre-activation, so the mean is
        ``mean_gain * (W3[0] @ h2 + b3[0])``.  Lets a small net move its
        output at a realistic rate under a small online learning rate.
    random_state : int
    """

    def __init__(
        self,
        n_members=5,
        hidden=16,
        lr=1e-4,
        pretrain_lr=3e-3,
        pretrain_epochs=40,
        pretrain_batch_size=64,
        freeze_encoder=True,
        freeze_variance_head=True,
        mean_gain=1600.0,
        random_state=0,
    ):
        self.n_members = n_members
        self.hidden = hidden
        self.lr = lr
        self.pretrain_lr = pretrain_lr
        self.pretrain_epochs = pretrain_epochs
        self.pretrain_batch_size = pretrain_batch_size
        self.freeze_encoder = freeze_encoder
        self.freeze_variance_head = freeze_variance_head
        self.mean_gain = mean_gain
        self.random_state = random_state

    # construction ---------------------------------------------------------

    def initialize(self, d_in):
        """Draw fresh parameters for ``d_in`` inputs and reset the optimizer."""
        if self.n_members < 2:
            raise ValueError("an ensemble needs at least 2 members for epistemic variance")
        E, H = self.n_members, self.hidden
        params = {}
        for name, shape, fan_in in (
            ("W1", (H, d_in), d_in),
            ("b1", (H,), d_in),
            ("W2", (H, H), H),
            ("b2", (H,), H),
            ("W3", (2, H), H),
            ("b3", (2,), H),
        ):
            stacked = np.empty((E,) + shape)
            for e in range(E):
                rng = substream(self.random_state, "learner-init", e, name)
                stacked[e] = uniform_init(rng, fan_in, shape)
            params[name] = stacked
        self.params_ = params
        self.n_features_in_ = d_in
        self.optimizer_ = Adam(self.params_, self.lr)
        self.version_ = 0
        return self

    @property
    def members(self):
        check_is_fitted(self, "params_")
        return [
            MlpMember(**{k: self.params_[k][e] for k in PARAM_ORDER}) for e in range(self.n_members)
        ]

    def n_parameters(self, trainable_only=False):
        check_is_fitted(self, "params_")
        if not trainable_only:
            return int(sum(v[0].size for v in self.params_.values()))
        return int(sum(m[0].sum() for m in self._online_masks().values()))

    # forward / backward ---------------------------------------------------

    def _forward(self, X):
        p = self.params_
        h1 = np.tanh(X @ p["W1"].transpose(0, 2, 1) + p["b1"][:, None, :])
        h2 = np.tanh(h1 @ p["W2"].transpose(0, 2, 1) + p["b2"][:, None, :])
        out = h2 @ p["W3"].transpose(0, 2, 1) + p["b3"][:, None, :]
        if self.mean_gain != 1.0:
            out[..., MEAN_ROW] *= self.mean_gain
        return h1, h2, out

    def member_outputs(self, X):
        """``(mu, logvar)`` arrays of shape ``(E, n)``."""
        check_is_fitted(self, "params_")
        X = self._check_X(X)
        _, _, out = self._forward(X)
        return out[..., MEAN_ROW], out[..., LOGVAR_ROW]

    def _check_X(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected inputs with {self.n_features_in_} features, got shape {X.shape}"
            )
        return X

    def _gradients(self, X, y):
        """Per-member gradients of the batch-mean NLL, plus per-member losses.

        ``X`` is either a shared batch ``(n, d)`` or one batch per member
        ``(E, n, d)`` with matching ``y`` of shape ``(n,)`` or ``(E, n)``.
        """
        p = self.params_
        n = X.shape[-2]
        h1, h2, out = self._forward(X)
        mu = out[..., MEAN_ROW]
        s = out[..., LOGVAR_ROW]
        r = y - mu
        inv_var = np.exp(-s)
        losses = np.mean(0.5 * inv_var * r * r + 0.5 * s, axis=1)
        dout = np.empty_like(out)
        dout[..., MEAN_ROW] = -self.mean_gain * inv_var * r / n
        dout[..., LOGVAR_ROW] = (0.5 - 0.5 * inv_var * r * r) / n
        grads = {
            "W3": dout.transpose(0, 2, 1) @ h2,
            "b3": dout.sum(axis=1),
        }
        dz2 = (dout @ p["W3"]) * (1.0 - h2 * h2)
        grads["W2"] = dz2.transpose(0, 2, 1) @ h1
        grads["b2"] = dz2.sum(axis=1)
        dz1 = (dz2 @ p["W2"]) * (1.0 - h1 * h1)
        grads["W1"] = dz1.transpose(0, 2, 1) @ X
        grads["b1"] = dz1.sum(axis=1)
        return grads, losses

    def gradient(self, X, y):
        """Analytic gradient of the summed per-member mean NLL, keyed like ``params_``."""
        check_is_fitted(self, "params_")
        X, y = self._check_batch(X, y)
        grads, _ = self._gradients(X, y)
        return grads

    def loss(self, X, y):
        """Per-member batch-mean NLL, shape ``(E,)``."""
        X, y = self._check_batch(X, y)
        _, _, out = self._forward(X)
        return nll_loss(out[..., MEAN_ROW], out[..., LOGVAR_ROW], y[None, :]).mean(axis=1)

    def _check_batch(self, X, y):
        X = self._check_X(X)
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        if y.shape != (X.shape[0],):
            raise ValueError("X and y lengths differ")
        return X, y

    def _online_masks(self):
        masks = {k: np.ones(v.shape, dtype=bool) for k, v in self.params_.items()}
        if self.freeze_encoder:
            masks["W1"][...] = False
            masks["b1"][...] = False
        if self.freeze_variance_head:
            masks["W3"][:, LOGVAR_ROW, :] = False
            masks["b3"][:, LOGVAR_ROW] = False
        return masks

    # estimator API --------------------------------------------------------

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.initialize(X.shape[1])
        self.params_["b3"][:, MEAN_ROW] = float(np.mean(y)) / self.mean_gain
        self.params_["b3"][:, LOGVAR_ROW] = float(np.log(np.var(y) + 1e-12))
        opt = Adam(self.params_, self.pretrain_lr)
        n = X.shape[0]
        E = self.n_members
        rng = substream(self.random_state, "learner-pretrain")
        boot = rng.integers(0, n, size=(E, n))
        bs = self.pretrain_batch_size
        for epoch in range(self.pretrain_epochs):
            order = rng.permuted(np.tile(np.arange(n), (E, 1)), axis=1)
            for start in range(0, n, bs):
                idx = boot[np.arange(E)[:, None], order[:, start : start + bs]]
                grads, _ = self._gradients(X[idx], y[idx])
                opt.step(self.params_, grads)
        self.optimizer_ = Adam(self.params_, self.lr)
        self.version_ = 0
        return self

    def partial_fit(self, X, y):
        """One online Adam step per member; returns the pre-step mean loss."""
        check_is_fitted(self, "params_")
        X, y = self._check_batch(X, y)
        grads, losses = self._gradients(X, y)
        self.optimizer_.lr = self.lr
        self.optimizer_.step(self.params_, grads, self._online_masks())
        self.version_ += 1
        self.last_loss_ = float(np.mean(losses))
        return self

    def predict(self, X):
        mean, _, _ = self.predict_with_uncertainty(X)
        return mean

    def predict_with_uncertainty(self, X):
        """Ensemble mean, aleatoric variance and epistemic variance per row."""
        check_is_fitted(self, "params_")
        single = np.asarray(X).ndim == 1
        mu, s = self.member_outputs(X)
        mean = mu.mean(axis=0)
        var_a = np.exp(s).mean(axis=0)
        var_e = mu.var(axis=0)
        if single:
            return float(mean[0]), float(var_a[0]), float(var_e[0])
        return mean, var_a, var_e

    # state ----------------------------------------------------------------

    def snapshot(self):
        check_is_fitted(self, "params_")
        return {
            "arch": self._arch(),
            "params": {k: v.copy() for k, v in self.params_.items()},
            "optimizer": self.optimizer_.state(),
            "version": self.version_,
        }

    def restore(self, snap):
        check_is_fitted(self, "params_")
        if snap["arch"] != self._arch():
            raise StateError(f"snapshot architecture {snap['arch']} != {self._arch()}")
        for k in PARAM_ORDER:
            self.params_[k][...] = snap["params"][k]
        self.optimizer_.load_state(snap["optimizer"])
        self.version_ = snap["version"]

    def _arch(self):
        return {"d_in": int(self.n_features_in_), "hidden": int(self.hidden), "n_members": int(self.n_members)}

    def copy(self):
        return copy.deepcopy(self)

    def save(self, path):
        check_is_fitted(self, "params_")
        doc = {
            "kind": "ensemble-learner",
            "header": self._arch(),
            "config": self.get_params(),
            "params": {k: self.params_[k].ravel().tolist() for k in PARAM_ORDER},
            "optimizer": {
                "step_count": self.optimizer_.step_count,
                "m": {k: self.optimizer_.m[k].ravel().tolist() for k in PARAM_ORDER},
                "v": {k: self.optimizer_.v[k].ravel().tolist() for k in PARAM_ORDER},
            },
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("kind") != "ensemble-learner":
            raise StateError(f"{path} is not an ensemble-learner checkpoint")
        head = doc["header"]
        model = cls(**doc["config"])
        if model.hidden != head["hidden"] or model.n_members != head["n_members"]:
            raise StateError("checkpoint header disagrees with its config")
        model.initialize(head["d_in"])
        try:
            for k in PARAM_ORDER:
                model.params_[k][...] = np.asarray(doc["params"][k]).reshape(model.params_[k].shape)
                model.optimizer_.m[k][...] = np.asarray(doc["optimizer"]["m"][k]).reshape(model.params_[k].shape)
                model.optimizer_.v[k][...] = np.asarray(doc["optimizer"]["v"][k]).reshape(model.params_[k].shape)
        except ValueError as exc:
            raise StateError(f"parameter array size mismatch: {exc}") from exc
        model.optimizer_.step_count = int(doc["optimizer"]["step_count"])
        return model
