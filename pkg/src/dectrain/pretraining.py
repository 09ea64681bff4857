"""Offline data collection and decision-net pretraining."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decision import N_FEATURES, DecisionNet
from .exceptions import SchemaError, TraceParseError
from .learner import EnsembleLearner
from .policies import FixedPeriodic, run_episode
from .stream import generate_source, generate_stream

DEFAULT_FREQUENCIES = tuple(round(0.1 * k, 1) for k in range(1, 11))


@dataclass
class PretrainingDataset:
    psi: np.ndarray
    u: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def __len__(self):
        return self.u.shape[0]


def pretrained_learner(spec, seed, learner_params=None, n_source=4000):
    """Learner fit on the undrifted source environment of ``(spec, seed)``.

    ``learner_params`` may carry an ``n_source`` entry, which overrides the
    argument of the same name.
    """
    params = dict(learner_params or {})
    n_source = params.pop("n_source", n_source)
    X, y, _ = generate_source(spec, n_source, seed)
    params.setdefault("random_state", seed)
    return EnsembleLearner(**params).fit(X, y)


def collect_pretraining_dataset(specs, frequencies=DEFAULT_FREQUENCIES, seed=0, learner_params=None,
                                seeds=None, return_counts=False):
    """Log (features, realized utility) at every trained step of fixed-rate episodes.

    One episode runs per (stream spec, frequency); ``seeds`` gives the stream
    seed for each spec and defaults to ``seed + i``.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("collect_pretraining_dataset needs at least one environment spec")
    for f in frequencies:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"training frequency {f!r} outside [0, 1]")
    seeds = [seed + i for i in range(len(specs))] if seeds is None else list(seeds)
    rows, labels, counts = [], [], []
    for spec, s in zip(specs, seeds):
        stream = generate_stream(spec, s)
        base = pretrained_learner(spec, s, learner_params)
        for f in frequencies:
            records = run_episode(FixedPeriodic(f), stream, base.copy(), seed=s, collect_features=True)
            n_trained = 0
            n_kept = 0
            for r in records:
                if r.trained:
                    n_trained += 1
                    if r.u_realized is not None:
                        rows.append(r.psi)
                        labels.append(r.u_realized)
                        n_kept += 1
            counts.append({"seed": s, "frequency": f, "trained": n_trained, "labeled": n_kept})
    psi = np.array(rows).reshape(len(rows), N_FEATURES)
    u = np.array(labels)
    if len(u):
        mean, scale = psi.mean(axis=0), psi.std(axis=0)
        scale[scale < 1e-12] = 1.0
    else:
        mean, scale = np.zeros(N_FEATURES), np.ones(N_FEATURES)
    ds = PretrainingDataset(psi, u, mean, scale)
    return (ds, counts) if return_counts else ds


def pretrain_decision(dataset, **net_params):
    if len(dataset) < 2:
        raise ValueError("pretraining needs at least 2 labeled pairs")
    return DecisionNet(**net_params).fit(dataset.psi, dataset.u)


def write_dataset(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for psi, u in zip(dataset.psi, dataset.u):
            fh.write(json.dumps({"psi": [float(v) for v in psi], "u": float(u)}))
            fh.write("\n")


def read_dataset(path):
    rows, labels = [], []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"line {lineno}: {exc.msg}", line=lineno) from exc
            for name in ("psi", "u"):
                if name not in rec:
                    raise SchemaError(f"line {lineno}: missing field {name!r}", field=name, line=lineno)
            if len(rec["psi"]) != N_FEATURES:
                raise SchemaError(f"line {lineno}: psi must hold {N_FEATURES} numbers", field="psi", line=lineno)
            rows.append(rec["psi"])
            labels.append(rec["u"])
    psi = np.array(rows, dtype=np.float64).reshape(len(rows), N_FEATURES)
    u = np.array(labels, dtype=np.float64)
    mean = psi.mean(axis=0) if len(u) else np.zeros(N_FEATURES)
    scale = psi.std(axis=0) if len(u) else np.ones(N_FEATURES)
    scale[scale < 1e-12] = 1.0
    return PretrainingDataset(psi, u, mean, scale)
