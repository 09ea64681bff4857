"""Experiment configuration: a shallow YAML tree with typed defaults.

Top-level keys select policies, seeds and outputs; the ``stream``,
``learner``, ``decision`` and ``buffers`` sections hold component
hyperparameters.  Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .exceptions import ConfigurationError
from .stream import EnvironmentSpec

POLICIES = ("no_train", "all_train", "fixed_periodic", "greedy_oracle", "dectrain")

DEFAULT_ALPHAS = (50.0, 100.0, 200.0, 500.0, 1000.0, 1e9)
DEFAULT_BETAS = tuple(round(0.1 * k, 1) for k in range(11))
DEFAULT_FREQUENCIES = tuple(round(0.1 * k, 1) for k in range(1, 11))

LEARNER_DEFAULTS = {
    "n_members": 5,
    "hidden": 16,
    "lr": 1e-4,
    "pretrain_lr": 3e-3,
    "pretrain_epochs": 40,
    "pretrain_batch_size": 64,
    "freeze_encoder": True,
    "freeze_variance_head": True,
    "mean_gain": 1600.0,
    "n_source": 4000,
}

DECISION_DEFAULTS = {
    "hidden": [32, 32],
    "lr": 1e-3,
    "batch_size": 512,
    "max_epochs": 200,
    "corr_weight": 1.0,
    "validation_fraction": 0.1,
    "patience": 20,
    "online_epochs": 10,
    "online_draws": 32,
    "online_update": True,
}

BUFFER_DEFAULTS = {
    "learner_capacity": 300,
    "rho": 0.5,
    "target_capacity": 300,
    "source_capacity": 3000,
}


def _stream_defaults():
    spec = EnvironmentSpec()
    out = {f.name: getattr(spec, f.name) for f in fields(EnvironmentSpec)}
    out["noise_schedule"] = [list(p) for p in out["noise_schedule"]]
    return out


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_seeds: int = 5
    n_pretrain_streams: int = 5
    pretrain_seed_offset: int = 1000
    frequencies: tuple = DEFAULT_FREQUENCIES
    policy: str = "dectrain"
    alpha: float = 500.0
    beta: float = 0.5
    alphas: tuple = DEFAULT_ALPHAS
    betas: tuple = DEFAULT_BETAS
    sweep_policies: tuple = POLICIES
    report_threshold: float = 5.0
    out: str = "out"
    checkpoint: Optional[str] = None
    stream: dict = field(default_factory=_stream_defaults)
    learner: dict = field(default_factory=lambda: dict(LEARNER_DEFAULTS))
    decision: dict = field(default_factory=lambda: copy.deepcopy(DECISION_DEFAULTS))
    buffers: dict = field(default_factory=lambda: dict(BUFFER_DEFAULTS))

    @property
    def episode_seeds(self):
        return [self.seed + k for k in range(self.n_seeds)]

    @property
    def pretrain_seeds(self):
        return [self.seed + self.pretrain_seed_offset + k for k in range(self.n_pretrain_streams)]

    def environment(self) -> EnvironmentSpec:
        params = dict(self.stream)
        params["noise_schedule"] = tuple(tuple(p) for p in params["noise_schedule"])
        return EnvironmentSpec(**params).validate()

    def learner_params(self):
        return dict(self.learner)

    def decision_params(self, random_state):
        d = self.decision
        return {
            "hidden": tuple(d["hidden"]),
            "lr": d["lr"],
            "batch_size": d["batch_size"],
            "max_epochs": d["max_epochs"],
            "corr_weight": d["corr_weight"],
            "validation_fraction": d["validation_fraction"],
            "patience": d["patience"],
            "random_state": random_state,
        }

    def validate(self) -> "ExperimentConfig":
        def positive_int(name, v, lo=1):
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                raise ConfigurationError(f"{name} must be an integer >= {lo}, got {v!r}", name)

        positive_int("seed", self.seed, lo=0)
        positive_int("n_seeds", self.n_seeds)
        positive_int("n_pretrain_streams", self.n_pretrain_streams)
        if self.policy not in POLICIES:
            raise ConfigurationError(f"policy must be one of {', '.join(POLICIES)}, got {self.policy!r}", "policy")
        for p in self.sweep_policies:
            if p not in POLICIES:
                raise ConfigurationError(f"unknown policy {p!r} in sweep_policies", "sweep_policies")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha!r}", "alpha")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta!r}", "beta")
        if not self.alphas or any(not a > 0 for a in self.alphas):
            raise ConfigurationError("alphas must be a non-empty list of positive numbers", "alphas")
        if not self.betas or any(not 0.0 <= b <= 1.0 for b in self.betas):
            raise ConfigurationError("betas must be a non-empty list in [0, 1]", "betas")
        if not self.frequencies or any(not 0.0 <= f <= 1.0 for f in self.frequencies):
            raise ConfigurationError("frequencies must be a non-empty list in [0, 1]", "frequencies")
        for section, defaults in (("learner", LEARNER_DEFAULTS), ("decision", DECISION_DEFAULTS),
                                  ("buffers", BUFFER_DEFAULTS), ("stream", _stream_defaults())):
            extra = set(getattr(self, section)) - set(defaults)
            if extra:
                name = sorted(extra)[0]
                raise ConfigurationError(f"unknown key {section}.{name}", f"{section}.{name}")
        positive_int("learner.n_members", self.learner["n_members"], lo=2)
        positive_int("learner.hidden", self.learner["hidden"])
        positive_int("decision.batch_size", self.decision["batch_size"])
        positive_int("decision.online_epochs", self.decision["online_epochs"], lo=0)
        positive_int("decision.online_draws", self.decision["online_draws"], lo=0)
        for key in ("learner_capacity", "target_capacity", "source_capacity"):
            positive_int(f"buffers.{key}", self.buffers[key])
        if not self.buffers["rho"] >= 0:
            raise ConfigurationError("buffers.rho must be non-negative", "buffers.rho")
        for name, v in (("learner.lr", self.learner["lr"]), ("decision.lr", self.decision["lr"])):
            if not v > 0:
                raise ConfigurationError(f"{name} must be positive, got {v!r}", name)
        self.environment()
        return self

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else copy.deepcopy(v)
        return out


_TUPLE_KEYS = ("frequencies", "alphas", "betas", "sweep_policies")
_SECTIONS = ("stream", "learner", "decision", "buffers")


def config_from_dict(doc) -> ExperimentConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a mapping", "<root>")
    cfg = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    for key, value in doc.items():
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}", key)
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError(f"{key} must be a mapping", key)
            getattr(cfg, key).update(value)
        elif key in _TUPLE_KEYS:
            if not isinstance(value, (list, tuple)):
                raise ConfigurationError(f"{key} must be a list", key)
            setattr(cfg, key, tuple(float(v) if key != "sweep_policies" else v for v in value))
        else:
            setattr(cfg, key, value)
    return cfg.validate()


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read a YAML config (or defaults when ``path`` is None) and apply flag overrides."""
    doc = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}", "--config") from exc
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config {path} is not valid YAML: {exc}", "--config") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a mapping", "<root>")
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    return config_from_dict(doc)
