"""Synthetic non-stationary data streams and their JSONL trace files.

Targets are positive (``y = exp(g(x))``) and ``g`` jumps at every segment
boundary, together with a shift of the input distribution.  Pseudo-labels
are the true target plus heteroscedastic Gaussian noise, and with
probability ``corruption_rate`` they also carry a multiplicative bias that
the learner cannot detect from the label itself.  Corrupted frames show few
landmarks and jittery pose proxies, which is the signal a decision model can
use to tell when self-supervision is unreliable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import substream
from .exceptions import ConfigurationError, SchemaError, TraceParseError

POSE_DIM = 10
TRACE_FIELDS = (
    "t",
    "x",
    "y_true",
    "y_pseudo",
    "nu",
    "pose_proxy",
    "landmark_proxy",
    "env_id",
    "pose_available",
)


@dataclass(eq=False)
class StreamSample:
    t: int
    x: np.ndarray
    y_true: float
    y_pseudo: float
    nu: float
    pose_proxy: np.ndarray
    landmark_proxy: int
    env_id: int
    pose_available: bool

    def __eq__(self, other):
        if not isinstance(other, StreamSample):
            return NotImplemented
        return (
            self.t == other.t
            and np.array_equal(self.x, other.x)
            and self.y_true == other.y_true
            and self.y_pseudo == other.y_pseudo
            and self.nu == other.nu
            and np.array_equal(self.pose_proxy, other.pose_proxy)
            and self.landmark_proxy == other.landmark_proxy
            and self.env_id == other.env_id
            and self.pose_available == other.pose_available
        )

    def to_record(self) -> dict:
        return {
            "t": int(self.t),
            "x": [float(v) for v in self.x],
            "y_true": float(self.y_true),
            "y_pseudo": float(self.y_pseudo),
            "nu": float(self.nu),
            "pose_proxy": [float(v) for v in self.pose_proxy],
            "landmark_proxy": int(self.landmark_proxy),
            "env_id": int(self.env_id),
            "pose_available": bool(self.pose_available),
        }


@dataclass
class EnvironmentSpec:
    """Shape of a drifting stream.

    ``noise_schedule`` holds one ``(nu_min, nu_max)`` range per segment; a
    single pair is reused for every segment.  ``drift_magnitude`` is the size
    of the log-target jump at each boundary.
    """

    n_segments: int = 4
    segment_length: int = 250
    d_in: int = 8
    drift_magnitude: float = 0.4
    noise_schedule: Sequence[tuple[float, float]] = ((1.0, 2.0),)
    corruption_rate: float = 0.15
    pose_drop_rate: float = 0.05
    base_log_depth: float = 4.4
    input_shift: float = 1.0
    landmark_rate: float = 220.0
    corrupted_landmark_rate: float = 70.0

    def validate(self) -> "EnvironmentSpec":
        def _int_at_least(name, lo):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < lo:
                raise ConfigurationError(f"{name} must be an integer >= {lo}, got {v!r}", name)

        _int_at_least("n_segments", 1)
        _int_at_least("segment_length", 3)
        _int_at_least("d_in", 1)
        for name in ("corruption_rate", "pose_drop_rate"):
            p = getattr(self, name)
            if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0):
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p!r}", name)
        for name in ("drift_magnitude", "input_shift", "landmark_rate", "corrupted_landmark_rate"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{name} must be a finite real >= 0, got {v!r}", name)
        if not math.isfinite(self.base_log_depth):
            raise ConfigurationError("base_log_depth must be finite", "base_log_depth")
        sched = list(self.noise_schedule)
        if len(sched) not in (1, self.n_segments):
            raise ConfigurationError(
                "noise_schedule needs one (min, max) pair or one per segment", "noise_schedule"
            )
        for pair in sched:
            if len(pair) != 2:
                raise ConfigurationError("noise_schedule entries are (min, max) pairs", "noise_schedule")
            lo, hi = pair
            if not (math.isfinite(lo) and math.isfinite(hi) and 0 <= lo <= hi):
                raise ConfigurationError(
                    f"noise_schedule range {pair!r} must satisfy 0 <= min <= max", "noise_schedule"
                )
        return self

    def noise_range(self, segment: int) -> tuple[float, float]:
        sched = list(self.noise_schedule)
        lo, hi = sched[0] if len(sched) == 1 else sched[segment]
        return float(lo), float(hi)

    @property
    def length(self) -> int:
        return self.n_segments * self.segment_length


@dataclass
class _TargetFunction:
    offset: float
    slope: np.ndarray
    freq: np.ndarray
    phase: float
    amplitude: float
    noise_dir: np.ndarray
    input_mean: np.ndarray = field(default=None)

    def log_target(self, X):
        return self.offset + X @ self.slope + self.amplitude * np.sin(X @ self.freq + self.phase)

    def noise_scale(self, X, lo, hi):
        gate = 1.0 / (1.0 + np.exp(-(X @ self.noise_dir)))
        return lo + (hi - lo) * gate


def _base_function(spec: EnvironmentSpec, seed: int) -> _TargetFunction:
    rng = substream(seed, "stream", "base")
    d = spec.d_in
    slope = rng.normal(0.0, 0.25 / math.sqrt(d), d)
    freq = rng.normal(0.0, 1.0 / math.sqrt(d), d)
    noise_dir = rng.normal(0.0, 1.5 / math.sqrt(d), d)
    return _TargetFunction(
        offset=spec.base_log_depth,
        slope=slope,
        freq=freq,
        phase=float(rng.uniform(0, 2 * math.pi)),
        amplitude=0.15,
        noise_dir=noise_dir,
        input_mean=np.zeros(d),
    )


def _segment_functions(spec: EnvironmentSpec, seed: int) -> list[_TargetFunction]:
    base = _base_function(spec, seed)
    rng = substream(seed, "stream", "drift")
    d = spec.d_in
    funcs = []
    mean = np.zeros(d)
    offset = base.offset
    for k in range(spec.n_segments):
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        # step away from the source level, or back toward it when already displaced
        away = offset == base.offset
        sign = rng.choice((-1.0, 1.0)) if away else -np.sign(offset - base.offset)
        offset = offset + sign * spec.drift_magnitude * rng.uniform(0.7, 1.0)
        tilt = rng.normal(0.0, 0.3 * spec.drift_magnitude / math.sqrt(d), d)
        mean = 0.5 * mean + spec.input_shift * direction
        funcs.append(
            _TargetFunction(
                offset=offset,
                slope=base.slope + tilt,
                freq=base.freq,
                phase=base.phase,
                amplitude=base.amplitude,
                noise_dir=base.noise_dir,
                input_mean=mean.copy(),
            )
        )
    return funcs


def generate_source(spec: EnvironmentSpec, n: int, seed: int):
    """Draw ``n`` clean-ish samples from the undrifted source environment.

    Returns ``(X, y_pseudo, y_true)``; used to pretrain the learner before it
    meets the drifting stream.
    """
    spec.validate()
    base = _base_function(spec, seed)
    rng = substream(seed, "stream", "source")
    X = rng.normal(size=(n, spec.d_in))
    y_true = np.exp(base.log_target(X))
    lo, hi = spec.noise_range(0)
    nu = base.noise_scale(X, lo, hi)
    y_pseudo = y_true + nu * rng.normal(size=n)
    return X, y_pseudo, y_true


def generate_stream(spec: EnvironmentSpec, seed: int) -> list[StreamSample]:
    spec.validate()
    funcs = _segment_functions(spec, seed)
    samples = []
    t = 0
    for k, fn in enumerate(funcs):
        rng = substream(seed, "stream", "segment", k)
        n = spec.segment_length
        X = fn.input_mean + rng.normal(size=(n, spec.d_in))
        g = fn.log_target(X)
        lo, hi = spec.noise_range(k)
        nu = fn.noise_scale(X, lo, hi)
        eps = rng.normal(size=n)
        corrupted = rng.random(n) < spec.corruption_rate
        bias = np.where(corrupted, spec.drift_magnitude / 2.0, 0.0)
        y_true = np.exp(g)
        y_pseudo = np.exp(g + bias) + nu * eps
        rate = np.where(corrupted, spec.corrupted_landmark_rate, spec.landmark_rate)
        landmarks = rng.poisson(rate * rng.uniform(0.6, 1.4, n))
        jitter = np.where(corrupted, 0.35, 0.1)
        poses = rng.normal(size=(n, POSE_DIM)) * jitter[:, None]
        available = rng.random(n) >= spec.pose_drop_rate
        for i in range(n):
            samples.append(
                StreamSample(
                    t=t,
                    x=X[i].copy(),
                    y_true=float(y_true[i]),
                    y_pseudo=float(y_pseudo[i]),
                    nu=float(nu[i]),
                    pose_proxy=poses[i].copy(),
                    landmark_proxy=int(landmarks[i]),
                    env_id=k,
                    pose_available=bool(available[i]),
                )
            )
            t += 1
    return samples


def write_trace(stream: Sequence[StreamSample], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in stream:
            fh.write(json.dumps(s.to_record(), allow_nan=False))
            fh.write("\n")


def _parse_record(rec: dict, lineno: int) -> StreamSample:
    if not isinstance(rec, dict):
        raise TraceParseError(f"line {lineno}: expected a JSON object", line=lineno)
    for name in TRACE_FIELDS:
        if name not in rec:
            raise SchemaError(f"line {lineno}: missing field {name!r}", field=name, line=lineno)
    extra = set(rec) - set(TRACE_FIELDS)
    if extra:
        name = sorted(extra)[0]
        raise SchemaError(f"line {lineno}: unexpected field {name!r}", field=name, line=lineno)
    try:
        x = np.asarray(rec["x"], dtype=np.float64)
        pose = np.asarray(rec["pose_proxy"], dtype=np.float64)
        sample = StreamSample(
            t=int(rec["t"]),
            x=x,
            y_true=float(rec["y_true"]),
            y_pseudo=float(rec["y_pseudo"]),
            nu=float(rec["nu"]),
            pose_proxy=pose,
            landmark_proxy=int(rec["landmark_proxy"]),
            env_id=int(rec["env_id"]),
            pose_available=bool(rec["pose_available"]),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"line {lineno}: bad value ({exc})", line=lineno) from exc
    if x.ndim != 1:
        raise SchemaError(f"line {lineno}: 'x' must be a flat array", field="x", line=lineno)
    if pose.shape != (POSE_DIM,):
        raise SchemaError(
            f"line {lineno}: 'pose_proxy' must hold {POSE_DIM} numbers", field="pose_proxy", line=lineno
        )
    return sample


def read_trace(path) -> list[StreamSample]:
    samples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"line {lineno}: {exc.msg}", line=lineno) from exc
            samples.append(_parse_record(rec, lineno))
    return samples
