"""Accuracy, recovery and decision-similarity metrics, plus sweep tables."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .exceptions import UndefinedRecoveryError

DELTA1_THRESHOLD = 0.25
HIST_BINS = 11
HIST_WINDOW = 50
HIST_SMOOTHING = 1e-3

TRADEOFF_COLUMNS = (
    "policy",
    "parameter",
    "delta1_mean",
    "delta1_std",
    "n_train_mean",
    "n_train_std",
    "c_total_mean",
    "flops_inf_mean",
    "flops_train_mean",
    "flops_dec1_mean",
    "flops_dec2_mean",
)
POLICY_ORDER = ("no_train", "all_train", "fixed_periodic", "greedy_oracle", "dectrain")


def delta1(preds, truths):
    """Percentage of predictions within 25% relative error of the truth."""
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(truths, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} truths")
    if p.size == 0:
        raise ValueError("delta1 needs at least one prediction")
    if np.any(y <= 0):
        raise ValueError("truths must be strictly positive")
    hits = np.abs(p - y) / y <= DELTA1_THRESHOLD
    return 100.0 * np.count_nonzero(hits) / p.size


def recovery(d_method, d_none, d_all):
    """Share (in %) of the always-train accuracy gain that a method recovers."""
    gain = d_all - d_none
    if gain == 0:
        raise UndefinedRecoveryError("recovery is undefined when always-train equals never-train")
    return 100.0 * (d_method - d_none) / gain


@dataclass
class DecisionHistogram:
    window: int
    counts: np.ndarray
    frequencies: np.ndarray

    @classmethod
    def from_decisions(cls, decisions, window=HIST_WINDOW, smoothing=HIST_SMOOTHING):
        d = np.asarray(decisions, dtype=bool)
        n_win = d.size // window
        if n_win == 0:
            raise ValueError(f"need at least {window} decisions, got {d.size}")
        rates = d[: n_win * window].reshape(n_win, window).mean(axis=1)
        bins = np.minimum(np.floor(rates * (HIST_BINS - 1) + 0.5).astype(int), HIST_BINS - 1)
        counts = np.bincount(bins, minlength=HIST_BINS).astype(np.float64)
        freqs = (counts + smoothing) / (counts.sum() + smoothing * HIST_BINS)
        return cls(window, counts, freqs)


def kl_bits(p, q):
    """KL(p || q) in bits; terms with p == 0 contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


def decision_kl(decisions_a, decisions_b, window=HIST_WINDOW, smoothing=HIST_SMOOTHING):
    """KL between windowed train-rate histograms of two decision sequences, in bits.

    Call as ``decision_kl(method, oracle)``.
    """
    if len(decisions_a) != len(decisions_b):
        raise ValueError(f"length mismatch: {len(decisions_a)} vs {len(decisions_b)}")
    pa = DecisionHistogram.from_decisions(decisions_a, window, smoothing).frequencies
    pb = DecisionHistogram.from_decisions(decisions_b, window, smoothing).frequencies
    return max(0.0, kl_bits(pa, pb))


@dataclass
class EpisodeResult:
    policy: str
    parameter: object
    seed: int
    delta1: float
    n_train: int
    c_total: int
    breakdown: dict


def _param_key(p):
    return (0, 0.0) if p is None else (1, float(p))


def aggregate_sweep(episodes):
    """One trade-off row per (policy, parameter), sorted deterministically."""
    groups = defaultdict(list)
    for ep in episodes:
        groups[(ep.policy, ep.parameter)].append(ep)
    rows = []
    for (policy, param), eps in groups.items():
        eps = sorted(eps, key=lambda e: e.seed)
        d1 = np.array([e.delta1 for e in eps])
        nt = np.array([e.n_train for e in eps], dtype=np.float64)
        row = {
            "policy": policy,
            "parameter": param,
            "delta1_mean": float(d1.mean()),
            "delta1_std": float(d1.std()),
            "n_train_mean": float(nt.mean()),
            "n_train_std": float(nt.std()),
            "c_total_mean": float(np.mean([e.c_total for e in eps])),
        }
        for cat, col in (("inference", "flops_inf_mean"), ("train", "flops_train_mean"),
                         ("dec1", "flops_dec1_mean"), ("dec2", "flops_dec2_mean")):
            row[col] = float(np.mean([e.breakdown.get(cat, 0) for e in eps]))
        rows.append(row)
    order = {name: i for i, name in enumerate(POLICY_ORDER)}
    rows.sort(key=lambda r: (order.get(r["policy"], len(order)), r["policy"], _param_key(r["parameter"])))
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_tradeoff_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRADEOFF_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in TRADEOFF_COLUMNS])


def write_plot_data(rows, path):
    """(x = mean N_train, y = mean delta1) series per policy."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "parameter", "x_n_train", "y_delta1", "x_std", "y_std"])
        for r in rows:
            w.writerow([r["policy"], _fmt(r["parameter"]), repr(r["n_train_mean"]),
                        repr(r["delta1_mean"]), repr(r["n_train_std"]), repr(r["delta1_std"])])


_COLORS = {
    "no_train": "#777777",
    "all_train": "#000000",
    "fixed_periodic": "#1f77b4",
    "greedy_oracle": "#2ca02c",
    "dectrain": "#d62728",
}


def write_svg_scatter(rows, path, width=480, height=360):
    """Self-contained SVG scatter of delta1 against N_train."""
    pad = 50
    xs = [r["n_train_mean"] for r in rows] or [0.0]
    ys = [r["delta1_mean"] for r in rows] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">N_train</text>',
        f'<text x="14" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 14 {height / 2:.1f})"'
        ' text-anchor="middle">delta1 (%)</text>',
    ]
    for i, policy in enumerate(_COLORS):
        parts.append(
            f'<text x="{width - pad - 100}" y="{pad + 14 * i}" font-size="10" fill="{_COLORS[policy]}">{policy}</text>'
        )
    for r in rows:
        color = _COLORS.get(r["policy"], "#9467bd")
        parts.append(
            f'<circle cx="{px(r["n_train_mean"]):.2f}" cy="{py(r["delta1_mean"]):.2f}" r="3" fill="{color}"/>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def pareto_dominated(point, others):
    """True if some other (n_train, delta1) point is no worse on both axes."""
    n, d = point
    return any(on <= n and od >= d for on, od in others)


def is_finite(v):
    return v is not None and math.isfinite(v)


def envelope_value(points, x):
    """Upper envelope of a trade-off curve at ``N_train = x``.

    ``points`` are ``(n_train, delta1)`` pairs.  The curve is the running
    maximum of delta1 over increasing N_train, joined linearly between
    points and held flat past the last one.  Left of the first point it is
    undefined and returns ``-inf``.
    """
    pts = sorted((float(n), float(d)) for n, d in points)
    if not pts or x < pts[0][0]:
        return -math.inf
    ns = np.array([p[0] for p in pts])
    ds = np.maximum.accumulate(np.array([p[1] for p in pts]))
    return float(np.interp(x, ns, ds))


def curve_dominates(curve_points, point, tol=0.0):
    """True if ``point`` lies on or under the upper envelope of ``curve_points``."""
    n, d = point
    return envelope_value(curve_points, n) + tol >= d
