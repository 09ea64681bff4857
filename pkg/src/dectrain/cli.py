"""Command-line harness: ``pretrain``, ``run``, ``sweep`` and ``report``.

Exit status: 0 success, 2 configuration error, 3 I/O error,
4 missing baseline.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import POLICIES, load_config
from .cost import CostLedger
from .decision import DecisionBuffers, DecisionNet, load_decision_net, save_decision_net
from .exceptions import ConfigurationError, DecTrainError, MissingBaselineError, UndefinedRecoveryError
from .metrics import (
    EpisodeResult,
    aggregate_sweep,
    decision_kl,
    delta1,
    recovery,
    write_plot_data,
    write_svg_scatter,
    write_tradeoff_csv,
)
from .policies import (
    AllTrain,
    DecTrain,
    FixedPeriodic,
    GreedyOracle,
    NoTrain,
    decisions,
    run_episode,
    write_records_csv,
)
from .pretraining import (
    collect_pretraining_dataset,
    pretrain_decision,
    pretrained_learner,
    read_dataset,
    write_dataset,
)
from .stream import generate_stream
from .trainer import LearnerReplayBuffer

CHECKPOINT_NAME = "decision_net.json"
DATASET_NAME = "dataset.jsonl"


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _param_label(param):
    return "" if param is None else f"_{param:g}"


# ---------------------------------------------------------------- pretrain


def cmd_pretrain(cfg, echo=print):
    """Collect (features, utility) pairs, fit the decision net, write both to disk."""
    out = Path(cfg.out) / "pretrain"
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.environment()
    seeds = cfg.pretrain_seeds
    dataset, counts = collect_pretraining_dataset(
        [spec] * len(seeds),
        frequencies=cfg.frequencies,
        seeds=seeds,
        learner_params=cfg.learner_params(),
        return_counts=True,
    )
    if len(dataset) == 0:
        raise ConfigurationError("no labeled pairs collected", "frequencies")
    net = pretrain_decision(dataset, **cfg.decision_params(random_state=cfg.seed))
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / CHECKPOINT_NAME
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_decision_net(net, ckpt)
    write_dataset(dataset, ckpt.parent / DATASET_NAME)
    with open(out / "counts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["seed", "frequency", "trained", "labeled"], lineterminator="\n")
        w.writeheader()
        w.writerows(counts)
    echo(f"collected {len(dataset)} labeled pairs from {len(seeds)} streams")
    echo(f"held-out decision_loss {net.validation_loss_:.6f}")
    echo(f"checkpoint written to {ckpt}")
    return net, dataset


# ---------------------------------------------------------------- episodes


class _Pretrained:
    """Decision-net checkpoint plus its source data, loaded once per command."""

    def __init__(self, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"decision-net checkpoint {path} not found; run `pretrain` first",
                                     "checkpoint")
        self.doc = json.loads(path.read_text(encoding="utf-8"))
        load_decision_net(path)
        data = path.parent / DATASET_NAME
        self.dataset = read_dataset(data) if data.is_file() else None

    def policy(self, cfg, alpha, seed):
        net = DecisionNet.from_document(self.doc)
        src = (self.dataset.psi, self.dataset.u) if self.dataset is not None else (None, None)
        buffers = DecisionBuffers(
            *src,
            target_capacity=cfg.buffers["target_capacity"],
            source_capacity=cfg.buffers["source_capacity"],
            seed=seed,
        )
        d = cfg.decision
        return DecTrain(alpha, net=net, buffers=buffers, online_update=d["online_update"],
                        online_epochs=d["online_epochs"], online_draws=d["online_draws"])


def _checkpoint_path(cfg):
    return Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out) / "pretrain" / CHECKPOINT_NAME


def _make_policy(cfg, name, param, seed, pretrained):
    if name == "no_train":
        return NoTrain()
    if name == "all_train":
        return AllTrain()
    if name == "fixed_periodic":
        return FixedPeriodic(float(param))
    if name == "greedy_oracle":
        return GreedyOracle(float(param))
    return pretrained.policy(cfg, float(param), seed)


def _run_and_write(cfg, name, param, seed, stream, base, pretrained, out_dir):
    policy = _make_policy(cfg, name, param, seed, pretrained)
    ledger = CostLedger()
    buffer = LearnerReplayBuffer(cfg.buffers["learner_capacity"], cfg.buffers["rho"])
    records = run_episode(policy, stream, base.copy(), ledger, seed=seed, buffer=buffer)
    n = len(records)
    decided = decisions(records)
    n_train = int(sum(decided))
    breakdown = {c: {"total": int(tot), "avg_per_timestep": float(avg)}
                 for c, (tot, avg) in ledger.breakdown(n).items()}
    summary = {
        "policy": policy.name,
        "parameter": policy.parameter,
        "seed": seed,
        "n_timesteps": n,
        "n_decided": len(decided),
        "delta1": delta1([r.pred for r in records], [r.y_true for r in records]),
        "n_train": n_train,
        "train_rate": n_train / len(decided) if decided else 0.0,
        "c_total": int(ledger.total()),
        "breakdown": breakdown,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out_dir / "steps.csv")
    ledger.write_breakdown_csv(out_dir / "breakdown.csv", n)
    _write_json(summary, out_dir / "summary.json")
    return summary


def _episode_inputs(cfg, seed):
    spec = cfg.environment()
    stream = generate_stream(spec, seed)
    base = pretrained_learner(spec, seed, cfg.learner_params())
    return stream, base


def cmd_run(cfg, echo=print):
    """One episode of ``cfg.policy`` per seed."""
    param = {"fixed_periodic": cfg.beta, "greedy_oracle": cfg.alpha, "dectrain": cfg.alpha}.get(cfg.policy)
    pretrained = _Pretrained(_checkpoint_path(cfg)) if cfg.policy == "dectrain" else None
    root = Path(cfg.out) / "run"
    summaries = []
    for seed in cfg.episode_seeds:
        stream, base = _episode_inputs(cfg, seed)
        out_dir = root / f"{cfg.policy}{_param_label(param)}_seed{seed}"
        s = _run_and_write(cfg, cfg.policy, param, seed, stream, base, pretrained, out_dir)
        echo(f"{out_dir.name}: delta1 {s['delta1']:.2f}  n_train {s['n_train']}  "
             f"train_rate {s['train_rate']:.3f}  c_total {s['c_total']}")
        summaries.append(s)
    return summaries


def sweep_grid(cfg):
    """``(policy, parameter)`` pairs in a fixed order."""
    grid = []
    for name in POLICIES:
        if name not in cfg.sweep_policies:
            continue
        if name in ("no_train", "all_train"):
            grid.append((name, None))
        elif name == "fixed_periodic":
            grid.extend((name, b) for b in cfg.betas)
        else:
            grid.extend((name, a) for a in cfg.alphas)
    return grid


def cmd_sweep(cfg, echo=print):
    """Every grid point on every seed, aggregated into a trade-off table."""
    grid = sweep_grid(cfg)
    if not grid:
        raise ConfigurationError("sweep grid is empty", "sweep_policies")
    pretrained = _Pretrained(_checkpoint_path(cfg)) if any(n == "dectrain" for n, _ in grid) else None
    root = Path(cfg.out) / "sweep"
    episodes = []
    for seed in cfg.episode_seeds:
        stream, base = _episode_inputs(cfg, seed)
        for name, param in grid:
            out_dir = root / "episodes" / f"{name}{_param_label(param)}_seed{seed}"
            s = _run_and_write(cfg, name, param, seed, stream, base, pretrained, out_dir)
            episodes.append(EpisodeResult(
                s["policy"], s["parameter"], seed, s["delta1"], s["n_train"], s["c_total"],
                {c: v["total"] for c, v in s["breakdown"].items()},
            ))
        echo(f"seed {seed}: {len(grid)} episodes")
    rows = aggregate_sweep(episodes)
    write_tradeoff_csv(rows, root / "tradeoff.csv")
    write_plot_data(rows, root / "plot_data.csv")
    write_svg_scatter(rows, root / "tradeoff.svg")
    echo(f"wrote {len(rows)} trade-off rows to {root / 'tradeoff.csv'}")
    return rows


# ---------------------------------------------------------------- report


def _load_runs(paths):
    runs = []
    for base in paths:
        base = Path(base)
        if not base.exists():
            raise FileNotFoundError(f"no such run directory: {base}")
        found = [base / "summary.json"] if (base / "summary.json").is_file() else sorted(base.rglob("summary.json"))
        for p in found:
            s = json.loads(p.read_text(encoding="utf-8"))
            with open(p.parent / "steps.csv", newline="", encoding="utf-8") as fh:
                s["decisions"] = [row["action"] == "train" for row in csv.DictReader(fh) if row["action"] != "warmup"]
            runs.append(s)
    return runs


def build_report(runs, oracle_alpha=500.0, threshold=5.0):
    """Recovery and decision-KL tables over seeds where always-train helps by more than ``threshold``."""
    by_seed = {}
    for r in runs:
        by_seed.setdefault(r["seed"], {})[(r["policy"], r["parameter"])] = r
    for baseline in ("no_train", "all_train"):
        if not any((baseline, None) in d for d in by_seed.values()):
            raise MissingBaselineError(f"missing baseline runs: {baseline}", baseline)
    kept, filtered = [], []
    for seed in sorted(by_seed):
        d = by_seed[seed]
        for baseline in ("no_train", "all_train"):
            if (baseline, None) not in d:
                raise MissingBaselineError(f"missing baseline run {baseline} for seed {seed}", baseline)
        gain = d[("all_train", None)]["delta1"] - d[("no_train", None)]["delta1"]
        (kept if gain > threshold else filtered).append(seed)

    methods = sorted({k for d in by_seed.values() for k in d},
                     key=lambda k: (POLICIES.index(k[0]) if k[0] in POLICIES else len(POLICIES),
                                    -1.0 if k[1] is None else float(k[1])))
    rec_rows, kl_rows = [], []
    for key in methods:
        recs, kls = [], []
        for seed in kept:
            d = by_seed[seed]
            if key not in d:
                continue
            try:
                recs.append(recovery(d[key]["delta1"], d[("no_train", None)]["delta1"],
                                     d[("all_train", None)]["delta1"]))
            except UndefinedRecoveryError:
                pass
            oracle = d.get(("greedy_oracle", float(oracle_alpha)))
            if oracle is not None:
                kls.append(decision_kl(d[key]["decisions"], oracle["decisions"]))
        if recs:
            rec_rows.append({"policy": key[0], "parameter": key[1], "n_runs": len(recs),
                             "recovery_mean": float(np.mean(recs))})
        if kls:
            kl_rows.append({"policy": key[0], "parameter": key[1], "n_runs": len(kls),
                            "kl_bits_mean": float(np.mean(kls))})
    return {"recovery": rec_rows, "kl": kl_rows, "kept_seeds": kept, "filtered_seeds": filtered}


def _write_rows(rows, columns, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in columns])


def cmd_report(cfg, paths=None, echo=print):
    out = Path(cfg.out)
    paths = list(paths or [p for p in (out / "sweep", out / "run") if p.exists()])
    if not paths:
        raise MissingBaselineError("no run directories to report on", "no_train")
    rep = build_report(_load_runs(paths), oracle_alpha=cfg.alpha, threshold=cfg.report_threshold)
    root = out / "report"
    root.mkdir(parents=True, exist_ok=True)
    _write_rows(rep["recovery"], ["policy", "parameter", "n_runs", "recovery_mean"], root / "recovery.csv")
    _write_rows(rep["kl"], ["policy", "parameter", "n_runs", "kl_bits_mean"], root / "kl.csv")
    _write_json({"kept_seeds": rep["kept_seeds"], "filtered_seeds": rep["filtered_seeds"],
                 "threshold": cfg.report_threshold, "oracle_alpha": cfg.alpha}, root / "filter.json")
    echo(f"runs kept: {len(rep['kept_seeds'])}  filtered out (all-train gain <= "
         f"{cfg.report_threshold:g} points): {len(rep['filtered_seeds'])}")
    echo("recovery (%)")
    for r in rep["recovery"]:
        echo(f"  {r['policy']}{_param_label(r['parameter'])}: {r['recovery_mean']:.2f}")
    echo(f"decision KL vs greedy_oracle alpha={cfg.alpha:g} (bits)")
    if not rep["kl"]:
        echo("  (no oracle decisions at this alpha)")
    for r in rep["kl"]:
        echo(f"  {r['policy']}{_param_label(r['parameter'])}: {r['kl_bits_mean']:.4f}")
    return rep


# ---------------------------------------------------------------- entry point


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="dectrain", description="Train/no-train decision experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint", help="decision-net checkpoint path")
    common.add_argument("--alpha", type=float, help="decision cost weight")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="collect utility labels and pretrain the decision net")
    p_run = sub.add_parser("run", parents=[common], help="one episode per seed for a single policy")
    p_run.add_argument("--policy", choices=POLICIES)
    p_run.add_argument("--beta", type=float, help="fixed-periodic training rate")
    p_sweep = sub.add_parser("sweep", parents=[common], help="alpha/beta trade-off sweep")
    p_sweep.add_argument("--alpha-grid", type=_float_list)
    p_sweep.add_argument("--beta-grid", type=_float_list)
    p_rep = sub.add_parser("report", parents=[common], help="recovery and decision-KL tables")
    p_rep.add_argument("paths", nargs="*", help="run or sweep directories")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "checkpoint": args.checkpoint,
        "alpha": args.alpha,
        "policy": getattr(args, "policy", None),
        "beta": getattr(args, "beta", None),
        "alphas": getattr(args, "alpha_grid", None),
        "betas": getattr(args, "beta_grid", None),
    }
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "pretrain":
            cmd_pretrain(cfg)
        elif args.command == "run":
            cmd_run(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg)
        else:
            cmd_report(cfg, args.paths)
    except DecTrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
