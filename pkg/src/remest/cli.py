"""Command-line entry points: train | baseline | transfer | graphon | replay.

Every command is deterministic given (config, seed); metric CSVs embed the
resolved-config hash and get a companion PNG figure. Exit codes: 0 success,
1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import envsim, graphon as gl, plotting, policy as pol, training
from .config import ConfigError, ExperimentConfig, load_config
from .envsim import Action
from .neuralcore import load_checkpoint, save_checkpoint
from .topology import Graph, TopologyError, gen_watts_strogatz
from .training import (TopologySpec, baseline_action_fn, derive_seed,
                       evaluate, policy_action_fn, train)

OUTPUT_ROOT_ENV = "REMEST_OUTPUT_ROOT"
_TAG_TRANSFER = 21


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def resolve_output_dir(cfg: ExperimentConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    out = root / cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_config_snapshot(cfg: ExperimentConfig, out: Path) -> None:
    snap = {"config_hash": cfg.config_hash, **cfg.resolved()}
    (out / "config.json").write_text(json.dumps(snap, indent=2, sort_keys=True)
                                     + "\n")


# --- checkpoints with architecture metadata ---------------------------------------

def checkpoint_payload(ts: training.TrainState) -> dict:
    cfg = ts.cfg
    named = dict(ts.actor_named)
    named.update(ts.critic_named)
    named["meta.oblivious"] = np.array([float(cfg.oblivious)])
    named["meta.width"] = np.array([float(cfg.width)])
    named["meta.num_layers"] = np.array([float(cfg.num_layers)])
    named["meta.rounds"] = np.array([float(cfg.rounds)])
    named["meta.filter_order"] = np.array([float(cfg.filter_order)])
    named["meta.embed_dim"] = np.array([float(ts.policy.embed_dim)])
    named["meta.algo_mappo"] = np.array([float(cfg.algo == "mappo")])
    return named


def load_policy_checkpoint(path) -> tuple[pol.PolicyParams, bool]:
    """Rebuild the shared actor (and its mode flag) from a checkpoint."""
    named = load_checkpoint(path)
    oblivious = bool(named["meta.oblivious"][0])
    width = int(named["meta.width"][0])
    num_layers = int(named["meta.num_layers"][0])
    rounds = int(named["meta.rounds"][0])
    order = int(named["meta.filter_order"][0])
    embed = int(named["meta.embed_dim"][0])
    dtype = named["actor.delta"].dtype
    template = pol.init_policy_params(
        np.random.default_rng(0), oblivious, width=width,
        num_layers=num_layers, rounds=rounds, order=order, embed_dim=embed,
        dtype=dtype)
    for name, arr in pol.policy_to_named(template).items():
        if name not in named:
            raise ConfigError(f"checkpoint is missing parameter {name}")
        if named[name].shape != arr.shape:
            raise ConfigError(
                f"checkpoint parameter {name} has shape {named[name].shape}, "
                f"expected {arr.shape}")
    return pol.policy_from_named(named, template), oblivious


# --- commands ----------------------------------------------------------------------

METRICS_HEADER = ["episode", "mode", "num_nodes", "asee_mean", "asee_std",
                  "age_mean", "config_hash"]


def cmd_train(cfg: ExperimentConfig) -> int:
    out = resolve_output_dir(cfg)
    write_config_snapshot(cfg, out)

    def save_ckpt(episode: int, ts: training.TrainState) -> None:
        tag = "final" if episode >= cfg.train.episodes else f"ep{episode:05d}"
        save_checkpoint(out / f"checkpoint_{tag}.bin", checkpoint_payload(ts))

    result = train(cfg.train, cfg.topology, checkpoint_cb=save_ckpt,
                   log_cb=lambda msg: print(msg, flush=True))
    rows = [[r.episode, r.mode, r.num_nodes, r.asee_mean, r.asee_std,
             r.age_mean, cfg.config_hash] for r in result.rows]
    write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    plotting.plot_training_curve(result.rows, out / "metrics.png")
    print(f"wrote {out / 'metrics.csv'}")
    return 0


BASELINE_HEADER = ["policy", "num_nodes", "horizon", "asee_mean", "asee_std",
                   "age_mean", "asee_over_sigma2_age", "config_hash"]


def cmd_baseline(cfg: ExperimentConfig) -> int:
    out = resolve_output_dir(cfg)
    write_config_snapshot(cfg, out)
    tcfg = cfg.train
    graphs = [cfg.topology.graph_for(cfg.seed, i, training._TAG_EVAL_GRAPH)
              for i in range(tcfg.eval_graphs)]
    wanted = (["uniform", "adaptive_age"] if cfg.baseline.policy == "both"
              else [cfg.baseline.policy])
    rows, summaries = [], []
    for name in wanted:
        fn = baseline_action_fn(name, cfg.baseline.epsilon)
        asee, age = evaluate(fn, graphs, tcfg.horizon, cfg.sigma, cfg.seed)
        ratio = float(asee.mean() / (cfg.sigma ** 2 * age.mean()))
        rows.append([name, graphs[0].num_nodes, tcfg.horizon,
                     float(asee.mean()), float(asee.std()), float(age.mean()),
                     ratio, cfg.config_hash])
        summaries.append({"policy": name, "asee_mean": float(asee.mean()),
                          "asee_std": float(asee.std())})
        print(f"{name}: ASEE {asee.mean():.4f} (+/- {asee.std():.4f}), "
              f"age {age.mean():.4f}, ASEE/(sigma^2 age) = {ratio:.4f}")
    write_csv(out / "baseline.csv", BASELINE_HEADER, rows)
    plotting.plot_baseline_bars(summaries, out / "baseline.png")
    return 0


TRANSFER_HEADER = ["num_nodes", "policy_asee_mean", "policy_asee_std",
                   "policy_age_mean", "uniform_asee_mean", "uniform_asee_std",
                   "gap", "config_hash"]


def cmd_transfer(cfg: ExperimentConfig, checkpoint: str) -> int:
    out = resolve_output_dir(cfg)
    write_config_snapshot(cfg, out)
    params, oblivious = load_policy_checkpoint(checkpoint)
    policy_fn = policy_action_fn(params, oblivious)
    uniform_fn = baseline_action_fn("uniform")
    tcfg = cfg.train
    if cfg.topology.kind != "watts_strogatz":
        raise ConfigError("transfer sweeps require a watts_strogatz topology")

    rows, plot_rows = [], []
    for m in cfg.transfer.sizes:
        graphs = [gen_watts_strogatz(m, cfg.topology.k_ring,
                                     cfg.topology.p_rewire,
                                     seed=derive_seed(cfg.seed, _TAG_TRANSFER,
                                                      m, i))
                  for i in range(cfg.transfer.episodes_per_size)]
        asee_p, age_p = evaluate(policy_fn, graphs, tcfg.horizon, cfg.sigma,
                                 derive_seed(cfg.seed, _TAG_TRANSFER, m))
        asee_u, _ = evaluate(uniform_fn, graphs, tcfg.horizon, cfg.sigma,
                             derive_seed(cfg.seed, _TAG_TRANSFER, m))
        gap = float(asee_u.mean() - asee_p.mean())
        rows.append([m, float(asee_p.mean()), float(asee_p.std()),
                     float(age_p.mean()), float(asee_u.mean()),
                     float(asee_u.std()), gap, cfg.config_hash])
        plot_rows.append({"num_nodes": m, "policy_asee": float(asee_p.mean()),
                          "uniform_asee": float(asee_u.mean())})
        print(f"M={m}: policy ASEE {asee_p.mean():.4f}, uniform "
              f"{asee_u.mean():.4f}, gap {gap:.4f}")
    write_csv(out / "transfer.csv", TRANSFER_HEADER, rows)
    plotting.plot_transfer(plot_rows, out / "transfer.png")
    return 0


def _graphon_model(gcfg, kernel_kind: str):
    if kernel_kind == "smooth_cosine":
        w = gl.smooth_cosine_graphon(gcfg.n_grid)
    else:
        w = gl.constant_graphon(gcfg.constant_p)
    x = gl.discretize_signal(lambda u: np.cos(2 * np.pi * u) + 0.5,
                             gcfg.n_grid)
    rng = np.random.default_rng(gcfg.taps_seed)
    f = gcfg.hidden_features
    banks = (gl.random_contractive_taps(rng, gcfg.filter_order, 1, f),
             gl.random_contractive_taps(rng, gcfg.filter_order, f, f),
             gl.random_contractive_taps(rng, gcfg.filter_order, f, f))
    delta = rng.standard_normal((f, f))
    return w, x, banks, delta


def cmd_graphon(cfg: ExperimentConfig) -> int:
    out = resolve_output_dir(cfg)
    write_config_snapshot(cfg, out)
    gcfg = cfg.graphon
    experiments = ([gcfg.experiment] if gcfg.experiment != "all"
                   else ["filter_bound", "wrnn_trend", "action_trend"])

    if "filter_bound" in experiments:
        rows = []
        rng = np.random.default_rng(derive_seed(cfg.seed, 31))
        ns = [n for n in gcfg.sizes if n <= 200] or list(gcfg.sizes)
        for case in range(gcfg.bound_cases):
            kind = "constant" if case % 2 == 0 else "smooth_cosine"
            if kind == "constant":
                w = gl.constant_graphon(float(rng.uniform(0.2, 0.8)))
            else:
                w = gl.smooth_cosine_graphon(gcfg.n_grid)
            x = gl.discretize_signal(lambda u: np.cos(2 * np.pi * u) + 0.5,
                                     gcfg.n_grid)
            taps = gl.random_contractive_taps(rng, gcfg.filter_order, 1, 1)
            rep = gl.filter_transfer_distance(
                [t[0, 0] for t in taps], w, x, n=ns[case % len(ns)],
                seed=int(rng.integers(1 << 31)), eps=gcfg.eps,
                labeling=gcfg.labeling)
            rows.append({"kernel": kind, "n": rep.n, "seed": rep.seed,
                         "distance": rep.distance, "bound": rep.bound,
                         "theta": rep.theta, "signal_gap": rep.signal_gap,
                         "omega_big": rep.lipschitz.omega_big,
                         "omega_small": rep.lipschitz.omega_small,
                         "holds": int(rep.distance <= rep.bound)})
        write_csv(out / "graphon_filter_bound.csv",
                  ["kernel", "n", "seed", "distance", "bound", "theta",
                   "signal_gap", "omega_big", "omega_small", "holds",
                   "config_hash"],
                  [[r["kernel"], r["n"], r["seed"], r["distance"], r["bound"],
                    r["theta"], r["signal_gap"], r["omega_big"],
                    r["omega_small"], r["holds"], cfg.config_hash]
                   for r in rows])
        plotting.plot_bound_scatter(rows, out / "graphon_filter_bound.png")
        violations = sum(1 for r in rows if not r["holds"])
        print(f"filter_bound: {len(rows)} cases, {violations} violations")

    w, x, banks, delta = _graphon_model(gcfg, gcfg.kernel)

    if "wrnn_trend" in experiments:
        rows = []
        for n in gcfg.sizes:
            for s in range(gcfg.num_seeds):
                rep = gl.wrnn_transfer_distance(
                    *banks, w, x, n=n, seed=derive_seed(cfg.seed, 32, n, s),
                    eps=gcfg.eps, rounds=gcfg.rounds, labeling=gcfg.labeling,
                    with_bounds=False)
                rows.append({"kernel": gcfg.kernel, "n": n, "seed": s,
                             "distance": rep.distance,
                             "signal_gap": rep.signal_gap})
        write_csv(out / "graphon_wrnn_trend.csv",
                  ["kernel", "n", "seed", "distance", "signal_gap",
                   "config_hash"],
                  [[r["kernel"], r["n"], r["seed"], r["distance"],
                    r["signal_gap"], cfg.config_hash] for r in rows])
        plotting.plot_trend(rows, out / "graphon_wrnn_trend.png", "distance",
                            "recurrent-output distance")
        meds = {n: float(np.median([r["distance"] for r in rows
                                    if r["n"] == n])) for n in gcfg.sizes}
        print("wrnn_trend medians:", {k: round(v, 5) for k, v in meds.items()})

    if "action_trend" in experiments:
        rows = []
        for n in gcfg.sizes:
            for s in range(gcfg.num_seeds):
                rep = gl.action_distribution_distance(
                    *banks, delta, w, x, x, n=n,
                    seed=derive_seed(cfg.seed, 33, n, s), rounds=gcfg.rounds,
                    labeling=gcfg.labeling)
                rows.append({"kernel": gcfg.kernel, "n": n, "seed": s,
                             "logit_distance": rep.logit_distance,
                             "distance": rep.distribution_distance})
        write_csv(out / "graphon_action_trend.csv",
                  ["kernel", "n", "seed", "logit_distance",
                   "distribution_distance", "config_hash"],
                  [[r["kernel"], r["n"], r["seed"], r["logit_distance"],
                    r["distance"], cfg.config_hash] for r in rows])
        plotting.plot_trend(rows, out / "graphon_action_trend.png", "distance",
                            "action-distribution distance")
        meds = {n: float(np.median([r["distance"] for r in rows
                                    if r["n"] == n])) for n in gcfg.sizes}
        print("action_trend medians:", {k: round(v, 6) for k, v in meds.items()})
    return 0


def cmd_replay(trace_path: str) -> int:
    """Verify a recorded trajectory: re-simulate it (deliveries, collisions,
    rewards must match) and independently replay the age recursion from the
    recorded delivery events."""
    with open(trace_path) as fh:
        records = envsim.read_trace(fh)
    if not records or records[0].get("type") != "header":
        print("trace error: first record must be the header", file=sys.stderr)
        return 2
    header, slots = records[0], records[1:]
    m = int(header["m"])
    adj = np.zeros((m, m), dtype=np.int8)
    for u, v in header["edges"]:
        adj[u, v] = adj[v, u] = 1
    graph = Graph(adj)
    state = envsim.reset(graph, float(header["sigma"]), int(header["seed"]))
    reward_mode = header.get("reward_mode", "error")

    age_oracle = np.zeros((m, m), dtype=np.int64)
    mismatches = 0
    for rec in slots:
        actions = [Action(receiver=a[0], queue=a[1]) for a in rec["actions"]]
        state, reward = envsim.step(state, actions, reward_mode=reward_mode)
        got_deliveries = sorted([list(map(int, d)) for d in
                                 zip(*np.nonzero(state.delivered))])
        got_collisions = sorted([list(map(int, c)) for c in
                                 zip(*np.nonzero(state.collision))])
        if got_deliveries != sorted(rec["deliveries"]):
            mismatches += 1
        if got_collisions != sorted(rec["collisions"]):
            mismatches += 1
        if abs(reward - rec["reward"]) > 1e-9:
            mismatches += 1
        # independent age recursion from the recorded deliveries
        new_age = age_oracle + 1
        for i, j, l in rec["deliveries"]:
            if age_oracle[i, l] < age_oracle[j, l]:
                new_age[j, l] = age_oracle[i, l] + 1
        np.fill_diagonal(new_age, 0)
        age_oracle = new_age
        if not np.array_equal(age_oracle, state.age):
            mismatches += 1
    print(f"replayed {len(slots)} slots: "
          f"{'consistent' if mismatches == 0 else f'{mismatches} mismatches'}")
    return 0 if mismatches == 0 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remest",
        description="Decentralized sampling and remote estimation over "
                    "collision networks: training, baselines, transfer "
                    "sweeps, graphon experiments, trace replay.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, desc in (("train", "train an IPPO/MAPPO policy"),
                       ("baseline", "evaluate closed-form baselines"),
                       ("graphon", "run graphon transfer experiments")):
        p = sub.add_parser(name, help=desc)
        p.add_argument("-c", "--config", required=True,
                       help="path to the JSON experiment config")

    p = sub.add_parser("transfer", help="zero-shot evaluation across sizes")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--checkpoint", required=True,
                   help="trained checkpoint produced by `remest train`")

    p = sub.add_parser("replay", help="verify a recorded trajectory trace")
    p.add_argument("--trace", required=True, help="JSON-lines trace file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args.trace)
        cfg = load_config(args.config)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "baseline":
            return cmd_baseline(cfg)
        if args.command == "transfer":
            return cmd_transfer(cfg, args.checkpoint)
        if args.command == "graphon":
            return cmd_graphon(cfg)
        raise RuntimeError(f"unhandled command {args.command}")
    except (ConfigError, TopologyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
