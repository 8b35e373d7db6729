"""Pipeline driver: stage1/stage2/stage3/eval/plot/replay subcommands.

Exit codes: 0 success, 1 usage problem, 2 runtime failure. All artifacts
land under the configured output directory (MAZENAV_OUTPUT_ROOT or
--out); reruns with the same seeds rewrite identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev, maze as mz, memory as smb, plots, reachability as rn, training as tr
from .config import load_config
from .errors import ConfigError, MalformedLog, MazenavError, MissingCheckpoint
from .nn import checkpoint
from .policy import PolicyNet, warm_start_cnn
from .ppo import PPOConfig
from .rewards import RewardConfig, RewardMode
from .training import StageConfig

OUTPUT_ROOT_VAR = "MAZENAV_OUTPUT_ROOT"

REACH_FILE = "reachability.mnav"
POLICY_FILE = "policy.mnav"
POLICY_NAV_FILE = "policy_nav.mnav"
MEMORY_FILE = "memory_stage2.jsonl"
STAGE1_LOG = "stage1_history.csv"
STAGE2_LOG = "stage2_log.csv"
STAGE3_LOG = "stage3_log.csv"
EVAL_GOALS = "eval_goals.csv"
EVAL_SUMMARY = "eval_summary.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mazenav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("stage1", "stage2", "stage3", "eval", "plot", "replay"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted config override, repeatable",
        )
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        if name in ("stage2", "stage3"):
            p.add_argument("--reward", help=f"shorthand for --set {name}.reward=MODE")
    return parser


def _resolve(args) -> tuple[dict, Path]:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "reward", None):
        overrides.append(f"{args.command}.reward={args.reward}")
    cfg = load_config(args.config, overrides)
    out = args.out or cfg["output_dir"] or os.environ.get(OUTPUT_ROOT_VAR, "runs")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


def _load_maze(cfg: dict) -> mz.MazeMap:
    path = Path(cfg["map"])
    if not path.exists():
        raise MazenavError(f"map not found: {path}")
    return mz.load_map(path.read_text(), map_seed=cfg["map_seed"])


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingCheckpoint(f"{what} checkpoint missing: {path}")
    return path


def _ppo_config(block: dict) -> PPOConfig:
    return PPOConfig(**{k: block[k] for k in block})


def _stage_config(cfg: dict, stage: str) -> StageConfig:
    block = cfg[stage]
    reward = RewardConfig(
        RewardMode(block["reward"]),
        alpha=block["alpha"],
        beta=block["beta"],
        tau=block["tau"],
    )
    return StageConfig(
        batches=block["batches"],
        ppo=_ppo_config(block["ppo"]),
        reward=reward,
        seed=cfg["seed"],
        explore_steps=block.get("explore_steps", 200),
        workers=cfg["workers"],
    )


def cmd_stage1(cfg: dict, out: Path) -> int:
    maze = _load_maze(cfg)
    s1 = cfg["stage1"]
    pairing = rn.PairingConfig(
        walk_steps=s1["walk_steps"],
        walks=s1["walks"],
        pairs_per_walk=s1["pairs_per_walk"],
        positive_radius=s1["positive_radius"],
        negative_margin=s1["negative_margin"],
    )
    walks = rn.collect_walks(maze, pairing, seed=cfg["seed"], n_rays=cfg["n_rays"])
    pairs = rn.sample_pairs(walks, pairing, seed=cfg["seed"] + 1)
    model, history = rn.train_reachability(
        pairs,
        epochs=s1["epochs"],
        batch=s1["batch"],
        lr=s1["lr"],
        momentum=s1["momentum"],
        weight_decay=s1["weight_decay"],
        seed=cfg["seed"],
        holdout_fraction=s1["holdout_fraction"],
        n_rays=cfg["n_rays"],
        lr_decay=s1["lr_decay"],
        log=lambda line: print(line),
    )
    rn.save_model(out / REACH_FILE, model)
    with open(out / STAGE1_LOG, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_accuracy", "holdout_accuracy"])
        for e, (loss, tacc) in enumerate(zip(history.train_loss, history.train_accuracy)):
            hacc = history.holdout_accuracy[e] if history.holdout_accuracy else ""
            writer.writerow([e, f"{loss:.6f}", f"{tacc:.4f}", f"{hacc:.4f}" if hacc != "" else ""])
    final = history.holdout_accuracy[-1] if history.holdout_accuracy else float("nan")
    print(f"holdout accuracy {final:.3f}")
    print(f"wrote {out / REACH_FILE}")
    return 0


def cmd_stage2(cfg: dict, out: Path) -> int:
    maze = _load_maze(cfg)
    reach = rn.load_model(_require(out / REACH_FILE, "stage-1"), n_rays=cfg["n_rays"])
    net = PolicyNet(n_rays=cfg["n_rays"], seed=cfg["seed"])
    if cfg["stage2"]["warm_start"]:
        warm_start_cnn(net, reach.g)
    stage = _stage_config(cfg, "stage2")
    rows: list[dict] = []
    every = cfg["stage2"]["checkpoint_every"]

    def on_batch(row):
        print(
            f"batch {row['batch']}: return {row['mean_return']:.2f} "
            f"coverage {row['coverage_cells']:.1f} buffer {row['buffer_size']:.1f}"
        )
        if every and (row["batch"] + 1) % every == 0:
            checkpoint.save_module(out / f"policy_b{row['batch'] + 1}.mnav", net)

    results = tr.run_stage2(maze, reach, net, stage, log_rows=rows, on_batch=on_batch)
    checkpoint.save_module(out / POLICY_FILE, net)
    tr.write_log(out / STAGE2_LOG, rows)
    last = results[-1]
    with open(out / MEMORY_FILE, "w") as fh:
        smb.dump_jsonl(last.buf, last.graph, fh, poses=last.entry_poses)
    print(f"wrote {out / POLICY_FILE}")
    return 0


def cmd_stage3(cfg: dict, out: Path) -> int:
    maze = _load_maze(cfg)
    reach = rn.load_model(_require(out / REACH_FILE, "stage-1"), n_rays=cfg["n_rays"])
    net = PolicyNet(n_rays=cfg["n_rays"], seed=cfg["seed"])
    checkpoint.load_module(_require(out / POLICY_FILE, "stage-2"), net)
    stage = _stage_config(cfg, "stage3")
    rows: list[dict] = []
    every = cfg["stage3"]["checkpoint_every"]

    def on_batch(row):
        print(
            f"batch {row['batch']}: return {row['mean_return']:.2f} "
            f"successes {row['coverage_cells']:.2f}"
        )
        if every and (row["batch"] + 1) % every == 0:
            checkpoint.save_module(out / f"policy_nav_b{row['batch'] + 1}.mnav", net)

    tr.run_stage3(
        maze, reach, net, stage, log_rows=rows, freeze_shared=cfg["stage3"]["freeze_shared"],
        on_batch=on_batch,
    )
    checkpoint.save_module(out / POLICY_NAV_FILE, net)
    tr.write_log(out / STAGE3_LOG, rows)
    print(f"wrote {out / POLICY_NAV_FILE}")
    return 0


def cmd_eval(cfg: dict, out: Path) -> int:
    maze = _load_maze(cfg)
    reach = rn.load_model(_require(out / REACH_FILE, "stage-1"), n_rays=cfg["n_rays"])
    net = PolicyNet(n_rays=cfg["n_rays"], seed=cfg["seed"])
    policy_path = out / POLICY_NAV_FILE
    if not policy_path.exists():
        policy_path = out / POLICY_FILE
    checkpoint.load_module(_require(policy_path, "policy"), net)
    block = cfg["eval"]
    goal_set = ev.make_goal_set(maze, seed=block["goal_seed"], n_goals=block["n_goals"])
    results = ev.evaluate_navigation(
        maze,
        reach,
        net,
        goal_set,
        nav_steps=block["nav_steps"],
        seed=cfg["seed"],
        explore_steps=block["explore_steps"],
        tau=cfg["stage3"]["tau"],
    )
    with open(out / EVAL_GOALS, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["goal_id", "l_i", "s_i", "d_i", "steps_used"])
        for i, r in enumerate(results):
            writer.writerow([i, r.goal.shortest, int(r.success), r.path_cells, r.steps_used])
    summary = {
        "success_rate": ev.success_rate(results),
        "spl": ev.spl(results),
        "by_distance": ev.breakdown_by_distance(results),
    }
    with open(out / EVAL_SUMMARY, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"success rate {summary['success_rate']:.3f}  SPL {summary['spl']:.3f}")
    return 0


def _read_log_columns(path: Path, *cols: str):
    rows = tr.read_log(path)
    if not rows:
        raise MalformedLog(f"{path} has no data rows")
    xs = [int(r["batch"]) for r in rows]
    return xs, [[float(r[c]) for r in rows] for c in cols]


def cmd_plot(cfg: dict, out: Path) -> int:
    wrote = []
    s2 = out / STAGE2_LOG
    if s2.exists():
        xs, (cov, ret) = _read_log_columns(s2, "coverage_cells", "mean_return")
        (out / "coverage.svg").write_text(
            plots.line_chart({"coverage": (xs, cov)}, "Coverage per batch", "batch", "cells")
        )
        (out / "reward.svg").write_text(
            plots.line_chart({"return": (xs, ret)}, "Mean return per batch", "batch", "return")
        )
        wrote += ["coverage.svg", "reward.svg"]
    s3 = out / STAGE3_LOG
    if s3.exists():
        xs, (ret,) = _read_log_columns(s3, "mean_return")
        (out / "reward_nav.svg").write_text(
            plots.line_chart({"return": (xs, ret)}, "Navigation return per batch", "batch", "return")
        )
        wrote.append("reward_nav.svg")
    summary_path = out / EVAL_SUMMARY
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        table = summary.get("by_distance", {})
        labels = list(table)
        values = [table[k]["spl"] if isinstance(table[k], dict) else table[k] for k in labels]
        (out / "spl_by_distance.svg").write_text(
            plots.bar_chart(labels, values, "SPL by goal distance", "SPL")
        )
        wrote.append("spl_by_distance.svg")
    mem_path = out / MEMORY_FILE
    if mem_path.exists():
        maze = _load_maze(cfg)
        with open(mem_path) as fh:
            entries, edges = smb.load_jsonl(fh)
        cells = [(e["pose"]["x"], e["pose"]["y"]) for e in entries if "pose" in e]
        (out / "graph.svg").write_text(
            plots.graph_figure(maze, cells, edges, "Exploration graph")
        )
        wrote.append("graph.svg")
    if not wrote:
        raise MalformedLog(f"no logs found under {out}")
    print("wrote " + ", ".join(wrote))
    return 0


def cmd_replay(cfg: dict, out: Path) -> int:
    """Re-check the buffer separation invariant from the stage-2 dump: every
    logged entry must have scored below tau against all earlier entries."""
    maze = _load_maze(cfg)
    reach = rn.load_model(_require(out / REACH_FILE, "stage-1"), n_rays=cfg["n_rays"])
    mem_path = out / MEMORY_FILE
    if not mem_path.exists():
        raise MissingCheckpoint(f"memory dump missing: {mem_path}")
    with open(mem_path) as fh:
        entries, edges = smb.load_jsonl(fh)
    tau = cfg["stage2"]["tau"]
    render = mz.render_table(maze, cfg["n_rays"])
    embeds = []
    violations = 0
    for rec in entries:
        if "pose" not in rec:
            raise MalformedLog("memory dump lacks pose records; replay needs them")
        p = rec["pose"]
        e = reach.embed(render[mz.Pose(p["x"], p["y"], p["heading"])])
        if embeds:
            score = float(np.max(reach.compare_many(e, np.stack(embeds))))
        else:
            score = float("-inf")
        ok = score < tau
        violations += not ok
        print(f"entry {rec['index']}: max prior score {score:.4f} {'ok' if ok else 'VIOLATION'}")
        embeds.append(e)
    print(f"{len(entries)} entries, {len(edges)} edges, {violations} violations")
    if violations:
        raise MazenavError(f"{violations} separation violations")
    return 0


COMMANDS = {
    "stage1": cmd_stage1,
    "stage2": cmd_stage2,
    "stage3": cmd_stage3,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, out = _resolve(args)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"mazenav: {exc}", file=sys.stderr)
        return 1
    except (MazenavError, OSError) as exc:
        print(f"mazenav: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
