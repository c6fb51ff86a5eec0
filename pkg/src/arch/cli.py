"""Command-line entry points: serving the demonstration service, dataset
collection, training, evaluation, and diagnostic benchmarks. Report-writing
subcommands render matplotlib figures next to their delimited output."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .scenes import SceneSpec, default_scene

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def _load_scene(args) -> SceneSpec:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            return SceneSpec.from_json(json.load(fh))
    return default_scene()


def _load_insert_policy(path):
    from .rl_insert import InsertPolicy

    return InsertPolicy.load(path)


def _figure_path(out: Path) -> Path:
    return out.with_suffix(".png")


# ---------------------------------------------------------------------------
# subcommands


def cmd_serve(args) -> int:
    from .service import serve

    scene = _load_scene(args)
    insert_policy = _load_insert_policy(args.insert_policy) if args.insert_policy else None
    serve(scene, insert_policy, host=args.host, port=args.port, seed=args.seed,
          data_dir=args.data_dir, target=args.target, ui_dir=args.ui)
    return EXIT_OK


def cmd_collect(args) -> int:
    from .oracle import collect_oracle
    from .policy_high import save_demos

    if not args.oracle:
        print("only --oracle collection is supported headless; "
              "use `serve` for human collection", file=sys.stderr)
        return EXIT_USAGE
    scene = _load_scene(args)
    insert_policy = _load_insert_policy(args.insert_policy)
    demos = collect_oracle(scene, insert_policy, n_success=args.n_success,
                           n_recovery=args.n_recovery, seed=args.seed,
                           target=args.target)
    save_demos(args.out, demos)
    print(f"wrote {len(demos)} demonstrations to {args.out}")
    return EXIT_OK


def cmd_train_insert(args) -> int:
    from .rl_insert import RLConfig, train_insert

    scene = _load_scene(args)
    cfg = RLConfig(iterations=args.iterations,
                   time_budget_s=args.time_budget)
    policy = train_insert(scene, cfg, seed=args.seed, object_name=args.target,
                          log_path=args.log, verbose=args.verbose)
    policy.save(args.out)
    print(f"saved insert policy to {args.out}")
    return EXIT_OK


def cmd_train_high(args) -> int:
    from .policy_high import load_demos, train_bc

    demos = load_demos(args.demos)
    policy = train_bc(demos, epochs=args.epochs, seed=args.seed,
                      verbose=args.verbose)
    policy.save(args.out)
    print(f"trained on {len(demos)} demonstrations; saved to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import run_eval, write_report
    from .policy_high import HighLevelPolicy

    scene = _load_scene(args)
    insert_policy = _load_insert_policy(args.insert_policy)
    if args.high_policy in ("oracle", "random"):
        policy = args.high_policy
    else:
        policy = HighLevelPolicy.load(args.high_policy)
    report = run_eval(policy, insert_policy, scene, n_trials=args.n_trials,
                      seed=args.seed, target=args.target,
                      slip_prob=args.slip, convention=args.spl_convention)
    out = Path(args.out)
    write_report(report, out, _figure_path(out))
    print(report.table())
    print(f"report: {out}  figure: {_figure_path(out)}")
    return EXIT_OK


def cmd_pose_bench(args) -> int:
    from .pose_refine import run_pose_bench

    scene = _load_scene(args)
    rows = run_pose_bench(scene, args.target, n_trials=args.n_trials,
                          seed=args.seed)
    out = Path(args.out)
    fields = ["trial", "init_err_t", "init_err_r", "final_err_t",
              "final_err_r", "iters", "loss"]
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)

    recovered = sum(r["final_err_t"] <= 1e-3 and r["final_err_r"] <= np.deg2rad(1.0)
                    for r in rows)
    print(f"{recovered}/{len(rows)} trials within 1 mm / 1 deg; "
          f"median iters {int(np.median([r['iters'] for r in rows]))}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax0.scatter([1e3 * r["init_err_t"] for r in rows],
                [1e3 * r["final_err_t"] for r in rows], s=12)
    ax0.axhline(1.0, color="k", ls="--", lw=1)
    ax0.set_xlabel("initial translation error [mm]")
    ax0.set_ylabel("final translation error [mm]")
    ax1.scatter([np.rad2deg(r["init_err_r"]) for r in rows],
                [np.rad2deg(r["final_err_r"]) for r in rows], s=12)
    ax1.axhline(1.0, color="k", ls="--", lw=1)
    ax1.set_xlabel("initial rotation error [deg]")
    ax1.set_ylabel("final rotation error [deg]")
    fig.tight_layout()
    fig.savefig(_figure_path(out), dpi=120)
    plt.close(fig)
    print(f"csv: {out}  figure: {_figure_path(out)}")
    return EXIT_OK


def cmd_plan_debug(args) -> int:
    from .planner import NoPath, build_roadmap, lazy_query, scene_collision_fn, shortcut

    scene = _load_scene(args)
    collides = scene_collision_fn(scene)
    roadmap = build_roadmap(scene, n=args.nodes, seed=args.seed,
                            collision_fn=collides)
    start = np.array(args.start)
    goal = np.array(args.goal)
    try:
        result = lazy_query(roadmap, start, goal, collides)
        short = shortcut(result, collides, seed=args.seed)
        print(f"path: {len(result.waypoints)} waypoints, length "
              f"{result.length:.3f}, {result.checked_edges} edges checked; "
              f"{len(short.waypoints)} waypoints / length {short.length:.3f} "
              f"after shortcutting")
        waypoints = np.asarray(short.waypoints)
    except NoPath:
        print("no path found")
        waypoints = None

    if args.dump_roadmap:
        dump = roadmap.to_json()
        if waypoints is not None:
            dump["path"] = np.asarray(waypoints).tolist()
        with open(args.dump_roadmap, "w") as fh:
            json.dump(dump, fh, sort_keys=True)
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 5))
        ax.scatter(roadmap.nodes[:, 0], roadmap.nodes[:, 1], s=4, alpha=0.4)
        if waypoints is not None:
            wp = np.asarray(waypoints)
            ax.plot(wp[:, 0], wp[:, 1], "r-o", ms=3)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title("roadmap (top view)")
        fig.tight_layout()
        fig.savefig(_figure_path(Path(args.dump_roadmap)), dpi=120)
        plt.close(fig)
        print(f"roadmap: {args.dump_roadmap}")
    return EXIT_OK if waypoints is not None else EXIT_ERROR


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arch",
                                     description="hierarchical assembly workcell tools")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scene spec JSON (default: built-in scene)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--target", default="hexagon")

    p = sub.add_parser("serve", help="run the demonstration service")
    common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--insert-policy", help="trained insert policy checkpoint")
    p.add_argument("--data-dir", help="trial output directory")
    p.add_argument("--ui", help="static UI bundle directory")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("collect", help="collect demonstrations")
    common(p)
    p.add_argument("--oracle", action="store_true",
                   help="use the scripted oracle demonstrator")
    p.add_argument("--insert-policy", required=True)
    p.add_argument("--n-success", type=int, default=20)
    p.add_argument("--n-recovery", type=int, default=20)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("train-insert", help="train the insertion policy (PPO)")
    common(p)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--time-budget", type=float, default=None,
                   help="wall-clock training budget in seconds")
    p.add_argument("--log", help="per-iteration CSV log path")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train_insert)

    p = sub.add_parser("train-high", help="behavior-clone the high-level policy")
    common(p)
    p.add_argument("--demos", required=True, help="demonstration JSONL path")
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train_high)

    p = sub.add_parser("eval", help="run the 20-trial evaluation protocol")
    common(p)
    p.add_argument("--high-policy", required=True,
                   help="checkpoint path, or 'oracle' / 'random'")
    p.add_argument("--insert-policy", required=True)
    p.add_argument("--n-trials", type=int, default=20)
    p.add_argument("--slip", type=float, default=0.0,
                   help="grasp slip probability")
    p.add_argument("--spl-convention", choices=["paper", "standard"],
                   default="paper")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("pose-bench", help="Monte-Carlo pose refinement benchmark")
    common(p)
    p.add_argument("--n-trials", type=int, default=100)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(fn=cmd_pose_bench)

    p = sub.add_parser("plan-debug", help="roadmap construction and query diagnostics")
    common(p)
    p.add_argument("--nodes", type=int, default=500)
    p.add_argument("--start", type=float, nargs=4,
                   default=[-0.3, -0.2, 0.2, 0.0])
    p.add_argument("--goal", type=float, nargs=4,
                   default=[0.3, 0.2, 0.2, 0.0])
    p.add_argument("--dump-roadmap", help="write roadmap JSON (+ figure)")
    p.set_defaults(fn=cmd_plan_debug)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_ERROR
    except Exception as exc:  # operational failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
