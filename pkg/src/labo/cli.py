"""Operator entry points: run benchmarks, serve the ask/tell API, inspect runs.

Exit codes: 0 success, 1 runtime failure (failed cell, missing campaign,
bind error), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .acquisition import AcquisitionConfig
from .bench import (
    TaskSpec,
    UnknownFunction,
    load_tabular_task,
    load_task_config,
    run_experiment,
    tau_sweep,
)
from .engine import LoopConfig
from .koh import SurrogateFitConfig

DEFAULT_STORAGE = os.environ.get("LABO_STORAGE", os.path.expanduser("~/.labo/campaigns"))


class ConfigError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="labo",
        description="dual-fidelity Bayesian optimization: benchmarks, campaigns, service",
    )
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run seeded benchmark experiments")
    b.add_argument("--task", required=True, help="task name or config path")
    b.add_argument("--data", help="CSV file backing a tabular task")
    b.add_argument(
        "--method",
        action="append",
        choices=["labo", "vanilla", "random-fidelity"],
        help="repeatable; default labo",
    )
    b.add_argument("--seeds", type=int, default=5)
    b.add_argument("--budget", type=int, default=30)
    b.add_argument("--tau", type=float, action="append", help="repeatable for a sweep")
    b.add_argument("--batch", type=int, default=2)
    b.add_argument("--init", type=int, default=3)
    b.add_argument("--warmup", type=int, default=50)
    b.add_argument("--llm-endpoint", default="synthetic:scaled1", help="URL or synthetic:<id>")
    b.add_argument("--max-iterations", type=int, default=200)
    b.add_argument("--seed", type=int, default=0, help="base seed for the cell streams")
    b.add_argument("--n-starts", type=int, default=16)
    b.add_argument("--local-steps", type=int, default=30)
    b.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    b.add_argument("--out", default="bench-out")

    s = sub.add_parser("serve", help="serve the ask/tell HTTP API")
    s.add_argument("--bind", default="127.0.0.1:8000")
    s.add_argument("--storage", default=DEFAULT_STORAGE)
    s.add_argument("--llm-endpoint", default=None, help="default endpoint for new campaigns")
    s.add_argument("--token", default=None, help="static bearer token required from clients")

    i = sub.add_parser("inspect", help="report on a stored campaign")
    i.add_argument("campaign", help="campaign id (with --storage) or campaign directory")
    i.add_argument("--storage", default=DEFAULT_STORAGE)
    return p


def _resolve_task(args) -> TaskSpec:
    try:
        task = load_task_config(args.task)
    except UnknownFunction as e:
        raise ConfigError(str(e)) from e
    if task.objective.kind == "tabular" and task.pool_targets is None:
        if not args.data:
            raise ConfigError(
                f"task {task.name!r} is tabular; supply --data <csv> "
                "(generate a stand-in with labo.bench.generate_stand_in_csv)"
            )
        task = load_tabular_task(args.data, task)
    return task


def cmd_bench(args) -> int:
    task = _resolve_task(args)
    methods = args.method or ["labo"]
    taus = args.tau or [0.75]
    if args.seeds < 1 or args.budget < 1:
        raise ConfigError("--seeds and --budget must be positive")
    cfg = LoopConfig(
        real_budget_T=args.budget,
        tau=taus[0],
        batch_size=args.batch,
        n_init_real=args.init,
        n_warmup_llm=args.warmup,
        seed=args.seed,
        max_iterations=args.max_iterations,
        acquisition=AcquisitionConfig(n_starts=args.n_starts, local_steps=args.local_steps),
        fit_refit=SurrogateFitConfig(n_restarts=2, line_searches=30),
    )
    os.makedirs(args.out, exist_ok=True)
    failed = 0
    if len(taus) > 1:
        rows = tau_sweep(task, taus, args.seeds, cfg, jobs=args.jobs, llm_spec=args.llm_endpoint)
        sweep_path = os.path.join(args.out, f"{task.name}_tau_sweep.csv")
        import csv as _csv

        with open(sweep_path, "w", newline="") as f:
            writer = _csv.writer(f)
            writer.writerow(
                ["tau", "final_obj_mean", "final_obj_std", "iters_to_90_mean",
                 "iters_to_90_std", "lr_ratio_mean", "lr_ratio_std", "n"]
            )
            for r in rows:
                writer.writerow(
                    [r["tau"], r.get("final_obj_mean"), r.get("final_obj_std"),
                     r.get("iters_to_90_mean"), r.get("iters_to_90_std"),
                     r.get("lr_ratio_mean"), r.get("lr_ratio_std"), r.get("n")]
                )
        print(f"tau sweep written to {sweep_path}")
        failed = sum(1 for r in rows if r.get("n", 0) < args.seeds)
    else:
        result = run_experiment(
            task, methods, args.seeds, cfg, out_dir=args.out, jobs=args.jobs,
            llm_spec=args.llm_endpoint,
        )
        for m in methods:
            agg = result.aggregate(m)
            print(
                f"{task.name} {m}: final {agg.get('final_obj_mean')} "
                f"± {agg.get('final_obj_std')} (n={agg.get('n', 0)}) "
                f"L/R {agg.get('lr_ratio_mean')}"
            )
        failed = sum(1 for t in result.traces if t.error is not None)
        for t in result.traces:
            if t.error:
                print(f"cell failed: {t.method} seed {t.seed}: {t.error}", file=sys.stderr)
    return 1 if failed else 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    host, _, port = args.bind.partition(":")
    try:
        port_num = int(port or "8000")
    except ValueError:
        raise ConfigError(f"invalid --bind {args.bind!r}") from None
    os.makedirs(args.storage, exist_ok=True)
    app = create_app(args.storage, token=args.token, default_llm_endpoint=args.llm_endpoint)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=port_num, log_level="info")
    except (OSError, SystemExit) as e:
        print(f"serve failed: {e}", file=sys.stderr)
        return 1
    return 0


def cmd_inspect(args) -> int:
    from . import store
    from .engine import compute_diagnostics, final_kernel_spec

    if os.path.isdir(args.campaign) and os.path.exists(
        os.path.join(args.campaign, "snapshot.json")
    ):
        root, cid = os.path.split(os.path.abspath(args.campaign.rstrip("/")))
    else:
        root, cid = args.storage, args.campaign
    try:
        state = store.resume(root, cid)
    except FileNotFoundError:
        print(f"campaign {args.campaign!r} not found", file=sys.stderr)
        return 1
    except store.CorruptLog as e:
        print(f"warning: corrupt log tail after seq {e.seq}; using recovered prefix")
        state = e.recovered_state
    run = state.run
    print(f"campaign {state.id}  status={state.status.value}  task={state.task.name}")
    print(f"iterations: {run.iteration}")
    print(f"real used: {run.real_used}/{state.cfg.real_budget_T}  llm used: {run.llm_used}")
    ratio = run.llm_used / run.real_used if run.real_used else float("nan")
    print(f"L/R ratio: {ratio:.3f}")
    best = None if not run.convergence else run.best_so_far
    print(f"best so far: {best}")
    rhos = [f"{r.rho:.4f}" for r in run.records]
    print("rho trajectory: " + (" ".join(rhos) if rhos else "(none)"))
    decisions = [c.gate_decision for r in run.records for c in r.candidates]
    n_llm = sum(1 for d in decisions if d == "llm_accepted")
    n_real = sum(1 for d in decisions if d == "needs_experiment")
    n_drop = sum(1 for d in decisions if d == "dropped")
    print(f"gate decisions: {n_llm} llm_accepted, {n_real} needs_experiment, {n_drop} dropped")
    diag = compute_diagnostics(
        run.records, run.real_trace, known_optimum=state.task.known_optimum,
        kernel=final_kernel_spec(run, state.cfg),
    )
    verdict = "PASS" if diag.width_ok else "FAIL"
    print(
        f"width-sum bound: {verdict} "
        f"(sum {diag.width_sum:.4f} <= bound {diag.width_bound:.4f}, gamma {diag.info_gain_gamma:.4f})"
    )
    if diag.cumulative_regret is not None:
        print(f"cumulative regret: {diag.cumulative_regret:.6f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bench":
            return cmd_bench(args)
        if args.command == "serve":
            return cmd_serve(args)
        if args.command == "inspect":
            return cmd_inspect(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    parser.error("unknown command")
    return 2


if __name__ == "__main__":
    sys.exit(main())
