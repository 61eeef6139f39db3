"""Command-line front end: instance generation, solver runs, benchmark
sweeps, and exploration episodes.

Exit codes: 0 success, 2 usage or generation failure, 3 infeasible
instance, 4 budget exhausted with no solution. All randomness flows from
`--seed` through CPython's Mersenne Twister (the `random` module), so
every artifact regenerates bit-identically across platforms.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import baselines, exploresim, peaf
from .gridmap import (
    DEFAULT_CLASSES,
    AgentClass,
    Cell,
    Terrain,
    builtin_map_names,
    resolve_map_ref,
)
from .instance import (
    GenerationError,
    InfeasibleInstanceError,
    MhppInstance,
    generate_random_instance,
    instance_to_json,
    load_instance,
    validate_solution,
)

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_NO_SOLUTION = 4

PRESETS = {
    "setting-a": {"nodes": 60, "gv": 3, "av": 3},
    "setting-b": {"nodes": 150, "gv": 10, "av": 10},
}


def _map_ref(value: str) -> str:
    if value.startswith("builtin:") or Path(value).exists():
        return value
    if value in builtin_map_names():
        return f"builtin:{value}"
    return value


# -- gen ----------------------------------------------------------------

def cmd_gen(args, parser) -> int:
    if args.preset:
        preset = PRESETS[args.preset]
        args.nodes = preset["nodes"]
        args.gv = preset["gv"]
        args.av = preset["av"]
    if not args.nodes or args.nodes < 1:
        parser.error("--nodes must be a positive count (or use --preset)")
    ref = _map_ref(args.map)
    try:
        grid = resolve_map_ref(ref)
        inst = generate_random_instance(
            grid, args.nodes, {"GV": args.gv, "AV": args.av}, seed=args.seed,
            map_ref=ref, distinct_goals=args.distinct_goals)
    except GenerationError as e:
        print(f"generation failed: {e}", file=sys.stderr)
        return EXIT_USAGE
    text = instance_to_json(inst)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}: {inst.n} nodes, {inst.na} agents, seed {args.seed}")
    else:
        print(text, end="")
    return 0


# -- solve --------------------------------------------------------------

def _run_algo(inst: MhppInstance, algo: str, time_limit_ms, budget, eps0, eps_decay):
    """Returns (solution or None, report dict, status, elapsed_ms)."""
    t0 = time.monotonic()
    if algo == "peaf":
        rep = peaf.solve(inst, eps0=eps0, eps_decay=eps_decay,
                         time_limit_ms=time_limit_ms, max_generated=budget)
        return rep.best, rep.to_json(), rep.status, (time.monotonic() - t0) * 1000
    try:
        if algo == "b1":
            sol = baselines.greedy_b1(inst)
        elif algo == "b2":
            sol = baselines.greedy_b2(inst)
        elif algo == "oracle":
            sol = baselines.brute_force_oracle(inst)
        else:
            raise ValueError(f"unknown algorithm {algo!r}")
    except InfeasibleInstanceError as e:
        return None, {"status": "infeasible", "error": str(e)}, "infeasible", \
            (time.monotonic() - t0) * 1000
    ms = (time.monotonic() - t0) * 1000
    doc = {"status": "feasible", "solution": sol.to_json(),
           "incumbents": [{"makespan": sol.makespan, "total": sol.total,
                           "at_ms": ms, "eps": None}]}
    return sol, doc, "feasible", ms


def cmd_solve(args, parser) -> int:
    inst = load_instance(args.instance)
    sol, doc, status, ms = _run_algo(inst, args.algo, args.time_limit_ms,
                                     args.budget_labels, args.eps0, args.eps_decay)
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    if status == "infeasible":
        print("infeasible: no capability-respecting solution exists")
        return EXIT_INFEASIBLE
    if sol is None:
        print("no solution found within the budget")
        return EXIT_NO_SOLUTION
    check = validate_solution(inst, sol)
    if not check.ok:
        print(f"INTERNAL: solver emitted an invalid solution: {check.message}",
              file=sys.stderr)
        return 1
    best_ms = doc["incumbents"][-1]["at_ms"] if doc.get("incumbents") else ms
    print(f"algo={args.algo} status={status} makespan={sol.makespan} "
          f"total={sol.total} time_to_best_ms={best_ms:.1f}")
    for i, path in enumerate(sol.paths):
        print(f"  agent {i}: {' -> '.join(map(str, path))}")
    return 0


# -- bench --------------------------------------------------------------

def cmd_bench(args, parser) -> int:
    algos = [a for a in args.algos.split(",") if a]
    if not algos:
        parser.error("--algos must name at least one algorithm")
    for a in algos:
        if a not in ("b1", "b2", "peaf", "oracle"):
            parser.error(f"unknown algorithm {a!r}")
    maps = [m for m in args.maps.split(",") if m]
    if args.preset:
        preset = PRESETS[args.preset]
        args.nodes, args.gv, args.av = preset["nodes"], preset["gv"], preset["av"]
    setting = args.preset or f"n{args.nodes}-gv{args.gv}-av{args.av}"

    rows = []
    for map_name in maps:
        ref = _map_ref(map_name)
        grid = resolve_map_ref(ref)
        for seed in range(args.seed, args.seed + args.seeds):
            try:
                inst = generate_random_instance(
                    grid, args.nodes, {"GV": args.gv, "AV": args.av}, seed=seed,
                    map_ref=ref)
            except GenerationError as e:
                for algo in algos:
                    rows.append([map_name, setting, seed, algo, "", "", "",
                                 f"generation-error: {e}"])
                continue
            for algo in algos:
                try:
                    sol, doc, status, ms = _run_algo(
                        inst, algo, args.time_limit_ms, args.budget_labels,
                        args.eps0, args.eps_decay)
                except ValueError as e:
                    rows.append([map_name, setting, seed, algo, "", "", "", str(e)])
                    continue
                if sol is None:
                    rows.append([map_name, setting, seed, algo, "", "", "", status])
                    continue
                best_ms = doc["incumbents"][-1]["at_ms"]
                t = f"{best_ms:.1f}" if args.timing else ""
                rows.append([map_name, setting, seed, algo, sol.makespan,
                             sol.total, t, "ok"])

    out = Path(args.out) if args.out else None
    header = ["map", "setting", "seed", "algo", "makespan", "total",
              "time_to_best_ms", "status"]
    if out:
        with out.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(rows)
        print(f"wrote {out} ({len(rows)} rows)")
    else:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)

    # per-map averages in the usual table arrangement
    print(f"\nsetting {setting}, seeds {args.seed}..{args.seed + args.seeds - 1}")
    for map_name in maps:
        print(f"{map_name}:")
        print(f"  {'metric':<14}" + "".join(f"{a:>12}" for a in algos))
        for metric, col in (("avg max", 4), ("avg total", 5)):
            vals = []
            for algo in algos:
                ok = [r for r in rows
                      if r[0] == map_name and r[3] == algo and r[7] == "ok"]
                vals.append(sum(r[col] for r in ok) / len(ok) if ok else float("nan"))
            print(f"  {metric:<14}" + "".join(f"{v:>12.1f}" for v in vals))
    return 0


# -- explore ------------------------------------------------------------

def _load_scenario(path):
    doc = json.loads(Path(path).read_text())
    classes = {}
    for c in doc.get("classes", []):
        classes[c["name"]] = AgentClass(
            c["name"], frozenset(Terrain[t] for t in c["passable"]),
            c.get("priority", 0))
    for k in DEFAULT_CLASSES:
        classes.setdefault(k.name, k)
    grid = resolve_map_ref(doc["map"], base_dir=Path(path).parent)
    specs = []
    for r in doc["robots"]:
        cls = classes[r["class"]]
        start = Cell(*r["start"]) if r.get("start") is not None else None
        specs.append((cls, start, r.get("xi")))
    params = {k: doc[k] for k in
              ("alpha", "c0", "rho", "window_radius", "sense_radius", "tg",
               "tick_cap", "global_budget") if k in doc}
    return grid, specs, params, doc.get("seed", 0)


def cmd_explore(args, parser) -> int:
    grid, specs, params, seed = _load_scenario(args.scenario)
    if args.alpha is not None:
        params["alpha"] = args.alpha
    if args.seed is not None:
        seed = args.seed
    ablate = args.ablate
    toggles = {
        "full": (True, True),
        "nopr": (False, True),
        "nohe": (True, False),
        "nolo": (False, False),
    }[ablate]
    cfg = exploresim.ExploConfig(priority_assignment=toggles[0],
                                 hetero_cost=toggles[1], **params)

    outdir = Path(args.out) if args.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    summary = []
    for trial in range(args.trials):
        m = exploresim.run_episode(grid, specs, cfg, seed=seed + trial)
        summary.append(m)
        if outdir:
            (outdir / f"trial{trial}_metrics.json").write_text(
                json.dumps(m.to_json(), indent=2) + "\n")
            with (outdir / f"trial{trial}_traj.csv").open("w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["tick", "robot", "x", "y", "known_cells"])
                w.writerows(m.traces)
        flag = "" if m.complete else f"  [incomplete: {m.reason}]"
        print(f"trial {trial}: ticks={m.ticks} total_length={m.total_length} "
              f"coverage={m.coverage[-1] * 100:.1f}%{flag}")
    mean_ticks = sum(m.ticks for m in summary) / len(summary)
    mean_len = sum(m.total_length for m in summary) / len(summary)
    incomplete = sum(1 for m in summary if not m.complete)
    print(f"\nablate={ablate} alpha={cfg.alpha} trials={args.trials}: "
          f"mean ticks {mean_ticks:.1f}, mean total length {mean_len:.1f}"
          + (f", incomplete {incomplete}" if incomplete else ""))
    return 0


# -- parser -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hetroute",
        description="Min-max multi-agent routing and exploration toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random instance file")
    g.add_argument("--map", default="builtin:riverlands",
                   help="map path or builtin name (see 'maps')")
    g.add_argument("--nodes", type=int, default=None)
    g.add_argument("--gv", type=int, default=2)
    g.add_argument("--av", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--distinct-goals", action="store_true")
    g.add_argument("--out", help="output file (stdout when omitted)")

    s = sub.add_parser("solve", help="solve an instance file")
    s.add_argument("--instance", required=True)
    s.add_argument("--algo", choices=["peaf", "b1", "b2", "oracle"], default="peaf")
    s.add_argument("--time-limit-ms", type=float, default=None)
    s.add_argument("--budget-labels", type=int, default=200000,
                   help="deterministic label-generation budget for peaf")
    s.add_argument("--eps0", type=float, default=0.5)
    s.add_argument("--eps-decay", type=float, default=0.5)
    s.add_argument("--out", help="write the solver report JSON here")

    b = sub.add_parser("bench", help="seed sweep x algorithm matrix, CSV out")
    b.add_argument("--maps", default="riverlands")
    b.add_argument("--nodes", type=int, default=20)
    b.add_argument("--gv", type=int, default=2)
    b.add_argument("--av", type=int, default=2)
    b.add_argument("--preset", choices=sorted(PRESETS))
    b.add_argument("--seeds", type=int, default=30)
    b.add_argument("--seed", type=int, default=0, help="first seed")
    b.add_argument("--algos", default="b1,b2,peaf")
    b.add_argument("--time-limit-ms", type=float, default=1000.0)
    b.add_argument("--budget-labels", type=int, default=25000)
    b.add_argument("--eps0", type=float, default=0.5)
    b.add_argument("--eps-decay", type=float, default=0.5)
    b.add_argument("--timing", action="store_true",
                   help="record wall-clock time_to_best_ms (breaks byte-identical reruns)")
    b.add_argument("--out", help="CSV path (stdout when omitted)")

    e = sub.add_parser("explore", help="run exploration episodes from a scenario")
    e.add_argument("--scenario", required=True, help="scenario JSON file")
    e.add_argument("--trials", type=int, default=5)
    e.add_argument("--ablate", choices=["full", "nopr", "nohe", "nolo"],
                   default="full")
    e.add_argument("--alpha", type=float, default=None,
                   help="override the scenario's hetero-cost gain")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--out", help="directory for metrics/trajectory files")

    m = sub.add_parser("maps", help="list bundled maps")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "maps":
        for name in builtin_map_names():
            print(f"builtin:{name}")
        return 0
    handler = {"gen": cmd_gen, "solve": cmd_solve, "bench": cmd_bench,
               "explore": cmd_explore}[args.command]
    return handler(args, parser)


if __name__ == "__main__":
    sys.exit(main())
