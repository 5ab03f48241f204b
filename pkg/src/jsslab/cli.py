"""Command-line entry point.

Exit codes: 0 success, 1 validation or runtime error, 2 usage error.
``JSSLAB_OUT_DIR`` overrides the output directory, ``JSSLAB_WORKERS`` the
number of evaluation worker processes.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import engine, hindsight
from .autodiff import atomic_write
from .config import (ConfigError, RunConfig, config_from_dict, default_out_dir, load_config, save_manifest,
                     workers_from_env, write_json)
from .instance import Instance, InstanceError, Scenario, generate_instance
from .rules import RuleKind, apply_rule, parse_rule


class UsageError(Exception):
    pass


def _path(p) -> str:
    return str(Path(p).resolve())


def _base_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        d = cfg.to_dict()
        d["seed"] = args.seed
        d["train"]["seed"] = args.seed
        cfg = config_from_dict(d)
    return cfg


def _override(cfg: RunConfig, block: str, **values) -> RunConfig:
    d = cfg.to_dict()
    for k, v in values.items():
        if v is not None:
            d[block][k] = v
    return config_from_dict(d)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(default_out_dir(cfg.out_dir))
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_instances(path) -> list[tuple[str, Instance]]:
    """A single instance file or every ``*.json`` instance in a directory (sorted by name)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"instances path not found: {p}")
    files = [p] if p.is_file() else sorted(f for f in p.glob("*.json") if f.name != "manifest.json")
    if not files:
        raise InstanceError(f"no instance files in {p}")
    return [(f.stem, Instance.from_json(f.read_text())) for f in files]


# --- commands ------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _base_config(args)
    cfg = _override(cfg, "generate", n_jobs=args.jobs, n_machines=args.machines, n_branch=args.branch,
                    count=args.count, branch_probs=args.probs)
    g = cfg.generate
    out = _out_dir(args, cfg)
    from .seeding import split_seed
    files = []
    for i in range(g.count):
        inst = generate_instance(g.n_jobs, g.n_machines, g.n_branch, split_seed(cfg.seed, f"instance/{i}"),
                                 tuple(g.branch_probs))
        f = out / f"inst_{g.n_jobs}x{g.n_machines}_b{g.n_branch}_{i:03d}.json"
        atomic_write(f, inst.to_json().encode())
        files.append(f.name)
    save_manifest(out, "generate", cfg, files)
    print(f"wrote {len(files)} instances to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _base_config(args)
    cfg = _override(cfg, "train", n_jobs=args.jobs, n_machines=args.machines, n_branch=args.branch,
                    iterations=args.iterations, mode=args.mode, K=args.K, lr=args.lr,
                    eval_every=args.eval_every)
    out = _out_dir(args, cfg)
    from .trainer import train
    log = None if args.quiet else (lambda s: print(s, flush=True))
    res = train(cfg.train, out, log=log)
    save_manifest(out, "train", cfg, ["best.ckpt", "last.ckpt", "curve.csv"])
    print(f"best eval mean {res['best_eval_mean']:.3f}; checkpoint {res['checkpoint']}")
    return 0


def _policies(ev) -> list:
    from .evaluation import baseline_policies, load_model_policy
    from .policies import RulePolicy
    pols = []
    for name in ev.policies:
        if name.upper() == "PDRS":
            pols += baseline_policies(include_random=False)
        elif name.upper() == "ALL":
            pols += baseline_policies(include_random=True)
        else:
            pols.append(RulePolicy(parse_rule(name)))
    for ck in ev.checkpoints:
        pols.append(load_model_policy(ck, name=None))
    if not pols:
        raise UsageError("no policy given (use --policy and/or --checkpoint)")
    names = [p.name for p in pols]
    if len(set(names)) != len(names):
        raise ConfigError([f"duplicate policy names: {names}"])
    return pols


def cmd_evaluate(args) -> int:
    cfg = _base_config(args)
    cfg = _override(cfg, "evaluate", policies=args.policy, runs=args.runs, reference=args.reference,
                    instances=_path(args.instances) if args.instances else None,
                    checkpoints=[_path(c) for c in args.checkpoint] if args.checkpoint else None)
    ev = cfg.evaluate
    if not ev.instances:
        raise UsageError("--instances is required")
    if args.checkpoint and args.policy is None:
        cfg = _override(cfg, "evaluate", policies=[])
        ev = cfg.evaluate
    from .evaluation import evaluate_policies, write_csv
    pols = _policies(ev)
    named = load_instances(ev.instances)
    rep = evaluate_policies(pols, [i for _, i in named], runs=ev.runs, seed=cfg.seed, reference=ev.reference,
                            alpha=ev.alpha, workers=workers_from_env(), ids=[n for n, _ in named])
    out = _out_dir(args, cfg)
    write_csv(out / "results.csv", rep.to_csv())
    save_manifest(out, "evaluate", cfg, ["results.csv"])
    for r in rep.summary():
        gap = "" if r.gap_pct is None else f"  gap {r.gap_pct:7.2f}% ({r.reference_kind})"
        print(f"{r.policy:12s} avg {r.avg:9.2f}  cvar {r.cvar:9.2f}{gap}")
    print(f"wrote {out / 'results.csv'}")
    return 0


def _read_scenario(path) -> tuple[Optional[Scenario], Instance]:
    data = json.loads(Path(path).read_text())
    if "branch_choices" in data:
        sc = Scenario.from_dict(data)
        return sc, sc.instance
    inst = Instance.from_dict(data)
    return None, inst


def cmd_solve(args) -> int:
    cfg = _base_config(args)
    cfg = _override(cfg, "solve", scenario=_path(args.scenario) if args.scenario else None,
                    node_budget=args.node_budget, expected=args.expected or None)
    sv = cfg.solve
    if not sv.scenario:
        raise UsageError("--scenario is required")
    from .instance import enumerate_scenarios
    from .solver import expected_optimal, solve_optimal
    sc, inst = _read_scenario(sv.scenario)
    if sv.expected:
        print(f"{expected_optimal(inst, node_budget=sv.node_budget):.6f}")
        return 0
    if sc is None:
        if inst.scenario_count() != 1:
            raise InstanceError(f"instance has {inst.scenario_count()} scenarios; pass a scenario file or --expected")
        sc = enumerate_scenarios(inst)[0]
    c, proof = solve_optimal(sc, sv.node_budget)
    print(c if proof else f"{c} (best found; node budget exhausted)")
    return 0


def cmd_replay(args) -> int:
    cfg = _base_config(args)
    cfg = _override(cfg, "replay", trace=_path(args.trace) if args.trace else None,
                    instance=_path(args.instance) if args.instance else None)
    rp = cfg.replay
    if not rp.trace or not rp.instance:
        raise UsageError("--trace and --instance are required")
    inst = Instance.from_json(Path(rp.instance).read_text())
    traj = hindsight.trajectory_from_trace(inst, engine.read_trace(rp.trace))
    h = hindsight.reconstruct(traj, record_views=False)
    dump = {
        "branch_choices": {str(k): v for k, v in sorted(h.scenario.branch_choices.items())},
        "initial_bound": h.initial_bound,
        "final_makespan": h.final_makespan,
        "steps": hindsight.hindsight_records(h),
    }
    out = _out_dir(args, cfg)
    write_json(out / "hindsight.json", dump)
    save_manifest(out, "replay", cfg, ["hindsight.json"])
    print(f"makespan {h.final_makespan}; reward sum {sum(h.rewards)}; wrote {out / 'hindsight.json'}")
    return 0


def cmd_rollout(args) -> int:
    """One stochastic episode of a rule policy, written as a JSONL trace."""
    import numpy as np
    from .seeding import split_seed
    inst = Instance.from_json(Path(args.instance).read_text())
    rule = parse_rule(args.policy)
    seed = 0 if args.seed is None else args.seed
    state = engine.reset(inst, engine.STOCHASTIC, rng=seed)
    rng = np.random.default_rng(split_seed(seed, "random-policy")) if rule is RuleKind.RANDOM else None
    records = []
    while not state.terminal:
        out = state.step(apply_rule(rule, state, state.eligible(), rng))
        records.append(engine.trace_record(len(records), out, engine.lower_bound(state)))
    engine.write_trace(args.trace, records)
    print(f"makespan {state.makespan}; wrote {args.trace}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _base_config(args)
    cks = None
    if args.checkpoint:
        cks = {}
        for item in args.checkpoint:
            if "=" not in item:
                raise UsageError(f"--checkpoint expects MODE=PATH, got {item!r}")
            m, p = item.split("=", 1)
            cks[m] = _path(p)
    cfg = _override(cfg, "ablate", checkpoints=cks, runs=args.runs,
                    instance_sets=[_path(p) for p in args.instances] if args.instances else None)
    ab = cfg.ablate
    if not ab.instance_sets:
        raise UsageError("--instances is required")
    from .evaluation import ablation_table, write_csv
    sets = {Path(p).name: [i for _, i in load_instances(p)] for p in ab.instance_sets}
    text = ablation_table(ab.checkpoints, sets, runs=ab.runs, seed=cfg.seed, workers=workers_from_env())
    out = _out_dir(args, cfg)
    write_csv(out / "ablation.csv", text)
    save_manifest(out, "ablate", cfg, ["ablation.csv"])
    sys.stdout.write(text)
    return 0


def cmd_variance(args) -> int:
    """Advantage variance with hindsight vs stochastic critic states."""
    from .models import ModelBundle
    from .trainer import advantage_variance
    bundle, _ = ModelBundle.load(args.checkpoint)
    insts = [i for _, i in load_instances(args.instances)]
    seed = 0 if args.seed is None else args.seed
    res = advantage_variance(bundle, insts, K=args.K, seed=seed)
    print(json.dumps(res, indent=1, sort_keys=True))
    return 0


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jsslab", description="Scheduling under routing uncertainty.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="run config or manifest JSON")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory (default $JSSLAB_OUT_DIR or config out_dir)")

    g = sub.add_parser("generate", help="write random instances as JSON")
    common(g)
    g.add_argument("--jobs", type=int)
    g.add_argument("--machines", type=int)
    g.add_argument("--branch", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--probs", type=float, nargs=2)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a policy; writes checkpoints and a curve")
    common(t)
    t.add_argument("--jobs", type=int)
    t.add_argument("--machines", type=int)
    t.add_argument("--branch", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--mode", choices=["UP-AAC", "standard-AC", "no-AAC", "no-UPM"])
    t.add_argument("--K", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate rules and/or checkpoints; writes results.csv")
    common(e)
    e.add_argument("--policy", nargs="+", help="rule names, PDRS (all seven rules) or ALL (rules + RANDOM)")
    e.add_argument("--checkpoint", nargs="+")
    e.add_argument("--instances")
    e.add_argument("--runs", type=int)
    e.add_argument("--reference", choices=["auto", "optimal", "best-found", "none"])
    e.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("solve", help="optimal makespan of a deterministic scenario")
    common(s, out=False)
    s.add_argument("--scenario")
    s.add_argument("--node-budget", type=int)
    s.add_argument("--expected", action="store_true", help="probability-weighted optimum over all scenarios")
    s.set_defaults(fn=cmd_solve)

    r = sub.add_parser("replay", help="hindsight reconstruction of an episode trace")
    common(r)
    r.add_argument("--trace")
    r.add_argument("--instance")
    r.set_defaults(fn=cmd_replay)

    a = sub.add_parser("ablate", help="ablation table over training modes")
    common(a)
    a.add_argument("--checkpoint", nargs="+", help="MODE=PATH for each mode")
    a.add_argument("--instances", nargs="+", help="one directory per instance set")
    a.add_argument("--runs", type=int)
    a.set_defaults(fn=cmd_ablate)

    ro = sub.add_parser("rollout", help="run one rule-policy episode and write its trace")
    ro.add_argument("--instance", required=True)
    ro.add_argument("--policy", default="SPT")
    ro.add_argument("--seed", type=int)
    ro.add_argument("--trace", required=True)
    ro.set_defaults(fn=cmd_rollout)

    v = sub.add_parser("variance", help="advantage variance: hindsight vs stochastic critic states")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--instances", required=True)
    v.add_argument("--K", type=int, default=8)
    v.add_argument("--seed", type=int)
    v.set_defaults(fn=cmd_variance)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, InstanceError, ValueError, KeyError, FileNotFoundError, OSError,
            hindsight.ReplayError, hindsight.IncompleteTrajectoryError, engine.EngineError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
