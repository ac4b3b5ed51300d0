"""Command-line harness: classify, solve, oracle, train-ddpg, run-fl, compare.

Every subcommand writes CSV/JSON artifacts into ``--out`` plus a manifest
listing the config hash, derived seeds and a sha256 of each artifact.
Exit codes: 0 ok, 2 bad config, 3 missing upstream artifact, 4 divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, scenario
from .config import ConfigError, ExperimentConfig, derive_seed, load_config
from .ddpg import DivergenceError, TrainResult, train, write_reward_csv
from .fl import accuracy_at_budget, build_setup, run_fl, write_fl_csv
from .oracle import BaselineKind, grid_search, oracle_solver
from .topology import write_roster

log = logging.getLogger("pinchfl")

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DIVERGENCE = 0, 2, 3, 4
CONVERGED_WINDOW = 1000


def _json_dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _decision_dict(decision, t, feasible, **extra) -> dict:
    out = {"best_decision": decision.to_dict(), "best_T": t, "feasible": feasible}
    out.update(extra)
    return out


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, seeds: dict,
                    files: list[Path]) -> None:
    inventory = {f.name: hashlib.sha256(f.read_bytes()).hexdigest() for f in files}
    _json_dump(out / f"manifest_{command}.json", {
        "command": command,
        "config_sha256": cfg.digest(),
        "version": __version__,
        "seeds": seeds,
        "outputs": inventory,
    })


def train_scheme(cfg: ExperimentConfig, scheme: str, selection) -> tuple[str, TrainResult, float]:
    scen = scenario.build(cfg, selection)
    kind = scenario.scheme_kind(cfg, scheme)
    instance = scen.instance(kind)
    seed = derive_seed(cfg.seeds.master, f"ddpg:{scheme}")
    res = train(instance, cfg.solver.hyperparams(), seed, kind)
    oracle = grid_search(instance, cfg.solver.search_spec(), kind, cfg.solver.xi1,
                         cfg.solver.xi2, cfg.solver.T_cap)
    return scheme, res, oracle.round_latency


def _map(fn, jobs: list[tuple], parallel: int) -> list:
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, len(jobs))) as pool:
            futures = [pool.submit(fn, *job) for job in jobs]
            return [f.result() for f in futures]
    return [fn(*job) for job in jobs]


def _save_training(out: Path, scheme: str, res: TrainResult) -> list[Path]:
    ckpt = out / f"ddpg_{scheme}.npz"
    res.agent.save(ckpt)
    rewards = out / f"rewards_{scheme}.csv"
    write_reward_csv(rewards, res.episodes)
    best = out / f"best_decision_{scheme}.json"
    feasible_tail = float(np.mean([f for _, f in res.actions])) if res.actions else float("nan")
    _json_dump(best, _decision_dict(res.best_decision, res.best_t, res.best_feasible,
                                    best_step=res.best_step,
                                    converged_reward=res.converged_reward(CONVERGED_WINDOW),
                                    feasible_fraction_tail=feasible_tail))
    return [ckpt, rewards, best]


def cmd_classify(cfg: ExperimentConfig, args, out: Path) -> tuple[list[Path], dict]:
    geo = scenario.geometry(cfg)
    population = scenario.clients(cfg, geo)
    sel, outcomes = scenario.classify(cfg, geo, population)
    path = out / "classification.csv"
    scenario.write_classification(path, outcomes, sel)
    roster = out / "roster.csv"
    write_roster(roster, population)
    log.info("selected conventional=%s pinching=%s", sel.conventional, sel.pinching)
    return [path, roster], {"placement": derive_seed(cfg.seeds.master, "placement")}


def cmd_train(cfg: ExperimentConfig, args, out: Path) -> tuple[list[Path], dict]:
    selection = scenario.read_classification(out / "classification.csv")
    scheme, res, oracle_t = train_scheme(cfg, args.scheme, selection)
    log.info("%s: best T %.6g (oracle %.6g), converged reward %.6g", scheme, res.best_t,
             oracle_t, res.converged_reward(CONVERGED_WINDOW))
    return _save_training(out, scheme, res), {f"ddpg:{scheme}": derive_seed(cfg.seeds.master,
                                                                           f"ddpg:{scheme}")}


def cmd_solve(cfg: ExperimentConfig, args, out: Path) -> tuple[list[Path], dict]:
    files, seeds = cmd_classify(cfg, args, out)
    more, more_seeds = cmd_train(cfg, args, out)
    return files + more, {**seeds, **more_seeds}


def cmd_oracle(cfg: ExperimentConfig, args, out: Path) -> tuple[list[Path], dict]:
    selection = scenario.read_classification(out / "classification.csv")
    scen = scenario.build(cfg, selection)
    kind = scenario.scheme_kind(cfg, args.scheme)
    res = grid_search(scen.instance(kind), cfg.solver.search_spec(), kind, cfg.solver.xi1,
                      cfg.solver.xi2, cfg.solver.T_cap)
    path = out / f"oracle_{args.scheme}.json"
    res.save(path)
    log.info("%s: oracle T %.6g after %d evaluations", args.scheme, res.round_latency,
             res.evaluations)
    return [path], {}


def _fl_scheme(cfg: ExperimentConfig, scheme: str):
    geo = scenario.geometry(cfg)
    population = scenario.clients(cfg, geo)
    f = cfg.fl
    setup = build_setup(geo, population, total_samples=f.total_samples, n_classes=f.classes,
                        n_features=f.features, skew=f.alpha_skew,
                        seed=derive_seed(cfg.seeds.master, "fl-data"),
                        n_select=cfg.population.N, n_conventional=cfg.population.K,
                        lr=f.alpha, test_samples=f.test_samples,
                        classifier=scenario.classifier(cfg), fading=f.fading,
                        dc_rate=cfg.fuzzy.weibull_rate)
    kind = scenario.scheme_kind(cfg, scheme)
    s = cfg.solver
    if s.fl_solver == "ddpg":
        from .ddpg import ddpg_solver
        solver = ddpg_solver(s.hyperparams(), derive_seed(cfg.seeds.master, f"fl-ddpg:{scheme}"))
    else:
        solver = oracle_solver(s.search_spec(), s.xi1, s.xi2, s.T_cap)
    return scheme, run_fl(setup, kind, f.rounds, solver, derive_seed(cfg.seeds.master, "fl"))


def _fl_outputs(cfg: ExperimentConfig, out: Path, prefix: str, results) -> list[Path]:
    logs_path = out / f"{prefix}_log.csv"
    for i, (scheme, logs) in enumerate(results):
        write_fl_csv(logs_path, logs, scheme, cfg.seeds.master, append=i > 0)

    finished = [logs[-1].wall_clock for _, logs in results if logs]
    budget = min(finished) if finished else 0.0
    summary = out / f"{prefix}_summary.csv"
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        fh.write("scheme,budget_s,rounds_within_budget,max_accuracy_at_budget,round_T_s\n")
        for scheme, logs in results:
            n = sum(1 for l in logs if l.wall_clock <= budget * (1 + 1e-12))
            t = logs[0].round_latency if logs else float("nan")
            fh.write(f"{scheme},{budget!r},{n},{accuracy_at_budget(logs, budget)!r},{t!r}\n")
    return [logs_path, summary]


def cmd_run_fl(cfg: ExperimentConfig, args, out: Path) -> tuple[list[Path], dict]:
    schemes = scenario.SCHEMES if args.scheme == "all" else (args.scheme,)
    results = _map(_fl_scheme, [(cfg, s) for s in schemes], args.parallel)
    seeds = {k: derive_seed(cfg.seeds.master, k) for k in ("placement", "fl-data", "fl")}
    return _fl_outputs(cfg, out, "fl", results), seeds


def cmd_compare(cfg: ExperimentConfig, args, out: Path) -> tuple[list[Path], dict]:
    """Train DDPG from scratch for every scheme and join the reward series."""
    files, seeds = cmd_classify(cfg, args, out)
    selection = scenario.read_classification(out / "classification.csv")
    trained = _map(train_scheme, [(cfg, s, selection) for s in scenario.SCHEMES],
                   args.parallel)
    series = out / "compare_rewards.csv"
    n_ep = max(len(r.episodes) for _, r, _ in trained)
    with open(series, "w", encoding="utf-8", newline="") as fh:
        fh.write("episode," + ",".join(s for s, _, _ in trained) + "\n")
        for i in range(n_ep):
            cells = [repr(r.episodes[i].mean_reward) if i < len(r.episodes) else ""
                     for _, r, _ in trained]
            fh.write(f"{i}," + ",".join(cells) + "\n")
    summary = out / "compare_summary.csv"
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        fh.write("scheme,converged_reward,best_T,oracle_T,best_feasible,feasible_fraction_tail\n")
        for scheme, res, oracle_t in trained:
            tail = float(np.mean([f for _, f in res.actions])) if res.actions else float("nan")
            fh.write(f"{scheme},{res.converged_reward(CONVERGED_WINDOW)!r},{res.best_t!r},"
                     f"{oracle_t!r},{res.best_feasible},{tail!r}\n")
            log.info("%s: converged reward %.6g, best T %.6g, oracle T %.6g", scheme,
                     res.converged_reward(CONVERGED_WINDOW), res.best_t, oracle_t)
    files += [series, summary]
    for s in scenario.SCHEMES:
        seeds[f"ddpg:{s}"] = derive_seed(cfg.seeds.master, f"ddpg:{s}")
    fl_results = _map(_fl_scheme, [(cfg, s) for s in scenario.SCHEMES], args.parallel)
    files += _fl_outputs(cfg, out, "compare_fl", fl_results)
    return files, seeds


COMMANDS = {
    "classify": cmd_classify,
    "solve": cmd_solve,
    "oracle": cmd_oracle,
    "train-ddpg": cmd_train,
    "run-fl": cmd_run_fl,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML experiment config")
    common.add_argument("--seed", type=int, default=None, help="master seed (u64)")
    common.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
    common.add_argument("--parallel", type=int, default=1,
                        help="worker processes for per-scheme jobs")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted-path config override")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pinchfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    scheme_choices = list(scenario.SCHEMES)
    sub.add_parser("classify", parents=[common], help="fuzzy client classification")
    for name in ("solve", "train-ddpg", "oracle"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--scheme", choices=scheme_choices, default=BaselineKind.OPTIMIZED)
    p = sub.add_parser("run-fl", parents=[common])
    p.add_argument("--scheme", choices=["all"] + scheme_choices, default="all")
    sub.add_parser("compare", parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.parallel < 1:
        print("config error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seeds.master={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        files, seeds = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except scenario.DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    resolved = out / "config_resolved.yaml"
    resolved.write_text(cfg.dump(), encoding="utf-8")
    _write_manifest(out, args.command, cfg, seeds, files + [resolved])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
