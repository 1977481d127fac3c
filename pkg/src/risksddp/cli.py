"""Command line front end.

Subcommands: generate (write a hydrothermal instance), train (run the
cutting-plane loop and emit the bounds CSV plus a checkpoint), evaluate
(simulate a trained policy), sweep (train across a risk-parameter grid),
and oracle (exact reference values for small instances).

Set RISKSDDP_LOG=debug|info|... to get progress logging on stderr.
All outputs are deterministic for a fixed seed, independent of the
thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from risksddp import engine, evaluation, oracle, qfactor
from risksddp.engine import TrainOptions
from risksddp.lp import LPError
from risksddp.model import (HydroParams, generate_hydrothermal, load_problem,
                            write_problem)
from risksddp.risk import KLDivergence, MeanAVaR, parse_risk_spec


def _setup_logging() -> None:
    level_name = os.environ.get("RISKSDDP_LOG", "").strip()
    if not level_name:
        return
    level = getattr(logging, level_name.upper(), None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(
        level=level, stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _gap_pct(lower: float, upper: float) -> str:
    return f"{100.0 * (upper - lower) / lower:.2f}"


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _default_checkpoint(out: str | None) -> str:
    if out:
        stem, _ = os.path.splitext(out)
        return stem + ".ckpt.json"
    return "risksddp.ckpt.json"


def _train_options(args, checkpoint: str) -> TrainOptions:
    return TrainOptions(
        iterations=args.iters, seed=args.seed, eval_every=args.eval_every,
        eval_samples=args.samples, z_value=args.z, beta=args.beta,
        backward_resolve=args.backward_resolve, eval_threads=args.threads,
        timing=args.timing, checkpoint_path=checkpoint,
        checkpoint_every=args.checkpoint_every)


def _cmd_generate(args) -> int:
    params = HydroParams(
        reservoirs=args.reservoirs, stages=args.stages,
        realizations=args.realizations, seed=args.seed,
        demand_base=args.demand_base, demand_swing=args.demand_swing,
        release_cap=args.release_cap, spill_cap=args.spill_cap,
        initial_fill=args.initial_fill,
        thermal_caps=tuple(float(v) for v in args.thermal_caps.split(",")),
        thermal_costs=tuple(float(v) for v in args.thermal_costs.split(",")),
        deficit_penalty=args.deficit_penalty, inflow_mean=args.inflow_mean,
        inflow_sigma=args.inflow_sigma,
        terminal_water_value=args.terminal_water_value)
    problem = generate_hydrothermal(params)
    write_problem(problem, args.out)
    print(f"wrote {args.out}: {problem.stages} stages, "
          f"{problem.state_dims[0]} reservoirs, "
          f"{problem.n_realizations(1)} realizations per stage")
    return 0


def _cmd_train(args) -> int:
    problem = load_problem(args.instance)
    risk = parse_risk_spec(args.risk)
    checkpoint = args.checkpoint or _default_checkpoint(args.out)
    options = _train_options(args, checkpoint)
    if args.variant == "qfactor":
        state = qfactor.train_q(problem, risk, options)
        qfactor.save_q_checkpoint(state, checkpoint)
        lower = state.lower_bound() if state.iteration else None
    else:
        state = engine.train(problem, risk, options)
        engine.save_checkpoint(state, checkpoint)
        lower = state.lower_bound if state.iteration else None
    csv = engine.bounds_csv(state.history)
    _write_text(args.out, csv)
    summary = f"iterations={state.iteration}"
    if lower is not None:
        summary += f" lower_bound={lower!r}"
    upper = next((rec.upper_bound for rec in reversed(state.history)
                  if rec.upper_bound is not None), None)
    if upper is not None and lower is not None:
        summary += (f" upper_bound={upper!r}"
                    f" gap_pct={_gap_pct(lower, upper)}")
    out = sys.stderr if args.out is None else sys.stdout
    print(summary, file=out)
    return 0


def _load_any_checkpoint(problem, path: str):
    """Returns (risk, policy, lower_bound or None) for either variant."""
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if cfg.get("variant") == "qfactor":
        state = qfactor.q_state_from_config(problem, cfg)
        return state.risk, state.policy(), state.lower_bound()
    state = engine.state_from_config(problem, cfg)
    return state.risk, state.pools, state.lower_bound


def _cmd_evaluate(args) -> int:
    problem = load_problem(args.instance)
    risk, policy, lower = _load_any_checkpoint(problem, args.checkpoint)
    if args.risk is not None:
        risk = parse_risk_spec(args.risk)
        if not callable(policy):
            policy = evaluation.PoolPolicy(problem, risk, policy)
    result = evaluation.evaluate_policy(
        problem, risk, policy, args.samples, seed=args.seed,
        z_value=args.z, beta=args.beta, threads=args.threads)
    if args.out is not None:
        lines = ["path,value"]
        lines.extend(f"{i},{float(v)!r}" for i, v in enumerate(result.samples))
        _write_text(args.out, "\n".join(lines) + "\n")
    summary = (f"samples={args.samples} mean_v1={result.mean!r} "
               f"sigma={result.sigma!r} upper_bound={result.upper_bound!r}")
    if lower is not None:
        summary += (f" lower_bound={lower!r}"
                    f" gap_pct={_gap_pct(lower, result.upper_bound)}")
    print(summary)
    return 0


def _cmd_sweep(args) -> int:
    problem = load_problem(args.instance)
    grid = [float(v) for v in args.grid.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]
    lines = ["family,param,seed,lower_bound,mean_v1,sigma,upper_bound,gap_pct"]
    for param in grid:
        if args.family == "mean-avar":
            risk = MeanAVaR([1.0 - param, param], [args.alpha])
        elif args.family == "kl":
            risk = KLDivergence(param)
        else:
            raise ValueError(f"unknown sweep family {args.family!r}")
        for seed in seeds:
            options = TrainOptions(
                iterations=args.iters, seed=seed, eval_every=0,
                backward_resolve=args.backward_resolve,
                checkpoint_path=args.checkpoint)
            state = engine.train(problem, risk, options)
            result = evaluation.evaluate_policy(
                problem, risk, state.pools, args.samples, seed=(seed, 3),
                z_value=args.z, beta=args.beta, threads=args.threads)
            lower = state.lower_bound
            lines.append(",".join([
                args.family, repr(param), str(seed), repr(lower),
                repr(result.mean), repr(result.sigma),
                repr(result.upper_bound),
                _gap_pct(lower, result.upper_bound)]))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_oracle(args) -> int:
    problem = load_problem(args.instance)
    if args.risk is None and args.checkpoint is None:
        raise ValueError("oracle needs --risk or --checkpoint")
    risk = parse_risk_spec(args.risk) if args.risk is not None else None
    policy = None
    if args.checkpoint is not None:
        ck_risk, policy, _ = _load_any_checkpoint(problem, args.checkpoint)
        risk = risk or ck_risk
    lo, hi = oracle.exact_optimal_enclosure(problem, risk, budget=args.budget)
    val = oracle.exact_optimal_value(problem, risk, budget=args.budget)
    print(f"optimal_value={val!r} enclosure=({lo!r},{hi!r})")
    if policy is not None:
        pval = oracle.exact_policy_value(problem, risk, policy,
                                         budget=args.budget)
        ev1 = evaluation.enumerate_expected_v1(problem, risk, policy)
        print(f"policy_value={pval!r} expected_recursion={ev1!r}")
    return 0


def _add_eval_flags(p: argparse.ArgumentParser, samples_default: int) -> None:
    p.add_argument("--samples", type=int, default=samples_default,
                   help="simulation paths per evaluation")
    p.add_argument("--z", type=float, default=2.0,
                   help="normal quantile for the upper confidence bound")
    p.add_argument("--beta", type=float, default=None,
                   help="tail mass for the bound; overrides --z")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for path simulation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risksddp",
        description="Nested risk-averse stochastic control via cutting planes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a hydrothermal test instance")
    p.add_argument("--out", required=True)
    p.add_argument("--reservoirs", type=int, default=4)
    p.add_argument("--stages", type=int, default=12)
    p.add_argument("--realizations", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--demand-base", type=float, default=34.0)
    p.add_argument("--demand-swing", type=float, default=0.15)
    p.add_argument("--release-cap", type=float, default=12.0)
    p.add_argument("--spill-cap", type=float, default=30.0)
    p.add_argument("--initial-fill", type=float, default=15.0)
    p.add_argument("--thermal-caps", default="6,6,6")
    p.add_argument("--thermal-costs", default="12,30,75")
    p.add_argument("--deficit-penalty", type=float, default=400.0)
    p.add_argument("--inflow-mean", type=float, default=7.0)
    p.add_argument("--inflow-sigma", type=float, default=4.0)
    p.add_argument("--terminal-water-value", type=float, default=15.0)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="run the cutting-plane training loop")
    p.add_argument("--instance", required=True)
    p.add_argument("--risk", default="expectation",
                   help="expectation | mean-avar:W0,W1,..;A1,.. | kl:EPS "
                        "| oce:FILE")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=10,
                   help="iterations between policy evaluations (0 disables)")
    p.add_argument("--variant", choices=("value", "qfactor"), default="value")
    p.add_argument("--backward-resolve", action="store_true",
                   help="re-solve stages against updated pools when cutting")
    p.add_argument("--timing", action="store_true",
                   help="fill the wall-time column (breaks byte determinism)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", default=None, help="bounds CSV path")
    _add_eval_flags(p, samples_default=10)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="simulate a trained policy")
    p.add_argument("--instance", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--risk", default=None,
                   help="override the checkpoint's risk measure")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="per-path values CSV path")
    _add_eval_flags(p, samples_default=1000)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="train across a risk-parameter grid")
    p.add_argument("--instance", required=True)
    p.add_argument("--family", choices=("mean-avar", "kl"), required=True)
    p.add_argument("--grid", required=True,
                   help="comma-separated risk parameter values")
    p.add_argument("--alpha", type=float, default=0.05,
                   help="tail level for the mean-avar family")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--backward-resolve", action="store_true")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None, help="sweep summary CSV path")
    _add_eval_flags(p, samples_default=1000)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("oracle", help="exact reference values (small trees)")
    p.add_argument("--instance", required=True)
    p.add_argument("--risk", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--budget", type=int, default=oracle.TREE_NODE_BUDGET,
                   help="scenario tree node budget")
    p.set_defaults(func=_cmd_oracle)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LPError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
