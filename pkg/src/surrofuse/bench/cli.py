"""Simulation tables, single scenarios, semi-synthetic runs and oracle values."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..data import OBSERVATIONAL, SampleError, load_csv, read_keyvalue, save_csv, write_schema
from ..dgp import ORACLE_DRAWS, DgpConfig, draw_samples, ground_truth_population, oracle_with_se
from ..forest import ForestParams
from .harness import (
    FAST_TREES,
    ScenarioError,
    load_scenario,
    preset_grid,
    render_rows,
    run_table,
    write_rows,
)
from .pipelines import PipelineError
from .semisynthetic import (
    DEFAULT_REPLICATIONS,
    FULL_REPLICATIONS,
    SIZE_KNOBS,
    parse_sizes,
    run_semi_synthetic,
)

log = logging.getLogger("surrofuse.bench")


def _forest(args) -> ForestParams:
    trees = args.trees if args.trees is not None else (FAST_TREES if args.fast else 200)
    return ForestParams(num_trees=trees)


def cmd_run(args) -> int:
    grid = preset_grid(args.preset, args.reps, args.seed, _forest(args))
    run_table(grid, args.out, workers=args.workers)
    return 0


def cmd_scenario(args) -> int:
    sc = load_scenario(args.config)
    if args.trees is not None or args.fast:
        sc = replace(sc, forest=replace(sc.forest, num_trees=_forest(args).num_trees))
    run_table([sc], args.out, workers=args.workers)
    return 0


def cmd_semisynthetic(args) -> int:
    schema = read_keyvalue(args.schema)
    data = load_csv(args.data, schema, OBSERVATIONAL)
    reps = args.reps
    if reps is None:
        reps = FULL_REPLICATIONS if args.preset == "star-full" else DEFAULT_REPLICATIONS
    rows = run_semi_synthetic(data, parse_sizes(args.sizes), reps, args.seed,
                              forest=_forest(args), workers=args.workers)
    write_rows(rows, args.out, SIZE_KNOBS, with_means=True)
    print(render_rows(rows, SIZE_KNOBS, with_means=True))
    return 0


def cmd_oracle(args) -> int:
    sc_cfg = load_scenario(args.config).dgp
    value, se = oracle_with_se(sc_cfg, args.n_mc)
    print(f"{value:.6f}")
    log.info("Monte Carlo standard error %.2e over %d draws", se, args.n_mc)
    return 0


def cmd_world(args) -> int:
    sc = load_scenario(args.config)
    cfg = replace(sc.dgp, seed=args.seed)
    exp, obs, _ = draw_samples(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_schema(save_csv(exp, out / "exp.csv"), out / "exp.schema")
    write_schema(save_csv(obs, out / "obs.csv"), out / "obs.schema")
    return 0


def cmd_population(args) -> int:
    cfg = DgpConfig(kappa_tau=args.kappa_tau)
    pop = ground_truth_population(cfg, args.n, args.seed)
    schema = save_csv(pop, args.out)
    write_schema(schema, args.schema_out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--trees", type=int, default=None,
                       help="trees per forest (default 200)")
        p.add_argument("--fast", action="store_true",
                       help=f"use {FAST_TREES} trees per forest")
        p.add_argument("--workers", type=int, default=None,
                       help="replication workers (default: BENCH_WORKERS, 0 = auto)")

    p = sub.add_parser("run", help="run a simulation-table preset")
    p.add_argument("--preset", required=True, choices=["table1", "table2", "table3"])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("scenario", help="run one scenario from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    common(p, seed=False)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("semisynthetic", help="biased-subsampling evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--sizes", default="300:1000,200:1500,500:2000")
    p.add_argument("--preset", choices=["star", "star-full"], default="star")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_semisynthetic)

    p = sub.add_parser("oracle", help="Monte Carlo ATE of a scenario's population")
    p.add_argument("--config", required=True)
    p.add_argument("--n-mc", type=int, default=ORACLE_DRAWS)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("world", help="export one simulated (exp, obs) draw as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_world)

    p = sub.add_parser("population", help="write a simulated ground-truth table")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--kappa-tau", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", required=True)
    p.set_defaults(func=cmd_population)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, PipelineError, SampleError, OSError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
