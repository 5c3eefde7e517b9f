"""Replicated scenario runs, MSE rows and the simulation-table presets."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .. import rng
from ..data import read_keyvalue
from ..dgp import ORACLE_DRAWS, DgpConfig, draw_samples, oracle_tau_p
from ..forest import ForestParams
from .pipelines import FitContext, Pipeline, builtin_pipelines, parse_pipeline, run_pipeline


class ScenarioError(ValueError):
    pass


def bench_workers() -> int:
    raw = os.environ.get("BENCH_WORKERS", "1").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        raise ScenarioError(f"BENCH_WORKERS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ScenarioError("BENCH_WORKERS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass(frozen=True)
class ScenarioConfig:
    dgp: DgpConfig
    estimators: tuple[str, ...]
    replications: int = 200
    base_seed: int = 0
    forest: ForestParams = ForestParams()
    e_exp: object = "forest"
    intercept: bool = True
    oracle_draws: int = ORACLE_DRAWS
    # extra or overriding pipelines: Pipeline objects or callables ctx -> float
    pipelines: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.estimators:
            raise ScenarioError("estimator list must not be empty")
        if len(set(self.estimators)) != len(self.estimators):
            raise ScenarioError("duplicate estimator names")
        if self.replications < 1:
            raise ScenarioError("replications must be >= 1")
        resolved = self.resolve()
        if self.dgp.omega != 0:
            bad = [name for name, pipe in resolved.items()
                   if isinstance(pipe, Pipeline) and pipe.requires_unconfounded_exp()]
            if bad:
                raise ScenarioError(
                    f"estimators {bad} assume an unconfounded experimental sample "
                    "and are invalid when omega != 0")

    def resolve(self) -> dict[str, object]:
        known = builtin_pipelines()
        known.update(self.pipelines)
        missing = [name for name in self.estimators if name not in known]
        if missing:
            raise ScenarioError(f"unknown estimators: {missing}")
        return {name: known[name] for name in self.estimators}


@dataclass
class MseRow:
    knobs: dict
    mc_estimate: float
    mse: dict[str, float]
    mean: dict[str, float]
    winner: str
    exclusions: dict[str, int]
    attempts: int
    estimates: dict[str, list] = field(default_factory=dict, repr=False)
    errors: dict[str, list] = field(default_factory=dict, repr=False)


def pick_winner(mse: Mapping[str, float]) -> str:
    finite = [(v, k) for k, v in mse.items() if math.isfinite(v)]
    return min(finite)[1] if finite else ""


def aggregate(knobs: dict, truth: float, names: Sequence[str],
              per_rep: Sequence[Mapping[str, object]]) -> MseRow:
    """Fold per-replication results (floats or error strings) in index order."""
    estimates = {name: [] for name in names}
    errors = {name: [] for name in names}
    for rec in per_rep:
        for name in names:
            v = rec[name]
            if isinstance(v, float) and math.isfinite(v):
                estimates[name].append(v)
            else:
                estimates[name].append(None)
                errors[name].append(str(v))
    mse, mean, excl = {}, {}, {}
    for name in names:
        ok = np.array([v for v in estimates[name] if v is not None], dtype=float)
        excl[name] = len(estimates[name]) - ok.size
        mse[name] = float(np.mean((ok - truth) ** 2)) if ok.size else float("nan")
        mean[name] = float(np.mean(ok)) if ok.size else float("nan")
    return MseRow(knobs, truth, mse, mean, pick_winner(mse), excl, len(per_rep),
                  estimates, errors)


def _knobs(dgp: DgpConfig) -> dict:
    return {"omega": dgp.omega, "kappa_tau": dgp.kappa_tau, "additive": dgp.additive,
            "nuisance": dgp.nuisance, "support": dgp.support}


def run_replication(sc: ScenarioConfig, r: int, truth: float) -> dict[str, object]:
    """One world draw and every estimator on it; errors are returned as text."""
    world_cfg = replace(sc.dgp, seed=rng.derive_seed(sc.base_seed, "rep", r))
    exp, obs, _ = draw_samples(world_cfg)
    ctx = FitContext(exp, obs, sc.forest.with_seed(sc.base_seed, "fit", r), truth=truth,
                     e_exp=sc.e_exp, intercept=sc.intercept,
                     exp_confounded=sc.dgp.omega != 0)
    out: dict[str, object] = {}
    for name, pipe in sc.resolve().items():
        try:
            out[name] = float(run_pipeline(pipe, ctx))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            out[name] = f"{type(exc).__name__}: {exc}"
    return out


def _map(fn: Callable, items: Iterable, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def run_scenario(sc: ScenarioConfig, workers: int | None = None,
                 replications: Sequence[int] | None = None) -> MseRow:
    """MSE of each estimator against the Monte Carlo truth.

    ``replications`` selects replication indices (default ``range(R)``).
    Results are gathered in index order whatever the worker count.
    """
    truth = oracle_tau_p(sc.dgp, sc.oracle_draws)
    idx = range(sc.replications) if replications is None else list(replications)
    workers = bench_workers() if workers is None else max(1, workers)
    per_rep = _map(run_replication, [(sc, r, truth) for r in idx], workers)
    return aggregate(_knobs(sc.dgp), truth, sc.estimators, per_rep)


KNOB_COLUMNS = ("omega", "kappa_tau", "additive", "nuisance", "support")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _estimator_names(rows: Sequence[MseRow]) -> list[str]:
    names: list[str] = []
    for row in rows:
        for name in row.mse:
            if name not in names:
                names.append(name)
    return names


def table_records(rows: Sequence[MseRow], knob_columns=KNOB_COLUMNS,
                  with_means: bool = False) -> tuple[list[str], list[list[str]]]:
    names = _estimator_names(rows)
    header = [*knob_columns, "mc_estimate", *(f"mse_{n}" for n in names)]
    if with_means:
        header += [f"mean_{n}" for n in names]
    header += ["winner", "exclusions"]
    body = []
    for row in rows:
        rec = [_fmt(row.knobs.get(k, "")) for k in knob_columns]
        rec.append(_fmt(float(row.mc_estimate)))
        rec += [_fmt(row.mse.get(n, float("nan"))) for n in names]
        if with_means:
            rec += [_fmt(row.mean.get(n, float("nan"))) for n in names]
        rec.append(row.winner)
        rec.append(";".join(f"{n}={c}" for n, c in row.exclusions.items()))
        body.append(rec)
    return header, body


def write_rows(rows: Sequence[MseRow], out_path, knob_columns=KNOB_COLUMNS,
               with_means: bool = False) -> None:
    header, body = table_records(rows, knob_columns, with_means)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(body)


def render_rows(rows: Sequence[MseRow], knob_columns=KNOB_COLUMNS,
                with_means: bool = False) -> str:
    """Aligned plain-text table, numbers at 4 significant digits."""
    header, body = table_records(rows, knob_columns, with_means)
    shown = []
    for rec in body:
        cells = []
        for cell in rec:
            try:
                cells.append(f"{float(cell):.4g}" if cell and "=" not in cell else cell)
            except ValueError:
                cells.append(cell)
        shown.append(cells)
    widths = [max(len(h), *(len(r[k]) for r in shown)) if shown else len(h)
              for k, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in shown]
    return "\n".join(lines)


def run_table(grid: Sequence[ScenarioConfig], out_path, workers: int | None = None,
              echo: Callable[[str], None] | None = print) -> list[MseRow]:
    rows = []
    for sc in grid:
        rows.append(run_scenario(sc, workers))
        write_rows(rows, out_path)
    write_rows(rows, out_path)
    if echo is not None:
        echo(render_rows(rows))
    return rows


# knob tuples: (omega, kappa_tau, additive, nuisance, support)
_TABLE1 = [(0, 2, True, True, "identical"), (0, 2, True, False, "identical"),
           (0, 4, False, True, "identical"), (0, 4, False, False, "identical"),
           (0, 2, True, True, "shifted"), (0, 2, True, False, "shifted"),
           (0, 4, False, True, "shifted"), (0, 4, False, False, "shifted")]
_TABLE2 = [(1, 2, True, True, "identical"), (1, 2, True, False, "identical"),
           (1, 4, False, True, "identical"), (1, 4, False, False, "identical"),
           (1, 2, True, True, "shifted"), (1, 2, True, False, "shifted"),
           (1, 2, False, True, "shifted"), (1, 2, False, False, "shifted"),
           (1, 4, False, True, "shifted"), (1, 4, False, False, "shifted"),
           (1, 4, True, False, "shifted"), (1, 4, True, True, "shifted")]
_TABLE3 = [(0, 2, True, True, "contained"), (0, 2, True, False, "contained"),
           (0, 4, False, True, "contained"), (0, 4, False, False, "contained"),
           (1, 2, True, True, "contained"), (1, 2, True, False, "contained"),
           (1, 2, False, True, "contained"), (1, 2, False, False, "contained"),
           (1, 4, False, True, "contained"), (1, 4, False, False, "contained"),
           (1, 4, True, False, "contained"), (1, 4, True, True, "contained")]
PRESETS = {"table1": _TABLE1, "table2": _TABLE2, "table3": _TABLE3}
FAST_TREES = 50


def default_estimators(omega: float) -> tuple[str, ...]:
    if omega == 0:
        return ("grf_surrogate", "imputation", "kallus_surrogate")
    return ("grf_surrogate", "kallus_iv_surrogate")


def scenario_for(knobs, replications=200, seed=0, forest=ForestParams(),
                 estimators=None, **kwargs) -> ScenarioConfig:
    omega, kappa, additive, nuisance, support = knobs
    dgp = DgpConfig(omega=float(omega), kappa_tau=kappa, additive=additive,
                    nuisance=nuisance, support=support)
    if estimators is None:
        estimators = default_estimators(omega)
        if omega == 0 and support == "contained":
            estimators = ("grf_surrogate", "kallus_surrogate")
    return ScenarioConfig(dgp, tuple(estimators), replications, seed, forest, **kwargs)


def preset_grid(name: str, replications: int = 200, seed: int = 0,
                forest: ForestParams = ForestParams()) -> list[ScenarioConfig]:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return [scenario_for(k, replications, seed, forest) for k in PRESETS[name]]


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ScenarioError(f"{key}: expected a boolean, got {text!r}")


_DGP_KEYS = {"omega": float, "kappa_tau": int, "additive": _bool, "nuisance": _bool,
             "support": str, "p": int, "n_exp": int, "n_obs": int}
_FOREST_KEYS = {"num_trees": ("num_trees", int), "min_leaf_size": ("min_leaf_size", int),
                "subsample_fraction": ("subsample_fraction", float),
                "honesty_fraction": ("honesty_fraction", float),
                "split_candidates": ("split_candidates_per_node", int)}
_OTHER_KEYS = ("replications", "seed", "estimators", "e_exp", "intercept", "oracle_draws")


def parse_e_exp(text: str):
    if text.strip() == "forest":
        return "forest"
    try:
        value = float(text)
    except ValueError:
        raise ScenarioError(f"e_exp must be 'forest' or a number, got {text!r}") from None
    if not 0.0 < value < 1.0:
        raise ScenarioError("e_exp must lie strictly inside (0, 1)")
    return value


def scenario_from_mapping(kv: Mapping[str, str]) -> ScenarioConfig:
    """Build a scenario from flat ``key = value`` settings; unknown keys raise."""
    dgp, forest, pipelines = {}, {}, {}
    for key, value in kv.items():
        if key in _DGP_KEYS:
            conv = _DGP_KEYS[key]
            dgp[key] = conv(value, key) if conv is _bool else conv(value)
        elif key in _FOREST_KEYS:
            attr, conv = _FOREST_KEYS[key]
            forest[attr] = conv(value)
        elif key.startswith("pipeline."):
            name = key[len("pipeline."):]
            pipelines[name] = parse_pipeline(name, value)
        elif key not in _OTHER_KEYS:
            raise ScenarioError(f"unknown config key {key!r}")
    try:
        dgp_cfg = DgpConfig(**dgp)
        forest_params = ForestParams(**forest)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None
    if "estimators" in kv:
        estimators = tuple(s.strip() for s in kv["estimators"].split(",") if s.strip())
    else:
        estimators = default_estimators(dgp_cfg.omega)
    return ScenarioConfig(
        dgp=dgp_cfg,
        estimators=estimators,
        replications=int(kv.get("replications", 200)),
        base_seed=int(kv.get("seed", 0)),
        forest=forest_params,
        e_exp=parse_e_exp(kv.get("e_exp", "forest")),
        intercept=_bool(kv.get("intercept", "yes"), "intercept"),
        oracle_draws=int(kv.get("oracle_draws", ORACLE_DRAWS)),
        pipelines=pipelines,
    )


def load_scenario(path) -> ScenarioConfig:
    return scenario_from_mapping(read_keyvalue(path))
