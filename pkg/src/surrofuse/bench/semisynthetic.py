"""Biased-subsampling evaluation on a user-supplied ground-truth table.

The table is treated as the population. Each replication draws an
experimental sample uniformly from location A and an observational sample
made of four equal cells, where treated units are kept only if their
surrogate sits at or below the treated median of their location. That
selection confounds the observational sample on purpose.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .. import rng
from ..data import EXPERIMENTAL, OBSERVATIONAL, LabeledSample, SampleError, validate
from ..estimators import diff_in_means
from ..forest import ForestParams
from .harness import MseRow, _map, aggregate, bench_workers
from .pipelines import FitContext, builtin_pipelines, run_pipeline

DEFAULT_SIZES = ((300, 1000), (200, 1500), (500, 2000))
DEFAULT_ESTIMATORS = ("grf_surrogate", "imputation", "aipw")
DEFAULT_REPLICATIONS = 100
FULL_REPLICATIONS = 500
SIZE_KNOBS = ("n_exp", "n_obs")


def _draw(gen, pool: np.ndarray, k: int, label: str) -> np.ndarray:
    if pool.size < k:
        raise SampleError(f"insufficient stratum size for {label}: need {k}, have {pool.size}")
    return np.sort(gen.choice(pool, size=k, replace=False))


def biased_subsample(ground_truth: LabeledSample, n_exp: int, n_obs: int, seed: int,
                     return_index: bool = False):
    """Draw (exp, obs) from the population table.

    Location A is ``location == 1``. With ``return_index`` the row indices
    of both samples are returned as well, obs indices in cell order
    (A controls, A treated, B controls, B treated).
    """
    gt = validate(ground_truth)
    if gt.location is None or gt.primary is None:
        raise SampleError("ground truth needs a location tag and a primary outcome")
    if n_obs % 4:
        raise SampleError("n_obs must be divisible by 4")
    quota = n_obs // 4
    gen = rng.generator(seed, "biased_subsample")
    loc_a = gt.location == 1
    treated = gt.treatment == 1
    ys = gt.surrogate

    exp_idx = _draw(gen, np.flatnonzero(loc_a), n_exp, "location A (experimental)")
    taken = np.zeros(gt.n, dtype=bool)
    taken[exp_idx] = True

    cells = []
    for name, in_loc in (("A", loc_a), ("B", ~loc_a)):
        controls = np.flatnonzero(in_loc & ~treated & ~taken)
        cells.append(_draw(gen, controls, quota, f"location {name} controls"))
        stratum_treated = in_loc & treated
        if not stratum_treated.any():
            raise SampleError(f"insufficient stratum size for location {name} treated: none")
        median = np.median(ys[stratum_treated])
        low = np.flatnonzero(stratum_treated & (ys <= median) & ~taken)
        cells.append(_draw(gen, low, quota, f"location {name} treated below median"))
    obs_idx = np.concatenate(cells)

    exp = gt.subset(exp_idx, EXPERIMENTAL, drop_primary=True, drop_instrument=True,
                    drop_location=True)
    obs = gt.subset(obs_idx, OBSERVATIONAL, drop_instrument=True, drop_location=True)
    if return_index:
        return exp, obs, exp_idx, obs_idx
    return exp, obs


def _semi_replication(gt, n_exp, n_obs, seed, r, truth, pipes, forest, e_exp, intercept):
    exp, obs = biased_subsample(gt, n_exp, n_obs,
                                rng.derive_seed(seed, "semi", n_exp, n_obs, r))
    ctx = FitContext(exp, obs, forest.with_seed(seed, "semi_fit", n_exp, n_obs, r),
                     truth=truth, e_exp=e_exp, intercept=intercept, exp_confounded=False)
    out = {}
    for name, pipe in pipes.items():
        try:
            out[name] = float(run_pipeline(pipe, ctx))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            out[name] = f"{type(exc).__name__}: {exc}"
    return out


def run_semi_synthetic(ground_truth: LabeledSample,
                       sizes: Sequence[tuple[int, int]] = DEFAULT_SIZES,
                       replications: int = DEFAULT_REPLICATIONS, seed: int = 0,
                       estimators: Sequence[str] = DEFAULT_ESTIMATORS,
                       forest: ForestParams = ForestParams(), e_exp="forest",
                       intercept: bool = True, pipelines: Mapping[str, object] | None = None,
                       workers: int | None = None) -> list[MseRow]:
    """One row per size pair; truth is the full table's difference in means."""
    known = builtin_pipelines()
    known.update(pipelines or {})
    missing = [e for e in estimators if e not in known]
    if missing:
        raise SampleError(f"unknown estimators: {missing}")
    pipes = {e: known[e] for e in estimators}
    truth = diff_in_means(ground_truth, "primary").value
    workers = bench_workers() if workers is None else max(1, workers)
    rows = []
    for n_exp, n_obs in sizes:
        jobs = [(ground_truth, n_exp, n_obs, seed, r, truth, pipes, forest, e_exp, intercept)
                for r in range(replications)]
        per_rep = _map(_semi_replication, jobs, workers)
        rows.append(aggregate({"n_exp": n_exp, "n_obs": n_obs}, truth, tuple(estimators),
                              per_rep))
    return rows


def parse_sizes(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            a, b = part.split(":")
            out.append((int(a), int(b)))
        except ValueError:
            raise SampleError(f"bad size pair {part!r}; expected n_exp:n_obs") from None
    if not out:
        raise SampleError("no size pairs given")
    return out
