"""Honest subsampled forests for regression, propensity, causal and IV fits."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .. import rng
from . import _kernels as K

PROPENSITY_CLIP = (0.01, 0.99)
N_FOLDS = 5
WEAK_INSTRUMENT_CORR = 0.05


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    """Hyperparameters shared by every forest fit.

    ``split_candidates_per_node=None`` means ``min(ceil(sqrt(p) + 20), p)``
    for the data at hand, i.e. every covariate for small p.
    ``honesty_fraction`` is the share of each tree's subsample used to place
    splits; the remainder fills the leaves.
    """

    num_trees: int = 200
    subsample_fraction: float = 0.5
    min_leaf_size: int = 5
    split_candidates_per_node: int | None = None
    honesty_fraction: float = 0.5
    seed: int = 0
    # smallest share of a node either child may receive
    imbalance_alpha: float = 0.05
    # causal/IV splits: each child needs min_leaf_size units of both arms
    # (otherwise one unit per arm)
    stabilize_splits: bool = True

    def __post_init__(self):
        if self.num_trees < 1:
            raise ForestError("num_trees must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ForestError("subsample_fraction must lie in (0, 1]")
        if self.min_leaf_size < 1:
            raise ForestError("min_leaf_size must be >= 1")
        if self.split_candidates_per_node is not None and self.split_candidates_per_node < 1:
            raise ForestError("split_candidates_per_node must be >= 1")
        if not 0.0 < self.honesty_fraction < 1.0:
            raise ForestError("honesty_fraction must lie in (0, 1)")
        if not 0.0 <= self.imbalance_alpha < 0.5:
            raise ForestError("imbalance_alpha must lie in [0, 0.5)")
        if not 0 <= int(self.seed) < 2**64:
            raise ForestError("seed must be a 64-bit unsigned integer")

    def with_seed(self, *labels) -> "ForestParams":
        """Copy with a seed derived from this one and ``labels``."""
        return replace(self, seed=rng.derive_seed(self.seed, *labels))

    def mtry(self, p: int) -> int:
        if self.split_candidates_per_node is None:
            return min(p, math.ceil(math.sqrt(p) + 20))
        return min(p, self.split_candidates_per_node)


@dataclass(frozen=True, eq=False)
class ForestModel:
    mode: str
    p: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_nodes: np.ndarray
    clip: tuple[float, float] | None = None
    # (num_trees, nodes, 5) honest means of y, w, z, y*z, w*z
    moments: np.ndarray | None = field(default=None, repr=False)
    root_value: float = 0.0
    # (num_trees, n_sub) index sets; first ``n_split`` columns placed splits
    subsample: np.ndarray | None = field(default=None, repr=False)
    n_split: int = 0

    @property
    def num_trees(self) -> int:
        return self.feature.shape[0]

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != self.p:
            raise ForestError(f"expected {self.p} features, got {X.shape[1]}")
        return X

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        if self.mode in ("causal", "instrumental"):
            return self._solve_moments(X)
        out = K.predict_mean(X, self.feature, self.threshold, self.left, self.right,
                             self.value)
        if self.clip is not None:
            out = np.clip(out, *self.clip)
        return out

    def _solve_moments(self, X) -> np.ndarray:
        # local slope sum a (y - ybar)(z - zbar) / sum a (w - wbar)(z - zbar)
        # under the forest weights a
        A = K.predict_moments(X, self.feature, self.threshold, self.left, self.right,
                              self.moments)
        num = A[:, 3] - A[:, 0] * A[:, 2]
        den = A[:, 4] - A[:, 1] * A[:, 2]
        ok = np.abs(den) >= K.DENOM_EPS
        return np.where(ok, num / np.where(ok, den, 1.0), self.root_value)

    def predict_trees(self, X) -> np.ndarray:
        """Per-tree predictions, shape (n, num_trees), unclipped.

        In causal and instrumental modes these are the per-tree leaf ratios;
        the forest prediction pools the moments instead of averaging them.
        """
        return K.predict_each(self._check(X), self.feature, self.threshold,
                              self.left, self.right, self.value)

    def honesty_sets(self, tree: int) -> tuple[np.ndarray, np.ndarray]:
        """(split-placement indices, leaf-estimation indices) for one tree."""
        if self.subsample is None:
            raise ForestError("index sets are only kept when fitted with debug=True")
        row = self.subsample[tree]
        return row[: self.n_split], row[self.n_split:]

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)


_MODES = {"regression": K.REGRESSION, "propensity": K.REGRESSION,
          "causal": K.CAUSAL, "instrumental": K.INSTRUMENTAL}


def _grow(mode, X, y, w, z, arm, params: ForestParams, root_value: float,
          workers: int | None = None, debug: bool = False,
          clip=None) -> ForestModel:
    X = np.ascontiguousarray(X, dtype=float)
    n, p = X.shape
    n_sub = max(2, min(n, int(round(params.subsample_fraction * n))))
    n_split = int(round(params.honesty_fraction * n_sub))
    n_split = min(max(n_split, 1), n_sub - 1)
    max_nodes = 2 * (n_split // params.min_leaf_size) + 3
    seeds = np.array([rng.derive_seed(params.seed, "tree", t)
                      for t in range(params.num_trees)], dtype=np.uint64)
    args = (X, np.ascontiguousarray(y, dtype=float), np.ascontiguousarray(w, dtype=float),
            np.ascontiguousarray(z, dtype=float), np.ascontiguousarray(arm, dtype=float),
            _MODES[mode])
    min_arm = params.min_leaf_size if params.stabilize_splits else 1
    rest = (n_sub, n_split, params.min_leaf_size, min_arm, float(params.imbalance_alpha),
            params.mtry(p), max_nodes,
            float(root_value))

    workers = 1 if workers is None else max(1, workers)
    if workers == 1 or params.num_trees < 2 * workers:
        parts = [K.grow_trees(*args, seeds, *rest)]
    else:
        chunks = np.array_split(seeds, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: K.grow_trees(*args, s, *rest), chunks))
    feat, thr, left, right, val, mom, n_nodes, sub = (
        np.concatenate([part[k] for part in parts]) for k in range(8))
    used = int(n_nodes.max())
    trim = (slice(None), slice(0, used))
    return ForestModel(
        mode=mode, p=p,
        feature=np.ascontiguousarray(feat[trim]),
        threshold=np.ascontiguousarray(thr[trim]),
        left=np.ascontiguousarray(left[trim]),
        right=np.ascontiguousarray(right[trim]),
        value=np.ascontiguousarray(val[trim]),
        n_nodes=n_nodes, clip=clip,
        moments=np.ascontiguousarray(mom[:, :used]) if mode in ("causal", "instrumental")
        else None,
        root_value=float(root_value),
        subsample=sub if debug else None, n_split=n_split,
    )


def _as_xy(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ForestError(f"X has {X.shape[0]} rows but target has {y.shape[0]}")
    if X.shape[1] < 1:
        raise ForestError("X must have at least one column")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ForestError("non-finite values in forest input")
    return X, y


def fit_regression(X, y, params: ForestParams = ForestParams(), *,
                   workers: int | None = None, debug: bool = False) -> ForestModel:
    X, y = _as_xy(X, y)
    if X.shape[0] < 2 * params.min_leaf_size:
        raise ForestError(
            f"too few rows: {X.shape[0]} < 2 * min_leaf_size ({2 * params.min_leaf_size})")
    return _grow("regression", X, y, y, y, y, params, float(np.mean(y)),
                 workers=workers, debug=debug)


def _check_binary(v, name):
    if not np.all((v == 0) | (v == 1)):
        raise ForestError(f"{name} must be binary")


def fit_propensity(X, w, params: ForestParams = ForestParams(), *,
                   workers: int | None = None, debug: bool = False) -> ForestModel:
    X, w = _as_xy(X, w)
    _check_binary(w, "treatment")
    if w.min() == w.max():
        raise ForestError("degenerate treatment: only one class present")
    model = fit_regression(X, w, params, workers=workers, debug=debug)
    return replace(model, mode="propensity", clip=PROPENSITY_CLIP)


def kfold_assignment(n: int, seed: int, k: int = N_FOLDS) -> np.ndarray:
    """Balanced random fold labels in ``range(k)``."""
    perm = rng.generator(seed, "folds").permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return folds


@dataclass(frozen=True, eq=False)
class CrossFitted:
    """K regression forests, each trained with one fold held out.

    ``oof`` holds out-of-fold predictions at the training rows; ``predict``
    at new points averages the fold models.
    """

    models: tuple[ForestModel, ...]
    oof: np.ndarray
    clip: tuple[float, float] | None = None

    def predict(self, X) -> np.ndarray:
        out = np.mean([m.predict(X) for m in self.models], axis=0)
        if self.clip is not None:
            out = np.clip(out, *self.clip)
        return out

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)


def cross_fit(X, y, params: ForestParams, *, clip=None, k: int = N_FOLDS,
              workers: int | None = None) -> CrossFitted:
    X, y = _as_xy(X, y)
    n = X.shape[0]
    k = min(k, n)
    folds = kfold_assignment(n, params.seed, k)
    oof = np.empty(n)
    models = []
    for f in range(k):
        train = folds != f
        model = fit_regression(X[train], y[train], params.with_seed("fold", f),
                               workers=workers)
        oof[~train] = model.predict(X[~train])
        models.append(model)
    if clip is not None:
        oof = np.clip(oof, *clip)
    return CrossFitted(tuple(models), oof, clip)


@dataclass(frozen=True, eq=False)
class ForestCate:
    """Fitted CATE forest together with the centering nuisances it used."""

    model: ForestModel
    y_hat: np.ndarray
    w_hat: np.ndarray
    z_hat: np.ndarray | None = None

    def predict(self, X) -> np.ndarray:
        return self.model.predict(X)

    def __call__(self, X) -> np.ndarray:
        return self.model.predict(X)


def _both_arms(v, name):
    _check_binary(v, name)
    if v.min() == v.max():
        raise ForestError(f"degenerate {name}: both values 0 and 1 must be present")


def fit_causal(X, w, y, params: ForestParams = ForestParams(), *,
               workers: int | None = None, debug: bool = False) -> ForestCate:
    """Causal forest on residualised outcome and treatment.

    Each tree's leaves hold sum(y~ w~) / sum(w~^2) over their honest units,
    where the tilde quantities are residuals from 5-fold cross-fitted
    regression forests. The forest prediction solves the same slope on the
    leaf moments averaged over trees.
    """
    X, y = _as_xy(X, y)
    w = np.asarray(w, dtype=float).ravel()
    _both_arms(w, "treatment")
    y_hat = cross_fit(X, y, params.with_seed("center_y"), workers=workers).oof
    w_hat = cross_fit(X, w, params.with_seed("center_w"), workers=workers).oof
    ry, rw = y - y_hat, w - w_hat
    den = float(rw @ rw)
    root = float(ry @ rw) / den if den >= K.DENOM_EPS else 0.0
    model = _grow("causal", X, ry, rw, rw, w, params.with_seed("causal"), root,
                  workers=workers, debug=debug)
    return ForestCate(model, y_hat, w_hat)


def fit_instrumental(X, w, z, y, params: ForestParams = ForestParams(), *,
                     workers: int | None = None, debug: bool = False) -> ForestCate:
    """Instrumental forest: tree leaves hold the local Wald ratio
    sum(y~ z~) / sum(w~ z~); the forest pools leaf moments before dividing."""
    X, y = _as_xy(X, y)
    w = np.asarray(w, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    _both_arms(w, "treatment")
    _both_arms(z, "instrument")
    if abs(np.corrcoef(z, w)[0, 1]) < WEAK_INSTRUMENT_CORR:
        raise ForestError("weak instrument: |corr(z, w)| below "
                          f"{WEAK_INSTRUMENT_CORR}")
    y_hat = cross_fit(X, y, params.with_seed("center_y"), workers=workers).oof
    w_hat = cross_fit(X, w, params.with_seed("center_w"), workers=workers).oof
    z_hat = cross_fit(X, z, params.with_seed("center_z"), workers=workers).oof
    ry, rw, rz = y - y_hat, w - w_hat, z - z_hat
    den = float(rw @ rz)
    root = float(ry @ rz) / den if abs(den) >= K.DENOM_EPS else 0.0
    model = _grow("instrumental", X, ry, rw, rz, z, params.with_seed("instrumental"),
                  root, workers=workers, debug=debug)
    return ForestCate(model, y_hat, w_hat, z_hat)
