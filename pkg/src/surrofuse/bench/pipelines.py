"""Named estimator pipelines composed from text.

A pipeline line reads ``name = step + step + ... + terminal``, for example::

    grf_surrogate = grf(exp) + bridge(obs) + estimate_ate

CATE steps: grf(exp), causal_forest(exp|obs), instrumental_forest(exp),
two_sls(exp), kallus(obs, exp), kallus_iv(obs, exp).
Bridge steps: bridge(obs), robinson(obs).
Terminals: estimate_ate (needs one CATE and one bridge step), imputation
(needs one bridge step), aipw(obs|exp[, outcome]), diff_in_means(obs|exp[, outcome]).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

from ..cate import (
    causal_forest_strategy,
    fit_iv_nuisances,
    fit_kallus,
    fit_kallus_iv,
    fit_two_sls,
    instrumental_forest_strategy,
)
from ..data import LabeledSample
from ..estimators import (
    aipw,
    diff_in_means,
    estimate_ate,
    fit_bridge,
    fit_robinson_bridge,
    imputation_baseline,
)
from ..forest import ForestParams


class PipelineError(ValueError):
    pass


CATE_STEPS = {
    "grf": ("exp",),
    "causal_forest": ("exp", "obs"),
    "instrumental_forest": ("exp",),
    "two_sls": ("exp",),
    "kallus": ("obs", "exp"),
    "kallus_iv": ("obs", "exp"),
}
BRIDGE_STEPS = {"bridge": ("obs",), "robinson": ("obs",)}
TERMINALS = ("estimate_ate", "imputation", "aipw", "diff_in_means")
# estimators that assume an unconfounded experimental sample
NEEDS_UNCONFOUNDED_EXP = ("kallus", "imputation")

_STEP = re.compile(r"^([a-z_][a-z0-9_]*)\s*(?:\((.*)\))?$")


@dataclass(frozen=True)
class Step:
    op: str
    args: tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return f"{self.op}({', '.join(self.args)})" if self.args else self.op


@dataclass(frozen=True)
class Pipeline:
    name: str
    cate: Step | None
    bridge: Step | None
    terminal: Step
    text: str = ""

    @property
    def ops(self) -> tuple[str, ...]:
        return tuple(s.op for s in (self.cate, self.bridge, self.terminal) if s is not None)

    def requires_unconfounded_exp(self) -> bool:
        return any(op in NEEDS_UNCONFOUNDED_EXP for op in self.ops)


def parse_step(text: str) -> Step:
    m = _STEP.match(text.strip())
    if not m:
        raise PipelineError(f"cannot parse step {text!r}")
    op, raw = m.group(1), m.group(2)
    args = tuple(a.strip() for a in raw.split(",")) if raw and raw.strip() else ()
    return Step(op, args)


def parse_pipeline(name: str, text: str) -> Pipeline:
    steps = [parse_step(part) for part in text.split("+")]
    cate = bridge = terminal = None
    for pos, step in enumerate(steps):
        if step.op in CATE_STEPS:
            if cate is not None:
                raise PipelineError(f"{name}: more than one CATE step")
            if step.op in ("kallus", "kallus_iv"):
                if step.args != ("obs", "exp"):
                    raise PipelineError(f"{name}: {step.op} takes (obs, exp)")
            elif len(step.args) != 1 or step.args[0] not in CATE_STEPS[step.op]:
                raise PipelineError(f"{name}: {step.op} takes one of {CATE_STEPS[step.op]}")
            cate = step
        elif step.op in BRIDGE_STEPS:
            if bridge is not None:
                raise PipelineError(f"{name}: more than one bridge step")
            if step.args != ("obs",):
                raise PipelineError(f"{name}: {step.op} takes (obs)")
            bridge = step
        elif step.op in TERMINALS:
            if pos != len(steps) - 1:
                raise PipelineError(f"{name}: terminal {step.op} must come last")
            terminal = step
        else:
            raise PipelineError(f"{name}: unknown step {step.op!r}")
    if terminal is None:
        raise PipelineError(f"{name}: pipeline has no terminal step")
    if terminal.op == "estimate_ate" and (cate is None or bridge is None):
        raise PipelineError(f"{name}: estimate_ate needs a CATE step and a bridge step")
    if terminal.op == "imputation" and (bridge is None or cate is not None):
        raise PipelineError(f"{name}: imputation needs exactly a bridge step")
    if terminal.op in ("aipw", "diff_in_means"):
        if cate is not None or bridge is not None:
            raise PipelineError(f"{name}: {terminal.op} takes no other steps")
        if not 1 <= len(terminal.args) <= 2 or terminal.args[0] not in ("obs", "exp"):
            raise PipelineError(f"{name}: {terminal.op}(obs|exp[, outcome])")
        if len(terminal.args) == 2 and terminal.args[1] not in ("primary", "surrogate"):
            raise PipelineError(f"{name}: outcome must be primary or surrogate")
    return Pipeline(name, cate, bridge, terminal, text.strip())


def parse_pipelines(text: str) -> dict[str, Pipeline]:
    out: dict[str, Pipeline] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PipelineError(f"line {line_no}: expected name = composition")
        name, body = (s.strip() for s in line.split("=", 1))
        out[name] = parse_pipeline(name, body)
    return out


def builtin_pipelines() -> dict[str, Pipeline]:
    text = resources.files(__package__).joinpath("pipelines.txt").read_text(encoding="utf-8")
    return parse_pipelines(text)


@dataclass
class FitContext:
    """Everything one replication's pipelines share.

    Fitted steps are cached by step key; each step derives its forest seed
    from its own key, so caching never changes a result.
    """

    exp: LabeledSample
    obs: LabeledSample
    params: ForestParams
    truth: float = float("nan")
    e_exp: object = "forest"
    intercept: bool = True
    exp_confounded: bool = False
    cache: dict = field(default_factory=dict)

    def _cached(self, key, build):
        if key not in self.cache:
            self.cache[key] = build()
        return self.cache[key]

    def sample(self, which: str) -> LabeledSample:
        return self.exp if which == "exp" else self.obs

    def cate(self, step: Step):
        return self._cached(step.key, lambda: self._fit_cate(step))

    def _fit_cate(self, step: Step):
        params = self.params.with_seed(step.key)
        if step.op == "grf":
            op = "instrumental_forest" if self.exp_confounded else "causal_forest"
            return self.cate(Step(op, ("exp",)))
        if step.op == "causal_forest":
            return causal_forest_strategy(self.sample(step.args[0]), params)
        if step.op == "instrumental_forest":
            return instrumental_forest_strategy(self.exp, params)
        if step.op == "two_sls":
            return fit_two_sls(self.exp)
        base = self.cate(Step("causal_forest", ("obs",)))
        if step.op == "kallus":
            return fit_kallus(self.obs, self.exp, base, self.e_exp, params,
                              intercept=self.intercept)
        nuis = self._cached("iv_nuisances", lambda: fit_iv_nuisances(
            self.exp, self.params.with_seed("iv_nuisances")))
        return fit_kallus_iv(self.obs, self.exp, base, nuis, intercept=self.intercept)

    def bridge(self, step: Step):
        params = self.params.with_seed(step.key)
        if step.op == "bridge":
            return self._cached(step.key, lambda: fit_bridge(self.obs, params))
        return self._cached(step.key, lambda: fit_robinson_bridge(self.obs, params))


def run_pipeline(pipe: Pipeline | Callable, ctx: FitContext) -> float:
    if callable(pipe) and not isinstance(pipe, Pipeline):
        return float(pipe(ctx))
    term = pipe.terminal
    if term.op == "estimate_ate":
        tau = ctx.cate(pipe.cate)
        return estimate_ate(ctx.obs, ctx.exp, tau, ctx.bridge(pipe.bridge), pipe.name).value
    if term.op == "imputation":
        return imputation_baseline(ctx.obs, ctx.exp, ctx.bridge(pipe.bridge), ctx.e_exp,
                                   ctx.params.with_seed("imputation")).value
    sample = ctx.sample(term.args[0])
    outcome = term.args[1] if len(term.args) > 1 else "primary"
    if term.op == "aipw":
        return aipw(sample, outcome, ctx.params.with_seed(term.key)).value
    return diff_in_means(sample, outcome).value
