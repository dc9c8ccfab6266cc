"""Randomization tests and the sequential confidence procedure.

The null "the factor group S accounts for nothing" is tested by permuting
the S-columns jointly with one shared permutation per replicate, which
preserves the joint law under the null because the factors are independently
randomized. The p-value (1 + #{permuted >= observed}) / (1 + B) is exact for
any deterministic statistic of the data, so nuisances are refit on every
permuted dataset with the fold plan held fixed.

The sequential procedure runs the test first and only builds a normal-theory
interval on rejection; failing to reject returns {0} or [0, inf) depending
on the configured fallback. No alpha-splitting is applied: the reported sets
cover at level 1 - alpha because the interval is only consulted when the
value is nonzero (where the test rejects with probability tending to one)
and the fallback sets always cover zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset, Discrete, EstimandSpec, interaction, total
from .errors import ConfigError, MissingStdError
from .estimators import EstimateReport, estimate_many
from .nuisance import FoldPlan, LearnerConfig, make_fold_plan
from ._normal import normal_quantile

FALLBACKS = ("point_zero", "half_line")


@dataclass(frozen=True)
class ConfidenceSet:
    kind: str  # "point_zero" | "half_line" | "interval"
    low: float
    high: float

    def covers(self, value: float) -> bool:
        if self.kind == "point_zero":
            return value == 0.0
        if self.kind == "half_line":
            return value >= self.low
        return self.low <= value <= self.high


def point_zero_set() -> ConfidenceSet:
    return ConfidenceSet("point_zero", 0.0, 0.0)


def half_line_set() -> ConfidenceSet:
    return ConfidenceSet("half_line", 0.0, math.inf)


def fallback_set(fallback: str) -> ConfidenceSet:
    if fallback not in FALLBACKS:
        raise ConfigError(f"unknown fallback {fallback!r}")
    return point_zero_set() if fallback == "point_zero" else half_line_set()


def confidence_interval(report: EstimateReport, alpha: float | None = None) -> ConfidenceSet:
    """Normal interval from a one-step report, optionally at another level."""
    if report.std_error is None:
        raise MissingStdError("plug-in reports carry no standard error")
    if alpha is None:
        return ConfidenceSet("interval", report.ci_low, report.ci_high)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    z = normal_quantile(1.0 - alpha / 2.0)
    return ConfidenceSet(
        "interval", report.point - z * report.std_error, report.point + z * report.std_error
    )


@dataclass(frozen=True)
class RandomizationConfig:
    num_permutations: int = 999
    statistic: str = "plugin"  # "plugin" | "if"
    num_folds: int = 2
    fold_seed: int = 0
    seed: int = 0
    learner: LearnerConfig = field(default_factory=LearnerConfig)


@dataclass(frozen=True)
class RandomizationTestResult:
    subset: frozenset[int]
    p_value: float
    observed_stat: float
    permuted_stats: tuple[float, ...]
    num_permutations: int
    statistic: str


def permute_subset(data: Dataset, subset: frozenset[int], rng: np.random.Generator) -> Dataset:
    """Apply one shared row permutation to every factor column in `subset`."""
    perm = rng.permutation(data.n)
    new_factors = list(data.factors)
    new_codes = {}
    for k in sorted(subset):
        new_factors[k] = data.factors[k][perm]
        if isinstance(data.kinds[k], Discrete):
            new_codes[k] = data.codes(k)[perm]
    return data.replace_factors(new_factors, new_codes)


def _check_subset(subset, num_factors: int) -> frozenset[int]:
    out = frozenset(int(k) for k in subset)
    if not out:
        raise ConfigError("test subset must be nonempty")
    if not all(0 <= k < num_factors for k in out):
        raise ConfigError(f"subset {sorted(out)} out of range for {num_factors} factors")
    return out


def _statistic(data: Dataset, spec: EstimandSpec, config: RandomizationConfig, plan: FoldPlan) -> float:
    method = {"plugin": "plugin", "if": "if"}.get(config.statistic)
    if method is None:
        raise ConfigError(f"unknown test statistic {config.statistic!r}")
    result = estimate_many(data, plan, config.learner, [spec], [method])
    report, _ = result[(spec, method)]
    return report.point


def randomization_test(
    data: Dataset, subset, config: RandomizationConfig = RandomizationConfig()
) -> RandomizationTestResult:
    """Exact permutation p-value for "group `subset` accounts for nothing"."""
    if config.num_permutations < 1:
        raise ConfigError("need at least one permutation")
    subset = _check_subset(subset, data.num_factors)
    spec = total(*sorted(subset))
    plan = make_fold_plan(data.n, config.num_folds, config.fold_seed)
    observed = _statistic(data, spec, config, plan)
    rng = np.random.default_rng(config.seed)
    permuted = np.empty(config.num_permutations)
    for b in range(config.num_permutations):
        permuted[b] = _statistic(permute_subset(data, subset, rng), spec, config, plan)
    p = (1.0 + float((permuted >= observed).sum())) / (1.0 + config.num_permutations)
    return RandomizationTestResult(
        subset=subset,
        p_value=p,
        observed_stat=observed,
        permuted_stats=tuple(float(t) for t in permuted),
        num_permutations=config.num_permutations,
        statistic=config.statistic,
    )


@dataclass(frozen=True)
class InferenceResult:
    estimand: str
    alpha: float
    decision: str  # "reject" | "fail_to_reject"
    confidence_set: ConfidenceSet
    p_value: float | None
    observed_stat: float | None
    report: EstimateReport | None
    trace: tuple[str, ...]


def sequential_confidence_set(
    data: Dataset,
    spec: EstimandSpec,
    alpha: float = 0.05,
    rand_config: RandomizationConfig = RandomizationConfig(),
    method: str = "if",
    fallback: str = "point_zero",
) -> InferenceResult:
    """Test-then-estimate for a total: the randomization test runs at alpha
    and the full-alpha interval is built only on rejection."""
    if spec.kind != "total":
        raise ConfigError("the sequential gate applies to totals")
    if fallback not in FALLBACKS:
        raise ConfigError(f"unknown fallback {fallback!r}")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    label = spec.label(data.factor_names)
    test = randomization_test(data, spec.factors, rand_config)
    trace = [
        f"randomization test on {label}: p={test.p_value:.4f} "
        f"(B={test.num_permutations}, statistic={test.statistic})"
    ]
    if test.p_value > alpha:
        trace.append(f"p > {alpha}: fail to reject, return {fallback} set")
        return InferenceResult(
            estimand=label,
            alpha=alpha,
            decision="fail_to_reject",
            confidence_set=fallback_set(fallback),
            p_value=test.p_value,
            observed_stat=test.observed_stat,
            report=None,
            trace=tuple(trace),
        )
    plan = make_fold_plan(data.n, rand_config.num_folds, rand_config.fold_seed)
    report, _ = estimate_many(data, plan, rand_config.learner, [spec], [method], alpha)[
        (spec, method)
    ]
    trace.append(f"p <= {alpha}: reject, one-step {method} interval at full alpha")
    return InferenceResult(
        estimand=label,
        alpha=alpha,
        decision="reject",
        confidence_set=confidence_interval(report),
        p_value=test.p_value,
        observed_stat=test.observed_stat,
        report=report,
        trace=tuple(trace),
    )


@dataclass(frozen=True)
class ScreenRow:
    target: str
    kind: str  # "total" | "interaction"
    decision: str  # "reject" | "fail_to_reject" | "estimated" | "zero_inherited"
    confidence_set: ConfidenceSet
    p_value: float | None
    estimate: float | None
    std_error: float | None


@dataclass(frozen=True)
class ScreenResult:
    alpha: float
    rows: tuple[ScreenRow, ...]
    trace: tuple[str, ...]


def hierarchical_screen(
    data: Dataset,
    alpha: float = 0.05,
    rand_config: RandomizationConfig = RandomizationConfig(),
    method: str = "if",
    fallback: str = "point_zero",
) -> ScreenResult:
    """Screen every factor, then estimate only the surviving pairs.

    Each factor's total goes through the sequential gate. A factor that fails
    the gate has its total and every pairwise interaction containing it set
    to the fallback zero set without further testing; pairs whose two factors
    both reject get a full-alpha interaction interval (no extra gate).
    """
    K = data.num_factors
    names = data.factor_names
    rows: list[ScreenRow] = []
    trace: list[str] = []
    rejected: set[int] = set()
    factor_results: dict[int, InferenceResult] = {}
    for k in range(K):
        res = sequential_confidence_set(
            data, total(k), alpha, rand_config, method, fallback
        )
        factor_results[k] = res
        trace.extend(res.trace)
        if res.decision == "reject":
            rejected.add(k)

    surviving_pairs = [
        (k, j) for k in range(K) for j in range(k + 1, K) if k in rejected and j in rejected
    ]
    pair_reports: dict[tuple[int, int], EstimateReport] = {}
    if surviving_pairs:
        plan = make_fold_plan(data.n, rand_config.num_folds, rand_config.fold_seed)
        specs = [interaction(k, j) for k, j in surviving_pairs]
        results = estimate_many(data, plan, rand_config.learner, specs, [method], alpha)
        for (k, j), spec in zip(surviving_pairs, specs):
            pair_reports[(k, j)] = results[(spec, method)][0]
        trace.append(
            "interaction intervals for surviving pairs: "
            + ", ".join(f"({names[k]},{names[j]})" for k, j in surviving_pairs)
        )

    for k in range(K):
        res = factor_results[k]
        report = res.report
        rows.append(
            ScreenRow(
                target=res.estimand,
                kind="total",
                decision=res.decision,
                confidence_set=res.confidence_set,
                p_value=res.p_value,
                estimate=None if report is None else report.point,
                std_error=None if report is None else report.std_error,
            )
        )
    for k in range(K):
        for j in range(k + 1, K):
            label = interaction(k, j).label(names)
            if (k, j) in pair_reports:
                report = pair_reports[(k, j)]
                rows.append(
                    ScreenRow(
                        target=label,
                        kind="interaction",
                        decision="estimated",
                        confidence_set=confidence_interval(report),
                        p_value=None,
                        estimate=report.point,
                        std_error=report.std_error,
                    )
                )
            else:
                rows.append(
                    ScreenRow(
                        target=label,
                        kind="interaction",
                        decision="zero_inherited",
                        confidence_set=fallback_set(fallback),
                        p_value=None,
                        estimate=None,
                        std_error=None,
                    )
                )
    return ScreenResult(alpha=alpha, rows=tuple(rows), trace=tuple(trace))
