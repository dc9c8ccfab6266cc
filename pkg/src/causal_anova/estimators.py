"""Plug-in and one-step estimators for signed block combinations.

Every estimand expands into sum(sign_t * block(S_t)) with block(S) =
numerator(S) / Var(Y), numerator(S) = E[(E[Y | W without S])^2]. The two
per-observation correction scores for a single block ratio are:

  phi_if:  treats the joint law of W as unknown. Centered numerator score
           2*Y*m_S - m_S^2 - numerator, variance score (Y - E[Y])^2 - Var(Y),
           combined by the delta rule below.

  phi_eif: exploits that the factors are independently randomized. Centered
           numerator score
           2*(Y - mu)*m_S
             + 2 * sum_{k in S}  { E[mu * m_S | W_k]  - its tower mean }
             +     sum_{k not in S} { E[m_S^2 | W_k] - its tower mean },
           variance score
           (Y - E[Y])^2 - Var(Y|W) - (mu - E[Y])^2
             + sum_k { E[(Y - E[Y])^2 | W_k] - its tower mean }.

           Each conditional term is centered by its own tower mean under the
           fitted product law. With exact integration the tower means sum to
           the familiar constants (2|S| + K - |S|) * numerator and K * Var(Y);
           on Monte Carlo paths the per-term form stays exactly mean-zero
           where the shared constants would inject cloud-mismatch error.

The delta rule for a ratio combination with centered scores:

  phi = sum_t sign_t * phi_num_t / Var(Y)
        - (sum_t sign_t * numerator_t) * phi_var / Var(Y)^2

Cross-fitting follows the usual recipe: per held-out fold, evaluate the
plug-in at the training-fold fit plus the fold-mean correction; the overall
point is the size-weighted fold mean and the standard error comes from the
per-observation values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._normal import normal_quantile
from .core import Dataset, EstimandSpec, SignedBlockCombination, expand_estimand
from .errors import ConfigError
from .nuisance import (
    FoldPlan,
    LearnerConfig,
    MuExclSquared,
    MuTimesMuExcl,
    NuisanceFit,
    YSquaredCentered,
    conditional_moment_centered,
    fit_nuisances,
)

METHODS = ("plugin", "if", "eif")


@dataclass(frozen=True)
class PerObservationRecord:
    index: int
    fold: int
    value: float
    plugin_part: float
    correction_part: float


@dataclass(frozen=True)
class EstimateReport:
    estimand: str
    method: str
    point: float
    point_clipped: float
    std_error: float | None
    ci_low: float | None
    ci_high: float | None
    alpha: float
    n: int
    num_folds: int
    seeds: Mapping[str, int]
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "method": self.method,
            "point": self.point,
            "point_clipped": self.point_clipped,
            "std_error": self.std_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "alpha": self.alpha,
            "n": self.n,
            "num_folds": self.num_folds,
            "seeds": dict(self.seeds),
            "diagnostics": dict(self.diagnostics),
        }


# ---------------------------------------------------------------------------
# Scores


def _numerator_score(fit: NuisanceFit, excluded: frozenset[int], y: np.ndarray, X: np.ndarray, method: str) -> np.ndarray:
    engine = fit.engine()
    K = fit.num_factors
    m_vals = engine.reduced_mu(excluded).evaluate(X)
    numerator = engine.block_numerator(excluded)
    if method == "if":
        return 2.0 * y * m_vals - m_vals**2 - numerator
    mu_vals = fit.mu(X)
    out = 2.0 * (y - mu_vals) * m_vals
    for k in range(K):
        if k in excluded:
            out += 2.0 * conditional_moment_centered(
                fit, MuTimesMuExcl(excluded), k, X[:, k]
            )
        else:
            out += conditional_moment_centered(
                fit, MuExclSquared(excluded), k, X[:, k]
            )
    return out


def _variance_score(fit: NuisanceFit, y: np.ndarray, X: np.ndarray, method: str) -> np.ndarray:
    engine = fit.engine()
    mean_y = engine.mean_y()
    var_y = engine.var_y()
    centered_sq = (y - mean_y) ** 2
    if method == "if":
        return centered_sq - var_y
    mu_vals = fit.mu(X)
    nu_vals = fit.nu(X)
    cond_var = np.maximum(nu_vals - mu_vals**2, 0.0)
    out = centered_sq - cond_var - (mu_vals - mean_y) ** 2
    for k in range(fit.num_factors):
        out += conditional_moment_centered(fit, YSquaredCentered(), k, X[:, k])
    return out


def delta_method_combine(
    signs: Sequence[int],
    numerators: Sequence[float],
    numerator_scores: Sequence[np.ndarray],
    var_y: float,
    var_score: np.ndarray | float,
) -> tuple[float, np.ndarray]:
    """Combine signed block numerators and their centered scores into the
    ratio estimate and its per-observation score."""
    if len(signs) != len(numerators) or len(signs) != len(numerator_scores):
        raise ConfigError("signs, numerators and scores must align")
    point_num = float(np.dot(signs, numerators))
    combined = np.zeros_like(np.asarray(numerator_scores[0], dtype=np.float64))
    for s, score in zip(signs, numerator_scores):
        combined = combined + s * np.asarray(score, dtype=np.float64)
    combined = combined / var_y - point_num * np.asarray(var_score, dtype=np.float64) / var_y**2
    return point_num / var_y, combined


def phi_if(y, w, fit: NuisanceFit, block) -> np.ndarray | float:
    """Per-observation correction score of one block ratio, joint law unknown."""
    return _phi_single(y, w, fit, block, "if")


def phi_eif(y, w, fit: NuisanceFit, block) -> np.ndarray | float:
    """Per-observation correction score of one block ratio under independent
    randomization (the efficient one)."""
    return _phi_single(y, w, fit, block, "eif")


def _phi_single(y, w, fit: NuisanceFit, block, method: str):
    excluded = frozenset(block.excluded if hasattr(block, "excluded") else block)
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.float64))
    X = np.atleast_2d(np.asarray(w, dtype=np.float64))
    engine = fit.engine()
    num_score = _numerator_score(fit, excluded, y_arr, X, method)
    var_score = _variance_score(fit, y_arr, X, method)
    _, combined = delta_method_combine(
        [1], [engine.block_numerator(excluded)], [num_score], engine.var_y(), var_score
    )
    return float(combined[0]) if np.ndim(y) == 0 else combined


# ---------------------------------------------------------------------------
# Estimators


def plugin_estimate(plan: FoldPlan, fits: Sequence[NuisanceFit], combination: SignedBlockCombination) -> float:
    """Size-weighted fold average of the plug-in ratio combination."""
    total_n = plan.n
    value = 0.0
    for fold, fit in enumerate(fits):
        engine = fit.engine()
        var_y = engine.var_y()
        fold_value = sum(
            s * engine.block_numerator(b.excluded) for s, b in combination.terms
        ) / var_y
        value += fold_value * plan.fold_indices(fold).shape[0] / total_n
    return value


def _resolve_fits(
    data: Dataset, plan: FoldPlan, learner: LearnerConfig, fits: Sequence[NuisanceFit] | None
) -> list[NuisanceFit]:
    if fits is None:
        return [fit_nuisances(data, plan, fold, learner) for fold in range(plan.num_folds)]
    if len(fits) != plan.num_folds:
        raise ConfigError("need one fit per fold")
    return [fit.for_fold(fold) for fold, fit in enumerate(fits)]


def estimate_many(
    data: Dataset,
    plan: FoldPlan,
    learner: LearnerConfig,
    specs: Sequence[EstimandSpec],
    methods: Sequence[str],
    alpha: float = 0.05,
    fits: Sequence[NuisanceFit] | None = None,
) -> dict[tuple[EstimandSpec, str], tuple[EstimateReport, list[PerObservationRecord]]]:
    """Estimate several estimands with several methods over shared fold fits.

    Block numerators, reduced surfaces and per-block scores are computed once
    per fold and reused across estimands, so a batch costs what its largest
    estimand costs. Results are identical to separate one_step_estimate calls
    because every random draw is keyed by (fold, factor subset) only.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}")
    if plan.n != data.n:
        raise ConfigError("fold plan and dataset disagree on n")
    fits = _resolve_fits(data, plan, learner, fits)
    combos = {spec: expand_estimand(spec, data.num_factors) for spec in specs}

    X_all = data.matrix()
    y_all = data.outcome
    z = normal_quantile(1.0 - alpha / 2.0)

    values: dict[tuple[EstimandSpec, str], np.ndarray] = {
        (spec, m): np.empty(data.n) for spec in specs for m in methods
    }
    plugin_parts: dict[tuple[EstimandSpec, str], np.ndarray] = {
        key: np.empty(data.n) for key in values
    }

    for fold, fit in enumerate(fits):
        idx = plan.fold_indices(fold)
        X = X_all[idx]
        y = y_all[idx]
        engine = fit.engine()
        var_y = engine.var_y()

        num_scores: dict[tuple[frozenset, str], np.ndarray] = {}
        var_scores: dict[str, np.ndarray] = {}

        def numerator_score(excluded: frozenset, method: str) -> np.ndarray:
            key = (excluded, method)
            if key not in num_scores:
                num_scores[key] = _numerator_score(fit, excluded, y, X, method)
            return num_scores[key]

        def variance_score(method: str) -> np.ndarray:
            if method not in var_scores:
                var_scores[method] = _variance_score(fit, y, X, method)
            return var_scores[method]

        for spec in specs:
            combo = combos[spec]
            signs = [s for s, _ in combo.terms]
            numerators = [engine.block_numerator(b.excluded) for _, b in combo.terms]
            fold_plugin = float(np.dot(signs, numerators)) / var_y
            for method in methods:
                if method == "plugin":
                    values[(spec, method)][idx] = fold_plugin
                    plugin_parts[(spec, method)][idx] = fold_plugin
                    continue
                scores = [numerator_score(b.excluded, method) for _, b in combo.terms]
                _, combined = delta_method_combine(
                    signs, numerators, scores, var_y, variance_score(method)
                )
                values[(spec, method)][idx] = fold_plugin + combined
                plugin_parts[(spec, method)][idx] = fold_plugin

    diagnostics_base: dict = {}
    empty_cells = sum(f.diagnostics.get("empty_cells", 0) for f in fits)
    if any("empty_cells" in f.diagnostics for f in fits):
        diagnostics_base["empty_cells"] = empty_cells
    mc_subsets = sorted(
        {tuple(sub) for f in fits for sub in f.diagnostics.get("mc_subsets", [])}
    )
    if mc_subsets:
        diagnostics_base["mc_subsets"] = [list(sub) for sub in mc_subsets]
    diagnostics_base["learner"] = fits[0].learner

    out = {}
    seeds = {"fold_seed": plan.seed, "mc_seed": learner.mc_seed}
    for spec in specs:
        for method in methods:
            vals = values[(spec, method)]
            point = float(vals.mean())
            if method == "plugin":
                report = EstimateReport(
                    estimand=spec.label(data.factor_names),
                    method=method,
                    point=point,
                    point_clipped=max(point, 0.0),
                    std_error=None,
                    ci_low=None,
                    ci_high=None,
                    alpha=alpha,
                    n=data.n,
                    num_folds=plan.num_folds,
                    seeds=seeds,
                    diagnostics=dict(diagnostics_base),
                )
                out[(spec, method)] = (report, [])
                continue
            sd = float(np.sqrt(np.mean((vals - point) ** 2)))
            se = sd / np.sqrt(data.n)
            report = EstimateReport(
                estimand=spec.label(data.factor_names),
                method=method,
                point=point,
                point_clipped=max(point, 0.0),
                std_error=se,
                ci_low=point - z * se,
                ci_high=point + z * se,
                alpha=alpha,
                n=data.n,
                num_folds=plan.num_folds,
                seeds=seeds,
                diagnostics=dict(diagnostics_base),
            )
            records = [
                PerObservationRecord(
                    index=i,
                    fold=int(plan.assignment[i]),
                    value=float(vals[i]),
                    plugin_part=float(plugin_parts[(spec, method)][i]),
                    correction_part=float(vals[i] - plugin_parts[(spec, method)][i]),
                )
                for i in range(data.n)
            ]
            out[(spec, method)] = (report, records)
    return out


def one_step_estimate(
    data: Dataset,
    plan: FoldPlan,
    learner: LearnerConfig,
    spec: EstimandSpec,
    method: str = "if",
    alpha: float = 0.05,
    fits: Sequence[NuisanceFit] | None = None,
) -> tuple[EstimateReport, list[PerObservationRecord]]:
    """Cross-fitted estimate of one estimand; see estimate_many for batching."""
    result = estimate_many(data, plan, learner, [spec], [method], alpha, fits)
    return result[(spec, method)]
