"""Synthetic data generators, exact oracles, and repeated-trial studies.

A DGP here is a polynomial in independently drawn factors plus centered
Gaussian noise: Y = f(W) + E. For such processes every estimand value is a
ratio of polynomial moments, so the oracle can be computed exactly from
per-factor power moments (uniform and normal factors are supported). A
Monte Carlo oracle with an explicit error bound is kept as an independent
cross-check; it estimates E[(E[f | W without S])^2] without knowing the
conditional mean, via E[f(W) * f(W with the S-coordinates redrawn)].

`generate` also hands back the true nuisance fit (exact mu, nu = mu^2 +
noise variance, exact marginals with quadrature atoms), which plugs into the
estimators wherever a learned fit would go.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .core import Continuous, Dataset, EstimandSpec, expand_estimand
from .errors import ConfigError, UnsupportedForm
from .estimators import estimate_many
from .nuisance import (
    QUAD_NODES,
    FactorBasis,
    LearnerConfig,
    NormalMarginal,
    NuisanceFit,
    PolynomialSurface,
    UniformMarginal,
    make_fold_plan,
)

Terms = tuple[tuple[float, tuple[int, ...]], ...]


@dataclass(frozen=True)
class UniformFactor:
    low: float = -1.0
    high: float = 1.0


@dataclass(frozen=True)
class NormalFactor:
    mean: float = 0.0
    sd: float = 1.0


FactorDist = UniformFactor | NormalFactor


@dataclass(frozen=True)
class DgpSpec:
    """Polynomial outcome over independent factors with Gaussian noise."""

    name: str
    factors: tuple[FactorDist, ...]
    terms: Terms
    noise_sd: float
    sigma: float | None = None  # free coefficient label where one exists

    @property
    def num_factors(self) -> int:
        return len(self.factors)

    def factor_names(self) -> tuple[str, ...]:
        return tuple(f"W{k + 1}" for k in range(self.num_factors))


def cubic_interaction_dgp(sigma: float = 1.0, noise_sd: float = math.sqrt(0.5)) -> DgpSpec:
    """Three uniform(-1, 1) factors, cubic main effects, two interactions:
    Y = W1^3 + W2^3 + W3^3 + W1*W2^2 + sigma*W1^2*W3 + E."""
    terms: Terms = (
        (1.0, (3, 0, 0)),
        (1.0, (0, 3, 0)),
        (1.0, (0, 0, 3)),
        (1.0, (1, 2, 0)),
        (float(sigma), (2, 0, 1)),
    )
    return DgpSpec(
        "cubic_interaction",
        (UniformFactor(), UniformFactor(), UniformFactor()),
        terms,
        float(noise_sd),
        sigma=float(sigma),
    )


def additive_gaussian_dgp() -> DgpSpec:
    """Y = W1 + W2 + E with standard normal factors and noise: every pairwise
    interaction is exactly zero while both totals equal 1/3."""
    return DgpSpec(
        "additive_gaussian",
        (NormalFactor(), NormalFactor()),
        ((1.0, (1, 0)), (1.0, (0, 1))),
        1.0,
    )


def custom_polynomial_dgp(
    factors: Sequence[FactorDist],
    terms: Mapping[tuple[int, ...], float] | Terms,
    noise_sd: float | None = None,
    name: str = "custom",
    noise_variance: float | None = None,
) -> DgpSpec:
    if (noise_sd is None) == (noise_variance is None):
        raise ConfigError("give exactly one of noise_sd and noise_variance")
    if noise_sd is None:
        if noise_variance < 0:
            raise ConfigError("noise_variance must be nonnegative")
        noise_sd = math.sqrt(noise_variance)
    if isinstance(terms, Mapping):
        terms_tuple: Terms = tuple(sorted((float(c), tuple(e)) for e, c in terms.items()))
    else:
        terms_tuple = tuple((float(c), tuple(e)) for c, e in terms)
    K = len(factors)
    for _, expo in terms_tuple:
        if len(expo) != K or any(a < 0 for a in expo):
            raise ConfigError(f"bad exponent tuple {expo!r} for {K} factors")
    return DgpSpec(name, tuple(factors), terms_tuple, float(noise_sd))


# ---------------------------------------------------------------------------
# Polynomial moment arithmetic


def factor_moment(dist: FactorDist, power: int) -> float:
    if power == 0:
        return 1.0
    if isinstance(dist, UniformFactor):
        a, b = dist.low, dist.high
        return (b ** (power + 1) - a ** (power + 1)) / ((power + 1) * (b - a))
    if isinstance(dist, NormalFactor):
        m_prev, m_cur = 1.0, dist.mean
        for p in range(2, power + 1):
            m_prev, m_cur = m_cur, dist.mean * m_cur + (p - 1) * dist.sd**2 * m_prev
        return m_cur
    raise UnsupportedForm(f"no moment formula for {dist!r}")


def _poly_expect(terms: Terms, factors: Sequence[FactorDist]) -> float:
    total = 0.0
    for coef, expo in terms:
        value = coef
        for k, a in enumerate(expo):
            if a:
                value *= factor_moment(factors[k], a)
        total += value
    return total


def _poly_mul(t1: Terms, t2: Terms) -> Terms:
    acc: dict[tuple[int, ...], float] = {}
    for c1, e1 in t1:
        for c2, e2 in t2:
            expo = tuple(a + b for a, b in zip(e1, e2))
            acc[expo] = acc.get(expo, 0.0) + c1 * c2
    return tuple((c, e) for e, c in sorted(acc.items()))


def _poly_integrate_out(terms: Terms, subset: frozenset[int], factors: Sequence[FactorDist]) -> Terms:
    acc: dict[tuple[int, ...], float] = {}
    for coef, expo in terms:
        value = coef
        new_expo = list(expo)
        for k in subset:
            if expo[k]:
                value *= factor_moment(factors[k], expo[k])
            new_expo[k] = 0
        key = tuple(new_expo)
        acc[key] = acc.get(key, 0.0) + value
    return tuple((c, e) for e, c in sorted(acc.items()))


def _poly_eval(terms: Terms, X: np.ndarray) -> np.ndarray:
    out = np.zeros(X.shape[0])
    for coef, expo in terms:
        value = np.full(X.shape[0], coef)
        for k, a in enumerate(expo):
            if a:
                value = value * X[:, k] ** a
        out += value
    return out


# ---------------------------------------------------------------------------
# Generation and true nuisances


def true_nuisance_fit(dgp: DgpSpec, n_train: int = 0) -> NuisanceFit:
    """Exact mu, nu and marginals packaged the way a learned fit would be."""
    K = dgp.num_factors
    nu_terms = _poly_mul(dgp.terms, dgp.terms)
    nu_terms = tuple(
        [(dgp.noise_sd**2, tuple([0] * K))] + [(c, e) for c, e in nu_terms]
    )
    max_deg = max((max(e) for _, e in nu_terms), default=0)
    nodes = max(QUAD_NODES, max_deg)
    marginals = []
    for dist in dgp.factors:
        if isinstance(dist, UniformFactor):
            marginals.append(UniformMarginal(dist.low, dist.high, nodes))
        elif isinstance(dist, NormalFactor):
            marginals.append(NormalMarginal(dist.mean, dist.sd, nodes))
        else:
            raise UnsupportedForm(f"no exact marginal for {dist!r}")
    bases = tuple(FactorBasis(FactorBasis.MONOMIAL) for _ in range(K))

    def surface(terms: Terms) -> PolynomialSurface:
        coefs = np.array([c for c, _ in terms])
        expos = np.array([e for _, e in terms], dtype=np.int64).reshape(len(terms), K)
        return PolynomialSurface(bases, expos, coefs)

    return NuisanceFit(
        fold=0,
        mu_surface=surface(dgp.terms),
        nu_surface=surface(nu_terms),
        marginals=tuple(marginals),
        learner="true",
        config=LearnerConfig(),
        n_train=n_train,
        diagnostics={},
    )


def generate(dgp: DgpSpec, n: int, seed: int) -> tuple[Dataset, NuisanceFit]:
    """Draw a dataset and return it with the matching true nuisance fit."""
    if n < 2:
        raise ConfigError("need at least two observations")
    rng = np.random.default_rng(seed)
    cols = []
    for dist in dgp.factors:
        if isinstance(dist, UniformFactor):
            cols.append(rng.uniform(dist.low, dist.high, size=n))
        elif isinstance(dist, NormalFactor):
            cols.append(rng.normal(dist.mean, dist.sd, size=n))
        else:
            raise UnsupportedForm(f"cannot sample {dist!r}")
    X = np.column_stack(cols)
    y = _poly_eval(dgp.terms, X) + rng.normal(0.0, dgp.noise_sd, size=n)
    data = Dataset(
        outcome=y,
        factor_names=dgp.factor_names(),
        factors=tuple(cols),
        kinds=tuple(Continuous() for _ in range(dgp.num_factors)),
    )
    return data, true_nuisance_fit(dgp, n_train=n)


# ---------------------------------------------------------------------------
# Oracles


@dataclass(frozen=True)
class OracleValue:
    estimand: str
    value: float
    method: str
    error_bound: float


def oracle_value(
    dgp: DgpSpec,
    spec: EstimandSpec,
    method: str = "symbolic",
    mc_draws: int = 10_000_000,
    seed: int = 0,
) -> OracleValue:
    """True estimand value, exact (symbolic moments) or Monte Carlo with a
    3-standard-error bound."""
    if dgp.terms is None:
        raise UnsupportedForm("oracle needs a polynomial outcome")
    combo = expand_estimand(spec, dgp.num_factors)
    label = spec.label(dgp.factor_names())
    if method == "symbolic":
        mean_f = _poly_expect(dgp.terms, dgp.factors)
        mean_f2 = _poly_expect(_poly_mul(dgp.terms, dgp.terms), dgp.factors)
        var_y = mean_f2 - mean_f**2 + dgp.noise_sd**2
        numerator = 0.0
        for s, b in combo.terms:
            reduced = _poly_integrate_out(dgp.terms, b.excluded, dgp.factors)
            numerator += s * _poly_expect(_poly_mul(reduced, reduced), dgp.factors)
        return OracleValue(label, numerator / var_y, "symbolic", 0.0)
    if method != "mc":
        raise ConfigError(f"unknown oracle method {method!r}")

    rng = np.random.default_rng(seed)
    K = dgp.num_factors
    blocks = [b.excluded for _, b in combo.terms]
    sums = {i: 0.0 for i in range(len(blocks))}
    sums2 = {i: 0.0 for i in range(len(blocks))}
    acc = {"h": 0.0, "h2": 0.0, "g": 0.0, "g2": 0.0, "gh": 0.0}
    done = 0
    chunk = 1_000_000
    while done < mc_draws:
        m = min(chunk, mc_draws - done)
        X = np.empty((m, K))
        for k, dist in enumerate(dgp.factors):
            if isinstance(dist, UniformFactor):
                X[:, k] = rng.uniform(dist.low, dist.high, size=m)
            else:
                X[:, k] = rng.normal(dist.mean, dist.sd, size=m)
        fX = _poly_eval(dgp.terms, X)
        acc["h"] += fX.sum()
        acc["h2"] += (fX**2).sum()
        acc["g"] += (fX**2).sum()
        acc["g2"] += (fX**4).sum()
        acc["gh"] += (fX**3).sum()
        for i, excluded in enumerate(blocks):
            if not excluded:
                prod = fX * fX
            else:
                X2 = X.copy()
                for k in sorted(excluded):
                    dist = dgp.factors[k]
                    if isinstance(dist, UniformFactor):
                        X2[:, k] = rng.uniform(dist.low, dist.high, size=m)
                    else:
                        X2[:, k] = rng.normal(dist.mean, dist.sd, size=m)
                prod = fX * _poly_eval(dgp.terms, X2)
            sums[i] += prod.sum()
            sums2[i] += (prod**2).sum()
        done += m

    M = float(mc_draws)
    mean_h = acc["h"] / M
    var_h = acc["h2"] / M - mean_h**2
    mean_g = acc["g"] / M
    var_g = acc["g2"] / M - mean_g**2
    cov_gh = acc["gh"] / M - mean_g * mean_h
    var_y = mean_g - mean_h**2 + dgp.noise_sd**2
    # Delta-method spread of the variance plug-in mean(f^2) - mean(f)^2.
    se_var = math.sqrt(max(var_g + 4 * mean_h**2 * var_h - 4 * mean_h * cov_gh, 0.0) / M)

    numerator = 0.0
    num_se = 0.0
    for i, (s, _) in enumerate(combo.terms):
        theta = sums[i] / M
        se = math.sqrt(max(sums2[i] / M - theta**2, 0.0) / M)
        numerator += s * theta
        num_se += abs(s) * se
    value = numerator / var_y
    bound = 3.0 * (num_se / var_y + abs(numerator) * se_var / var_y**2)
    return OracleValue(label, value, "mc", bound)


# ---------------------------------------------------------------------------
# Study engine


@dataclass(frozen=True)
class StudyCell:
    dgp: DgpSpec
    n: int
    trials: int
    methods: tuple[str, ...] = ("if", "eif")
    estimands: tuple[EstimandSpec, ...] = ()
    alpha: float = 0.05
    num_folds: int = 2
    learner: LearnerConfig | None = None  # None means injected true nuisances


@dataclass(frozen=True)
class StudyRow:
    dgp: str
    sigma: float | None
    n: int
    method: str
    estimand: str
    trials: int
    bias: float
    sd_sqrt_n: float
    coverage: float | None
    mean_ci_width: float | None
    seconds: float


@dataclass
class StudyResult:
    rows: list[StudyRow]
    trials: dict

    def to_csv_lines(self, timing: bool = False) -> list[str]:
        # estimand labels carry commas ("interaction:W1,W2"), so rows go
        # through a real CSV writer for quoting
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            "dgp,sigma,n,method,estimand,trials,bias,sd_sqrt_n,coverage,mean_ci_width,seconds".split(",")
        )
        for r in self.rows:
            writer.writerow(
                [
                    r.dgp,
                    "" if r.sigma is None else repr(r.sigma),
                    str(r.n),
                    r.method,
                    r.estimand,
                    str(r.trials),
                    repr(r.bias),
                    repr(r.sd_sqrt_n),
                    "" if r.coverage is None else repr(r.coverage),
                    "" if r.mean_ci_width is None else repr(r.mean_ci_width),
                    repr(round(r.seconds, 3)) if timing else "",
                ]
            )
        return buf.getvalue().splitlines()


def _study_trial(cell: StudyCell, master_seed: int, cell_index: int, trial: int) -> dict:
    seeds = np.random.SeedSequence(master_seed, spawn_key=(cell_index, trial)).generate_state(3)
    data, truth = generate(cell.dgp, cell.n, int(seeds[0]))
    plan = make_fold_plan(cell.n, cell.num_folds, int(seeds[1]))
    if cell.learner is None:
        learner = LearnerConfig(mc_seed=int(seeds[2]))
        fits = [truth for _ in range(cell.num_folds)]
    else:
        learner = replace(cell.learner, mc_seed=int(seeds[2]))
        fits = None
    t0 = time.perf_counter()
    results = estimate_many(
        data, plan, learner, list(cell.estimands), list(cell.methods), cell.alpha, fits
    )
    elapsed = time.perf_counter() - t0
    out = {"elapsed": elapsed, "cells": {}}
    for (spec, method), (report, _) in results.items():
        out["cells"][(spec.label(data.factor_names), method)] = (
            report.point,
            report.ci_low,
            report.ci_high,
        )
    return out


def run_study(
    cells: Sequence[StudyCell],
    master_seed: int = 0,
    workers: int = 1,
    keep_trials: bool = False,
) -> StudyResult:
    """Repeated-trial bias / spread / coverage study against exact oracles.

    Per-trial seeds derive from (master_seed, cell index, trial index), so
    results do not depend on `workers`. Row `seconds` is the wall time of the
    cell's estimation calls amortized over its (method, estimand) rows.
    """
    rows: list[StudyRow] = []
    trials_store: dict = {}
    for ci, cell in enumerate(cells):
        if not cell.estimands:
            raise ConfigError("study cell needs at least one estimand")
        names = cell.dgp.factor_names()
        oracles = {
            spec.label(names): oracle_value(cell.dgp, spec).value for spec in cell.estimands
        }
        if workers > 1:
            from joblib import Parallel, delayed

            outs = Parallel(n_jobs=workers)(
                delayed(_study_trial)(cell, master_seed, ci, t) for t in range(cell.trials)
            )
        else:
            outs = [_study_trial(cell, master_seed, ci, t) for t in range(cell.trials)]

        elapsed = sum(o["elapsed"] for o in outs)
        n_rows = len(cell.methods) * len(cell.estimands)
        for spec in cell.estimands:
            label = spec.label(names)
            truth = oracles[label]
            for method in cell.methods:
                points = np.array([o["cells"][(label, method)][0] for o in outs])
                if method == "plugin":
                    coverage = None
                    width = None
                else:
                    lows = np.array([o["cells"][(label, method)][1] for o in outs])
                    highs = np.array([o["cells"][(label, method)][2] for o in outs])
                    covered = (lows <= truth) & (truth <= highs)
                    coverage = float(covered.mean())
                    width = float((highs - lows).mean())
                rows.append(
                    StudyRow(
                        dgp=cell.dgp.name,
                        sigma=cell.dgp.sigma,
                        n=cell.n,
                        method=method,
                        estimand=label,
                        trials=cell.trials,
                        bias=float(points.mean() - truth),
                        sd_sqrt_n=float(points.std(ddof=1) * math.sqrt(cell.n)),
                        coverage=coverage,
                        mean_ci_width=width,
                        seconds=elapsed / n_rows,
                    )
                )
                if keep_trials:
                    entry = {"points": points, "truth": truth}
                    if method != "plugin":
                        entry["ci_low"] = lows
                        entry["ci_high"] = highs
                        entry["covered"] = covered
                    trials_store[(ci, method, label)] = entry
    return StudyResult(rows, trials_store)


def coverage_grid_cells(
    sigma: float = 1.0,
    n_grid: Sequence[int] = (250, 500, 1000, 2000),
    trials: int = 500,
    methods: tuple[str, ...] = ("if", "eif"),
    alpha: float = 0.05,
) -> list[StudyCell]:
    """True-nuisance coverage study over a sample-size grid: both one-step
    methods on the single-factor total, the pair total, and the pair
    interaction of the cubic example process."""
    from .core import interaction, total

    dgp = cubic_interaction_dgp(sigma=sigma)
    estimands = (total(2), total(0, 2), interaction(0, 2))
    return [
        StudyCell(dgp=dgp, n=n, trials=trials, methods=methods, estimands=estimands, alpha=alpha)
        for n in n_grid
    ]
