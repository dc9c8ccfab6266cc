"""Nuisance estimation and product-measure integration.

Everything the estimators need from a training fold lives behind a
NuisanceFit: a conditional mean surface mu(w) = E[Y | W = w], a conditional
second moment surface nu(w) = E[Y^2 | W = w], and one marginal estimate per
factor. Because the factors are independently randomized, every population
quantity downstream is an integral of these surfaces against a *product* of
the per-factor marginals.

Both learners produce surfaces that are linear in a tensor-product basis
(cell indicators, or per-factor polynomials/level indicators), so partial
integration over a factor subset yields another surface of the same class.
That closure is what keeps nested integrals flat: the conditional mean with
a subset excluded is itself a surface, and second-stage integrals of its
square never re-integrate anything.

Integral policy: every marginal estimate is a finite atom set (Discrete
levels, quadrature atoms of an injected known marginal, or the raw training
column of a continuous factor), and under a product measure every integral
of a basis-linear surface factorizes into per-factor moments of those atoms.
Polynomial-family integrals are therefore always computed exactly. Cell
tables integrate by exact tensor enumeration while the product of level
counts stays at or under ENUM_CAP, and above that fall back to Monte Carlo
with `mc_draws` joint draws, seeded per (fold, factor subset) so that every
estimand built in the same run sees identical draws for identical subsets.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

# Node computation is pure in the node count; cache it, callers only do
# arithmetic on copies.
_leggauss = functools.lru_cache(maxsize=None)(np.polynomial.legendre.leggauss)
_hermgauss = functools.lru_cache(maxsize=None)(np.polynomial.hermite.hermgauss)

from .core import Continuous, Dataset, Discrete
from .errors import (
    ConfigError,
    DegenerateVariance,
    SingularDesign,
    TooFewObservations,
)

ENUM_CAP = 10_000
VAR_FLOOR = 1e-12
QUAD_NODES = 8

# ---------------------------------------------------------------------------
# Fold plans


@dataclass(frozen=True)
class FoldPlan:
    num_folds: int
    seed: int
    assignment: np.ndarray

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignment == fold)[0]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignment != fold)[0]


def make_fold_plan(n: int, num_folds: int, seed: int) -> FoldPlan:
    """Deterministic balanced fold assignment (sizes differ by at most one)."""
    if num_folds < 2:
        raise ConfigError("cross-fitting needs at least 2 folds")
    if n < 2 * num_folds:
        raise TooFewObservations(f"n={n} cannot fill {num_folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % num_folds
    return FoldPlan(num_folds, seed, assignment)


# ---------------------------------------------------------------------------
# Marginal estimates


@dataclass(frozen=True)
class DiscreteMarginal:
    """Empirical frequencies over the declared levels (zeros are kept)."""

    levels: tuple
    probs: np.ndarray

    enumerable = True

    def table(self) -> dict:
        return {lvl: float(p) for lvl, p in zip(self.levels, self.probs)}

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        return np.arange(len(self.levels), dtype=np.float64), np.asarray(self.probs)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = np.asarray(self.probs, dtype=np.float64)
        p = p / p.sum()
        return rng.choice(len(self.levels), size=size, p=p).astype(np.float64)


@dataclass(frozen=True)
class EmpiricalMarginal:
    """Training-fold values of a continuous factor. The fitted law is the
    uniform distribution on the observed column, so its atoms are the column
    itself and integrals against it are plain column means."""

    values: np.ndarray

    enumerable = True

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.values.shape[0]
        return self.values, np.full(n, 1.0 / n)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.integers(0, self.values.shape[0], size=size)
        return self.values[idx]


@dataclass(frozen=True)
class UniformMarginal:
    """Known uniform marginal; atoms are Gauss-Legendre nodes, which make
    polynomial integrands of per-factor degree <= 2*nodes-1 integrate exactly."""

    low: float
    high: float
    nodes: int = QUAD_NODES

    enumerable = True

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = _leggauss(self.nodes)
        mid = 0.5 * (self.low + self.high)
        half = 0.5 * (self.high - self.low)
        return mid + half * x, w / 2.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=size)


@dataclass(frozen=True)
class NormalMarginal:
    """Known normal marginal; atoms are Gauss-Hermite nodes (same exactness)."""

    mean: float
    sd: float
    nodes: int = QUAD_NODES

    enumerable = True

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = _hermgauss(self.nodes)
        return self.mean + self.sd * np.sqrt(2.0) * x, w / np.sqrt(np.pi)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(self.mean, self.sd, size=size)


MarginalEstimate = DiscreteMarginal | EmpiricalMarginal | UniformMarginal | NormalMarginal


# ---------------------------------------------------------------------------
# Regression surfaces


class CellTableSurface:
    """Exact cell-mean table over all-Discrete factors.

    The table always keeps one axis per factor; integrated-out axes collapse
    to size one, so products of differently reduced surfaces broadcast.
    """

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)

    @property
    def num_factors(self) -> int:
        return self.table.ndim

    def active_dims(self) -> frozenset[int]:
        return frozenset(k for k in range(self.table.ndim) if self.table.shape[k] > 1)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        idx = tuple(
            np.rint(X[:, k]).astype(np.int64) if self.table.shape[k] > 1 else np.zeros(X.shape[0], dtype=np.int64)
            for k in range(self.table.ndim)
        )
        return self.table[idx]

    def reduce_exact(self, subset: frozenset[int], weights: Sequence[np.ndarray]) -> "CellTableSurface":
        out = self.table
        for k in sorted(subset):
            if out.shape[k] == 1:
                continue
            w = weights[k].reshape([-1 if ax == k else 1 for ax in range(out.ndim)])
            out = (out * w).sum(axis=k, keepdims=True)
        return CellTableSurface(out)

    def reduce_cloud(self, subset: frozenset[int], cloud: np.ndarray, order: Sequence[int]) -> "CellTableSurface":
        # Joint empirical measure of the cloud, contracted against the table.
        dims = [k for k in order if self.table.shape[k] > 1]
        if not dims:
            return CellTableSurface(self.table.copy())
        hist = np.zeros([self.table.shape[k] for k in dims])
        cols = tuple(np.rint(cloud[:, order.index(k)]).astype(np.int64) for k in dims)
        np.add.at(hist, cols, 1.0 / cloud.shape[0])
        shape = [self.table.shape[k] if k in dims else 1 for k in range(self.table.ndim)]
        out = (self.table * hist.reshape(shape)).sum(axis=tuple(dims), keepdims=True)
        # Dims of size one inside `subset` integrate to themselves.
        return CellTableSurface(out)


class FactorBasis:
    """Per-factor scalar basis: monomials w^a or level indicators."""

    MONOMIAL = "monomial"
    INDICATOR = "indicator"

    def __init__(self, kind: str, size: int | None = None):
        self.kind = kind
        self.size = size  # number of levels for indicator bases

    def evaluate(self, x: np.ndarray, index: int) -> np.ndarray:
        if index == 0:
            return np.ones_like(x)
        if self.kind == self.MONOMIAL:
            return x**index
        return (np.rint(x).astype(np.int64) == index).astype(np.float64)

    def table(self, x: np.ndarray, max_index: int) -> np.ndarray:
        """(len(x), max_index + 1) matrix of basis values, built incrementally."""
        tab = np.empty((x.shape[0], max_index + 1))
        tab[:, 0] = 1.0
        if self.kind == self.MONOMIAL:
            for a in range(1, max_index + 1):
                tab[:, a] = tab[:, a - 1] * x
        else:
            codes = np.rint(x).astype(np.int64)
            for a in range(1, max_index + 1):
                tab[:, a] = codes == a
        return tab


class PolynomialSurface:
    """Linear combination of tensor products of per-factor basis functions."""

    def __init__(self, bases: Sequence[FactorBasis], terms: np.ndarray, coefs: np.ndarray):
        self.bases = tuple(bases)
        self.terms = np.asarray(terms, dtype=np.int64)
        self.coefs = np.asarray(coefs, dtype=np.float64)

    @property
    def num_factors(self) -> int:
        return len(self.bases)

    def active_dims(self) -> frozenset[int]:
        return frozenset(int(k) for k in range(self.num_factors) if np.any(self.terms[:, k] > 0))

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n, p = X.shape[0], self.terms.shape[0]
        out = np.empty(n)
        # Chunk so the n x p working array stays small.
        step = max(1, 4_000_000 // max(p, 1))
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            vals = np.ones((hi - lo, p))
            for k in range(self.num_factors):
                idxs = self.terms[:, k]
                amax = int(idxs.max(initial=0))
                if amax == 0:
                    continue
                tab = self.bases[k].table(X[lo:hi, k], amax)
                vals *= tab[:, idxs]
            out[lo:hi] = vals @ self.coefs
        return out

    def with_term_multipliers(self, subset: frozenset[int], multipliers: np.ndarray) -> "PolynomialSurface":
        terms = self.terms.copy()
        for k in subset:
            terms[:, k] = 0
        return PolynomialSurface(self.bases, terms, self.coefs * multipliers)


Surface = CellTableSurface | PolynomialSurface


# ---------------------------------------------------------------------------
# Nuisance fits


@dataclass(frozen=True)
class LearnerConfig:
    learner: str = "auto"  # "auto" | "cellmean" | "polyls"
    degree: int = 3
    interaction_order: int = 2
    ridge: float = 1e-8
    mc_draws: int = 2000
    mc_seed: int = 0

    def resolve(self, kinds) -> str:
        if self.learner == "auto":
            return "cellmean" if all(isinstance(k, Discrete) for k in kinds) else "polyls"
        if self.learner not in ("cellmean", "polyls"):
            raise ConfigError(f"unknown learner {self.learner!r}")
        return self.learner


@dataclass(frozen=True)
class NuisanceFit:
    """Fitted mu/nu surfaces plus per-factor marginals for one training fold."""

    fold: int
    mu_surface: Surface
    nu_surface: Surface
    marginals: tuple[MarginalEstimate, ...]
    learner: str
    config: LearnerConfig
    n_train: int
    diagnostics: dict = field(default_factory=dict)
    _engine_cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_factors(self) -> int:
        return len(self.marginals)

    def mu(self, X: np.ndarray) -> np.ndarray:
        """Conditional mean of Y at encoded factor rows (Discrete -> level code)."""
        return self.mu_surface.evaluate(X)

    def nu(self, X: np.ndarray) -> np.ndarray:
        """Conditional mean of Y^2 at encoded factor rows."""
        return self.nu_surface.evaluate(X)

    def engine(self) -> "MomentEngine":
        if "engine" not in self._engine_cache:
            self._engine_cache["engine"] = MomentEngine(self)
        return self._engine_cache["engine"]

    def for_fold(self, fold: int) -> "NuisanceFit":
        """Same surfaces re-keyed to another fold (used by injected truths)."""
        if fold == self.fold:
            return self
        return replace(self, fold=fold, _engine_cache={})


def _cell_tables(data: Dataset, rows: np.ndarray):
    dims = tuple(len(kind.levels) for kind in data.kinds)
    flat = np.ravel_multi_index(
        tuple(data.codes(k)[rows] for k in range(data.num_factors)), dims
    )
    y = data.outcome[rows]
    size = int(np.prod(dims))
    counts = np.bincount(flat, minlength=size).astype(np.float64)
    sums = np.bincount(flat, weights=y, minlength=size)
    sums2 = np.bincount(flat, weights=y * y, minlength=size)
    empty = counts == 0
    safe = np.where(empty, 1.0, counts)
    mu = np.where(empty, y.mean(), sums / safe)
    nu = np.where(empty, np.mean(y * y), sums2 / safe)
    return mu.reshape(dims), nu.reshape(dims), int(empty.sum())


def _polyls_terms(kinds, degree: int, order: int) -> np.ndarray:
    K = len(kinds)
    per_factor = [
        (len(kind.levels) - 1) if isinstance(kind, Discrete) else degree for kind in kinds
    ]
    rows = [tuple([0] * K)]
    max_order = min(order, K)
    for r in range(1, max_order + 1):
        for active in itertools.combinations(range(K), r):
            if any(per_factor[k] == 0 for k in active):
                continue
            ranges = [range(1, per_factor[k] + 1) for k in active]
            for combo in itertools.product(*ranges):
                row = [0] * K
                for k, a in zip(active, combo):
                    row[k] = a
                rows.append(tuple(row))
    return np.asarray(rows, dtype=np.int64)


def _polyls_bases(kinds) -> tuple[FactorBasis, ...]:
    return tuple(
        FactorBasis(FactorBasis.INDICATOR, len(kind.levels))
        if isinstance(kind, Discrete)
        else FactorBasis(FactorBasis.MONOMIAL)
        for kind in kinds
    )


def _square_surface_terms(
    bases: Sequence[FactorBasis], terms: np.ndarray, coefs: np.ndarray
) -> tuple[list[tuple[int, ...]], list[float]]:
    """Exponent rows and coefficients of the squared surface. Monomial
    exponents add; indicator products keep matching levels and drop
    cross-level pairs (their product is identically zero)."""
    K = terms.shape[1]
    rows: list[tuple[int, ...]] = []
    cs: list[float] = []
    p = terms.shape[0]
    for i in range(p):
        for j in range(p):
            row = []
            dead = False
            for k in range(K):
                a, b = int(terms[i, k]), int(terms[j, k])
                if bases[k].kind == FactorBasis.MONOMIAL:
                    row.append(a + b)
                elif a == 0 or b == 0 or a == b:
                    row.append(max(a, b))
                else:
                    dead = True
                    break
            if not dead:
                rows.append(tuple(row))
                cs.append(float(coefs[i] * coefs[j]))
    return rows, cs


def _merge_terms(rows: Sequence[tuple[int, ...]], coefs: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    acc: dict[tuple[int, ...], float] = {}
    for row, c in zip(rows, coefs):
        acc[row] = acc.get(row, 0.0) + c
    ordered = sorted(acc)
    terms = np.asarray(ordered, dtype=np.int64)
    return terms, np.array([acc[r] for r in ordered])


def _design_matrix(surface_terms: np.ndarray, bases, X: np.ndarray) -> np.ndarray:
    n, p = X.shape[0], surface_terms.shape[0]
    design = np.ones((n, p))
    for k in range(len(bases)):
        idxs = surface_terms[:, k]
        amax = int(idxs.max(initial=0))
        if amax == 0:
            continue
        tab = bases[k].table(X[:, k], amax)
        design *= tab[:, idxs]
    return design


def fit_nuisances(data: Dataset, plan: FoldPlan, fold: int, config: LearnerConfig) -> NuisanceFit:
    """Fit mu, nu and the marginals on everything outside `fold`."""
    if plan.n != data.n:
        raise ConfigError("fold plan and dataset disagree on n")
    if not 0 <= fold < plan.num_folds:
        raise ConfigError(f"fold {fold} out of range")
    rows = plan.train_indices(fold)
    learner = config.resolve(data.kinds)

    marginals: list[MarginalEstimate] = []
    for k, kind in enumerate(data.kinds):
        if isinstance(kind, Discrete):
            counts = np.bincount(data.codes(k)[rows], minlength=len(kind.levels))
            marginals.append(DiscreteMarginal(kind.levels, counts / counts.sum()))
        else:
            marginals.append(EmpiricalMarginal(np.asarray(data.factors[k], dtype=np.float64)[rows]))

    diagnostics: dict = {"mc_subsets": []}
    if learner == "cellmean":
        if not all(isinstance(kind, Discrete) for kind in data.kinds):
            raise ConfigError("cellmean requires every factor to be Discrete")
        mu_tab, nu_tab, empty = _cell_tables(data, rows)
        diagnostics["empty_cells"] = empty
        mu_surface: Surface = CellTableSurface(mu_tab)
        nu_surface: Surface = CellTableSurface(nu_tab)
    else:
        bases = _polyls_bases(data.kinds)
        terms = _polyls_terms(data.kinds, config.degree, config.interaction_order)
        X = data.matrix()[rows]
        design = _design_matrix(terms, bases, X)
        gram = design.T @ design
        if config.ridge > 0:
            gram = gram + config.ridge * np.eye(gram.shape[0])
        y = data.outcome[rows]
        try:
            coefs = np.linalg.solve(gram, design.T @ y)
            resid_sq = (y - design @ coefs) ** 2
            coefs_var = np.linalg.solve(gram, design.T @ resid_sq)
        except np.linalg.LinAlgError as exc:
            raise SingularDesign(
                "singular design with ridge=0; set a positive ridge"
            ) from exc
        mu_surface = PolynomialSurface(bases, terms, coefs)
        # nu = mu^2 + fitted conditional variance; the square is exact in the
        # basis algebra, so nu's misfit is only the residual fit's misfit.
        sq_rows, sq_cs = _square_surface_terms(bases, terms, coefs)
        nu_terms, nu_coefs = _merge_terms(
            sq_rows + [tuple(r) for r in terms], list(sq_cs) + list(coefs_var)
        )
        nu_surface = PolynomialSurface(bases, nu_terms, nu_coefs)

    return NuisanceFit(
        fold=fold,
        mu_surface=mu_surface,
        nu_surface=nu_surface,
        marginals=tuple(marginals),
        learner=learner,
        config=config,
        n_train=rows.shape[0],
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Product-measure integration


class ProductMeasureSampler:
    """Enumeration-cap policy and seeded Monte Carlo clouds over factor
    subsets, for surfaces whose integrals do not factor per coordinate.

    Clouds are cached per subset and seeded from (mc_seed, fold, subset
    bitmask), never from the estimand, so identical subsets get identical
    draws everywhere in a run.
    """

    def __init__(self, marginals: Sequence, fold: int, mc_draws: int, mc_seed: int, cap: int = ENUM_CAP):
        self.marginals = tuple(marginals)
        self.fold = fold
        self.mc_draws = int(mc_draws)
        self.mc_seed = int(mc_seed)
        self.cap = cap
        self._clouds: dict = {}

    def exact(self, subset: frozenset[int]) -> bool:
        if not subset:
            return True
        count = 1
        for k in subset:
            m = self.marginals[k]
            if not m.enumerable:
                return False
            count *= len(m.atoms()[0])
            if count > self.cap:
                return False
        return True

    def cloud(self, subset: frozenset[int]) -> tuple[np.ndarray, tuple[int, ...]]:
        key = frozenset(subset)
        if key not in self._clouds:
            order = tuple(sorted(key))
            mask = sum(1 << k for k in order)
            seq = np.random.SeedSequence(self.mc_seed, spawn_key=(self.fold, mask))
            rng = np.random.default_rng(seq)
            cols = [self.marginals[k].draw(rng, self.mc_draws) for k in order]
            self._clouds[key] = (np.column_stack(cols) if cols else np.zeros((self.mc_draws, 0)), order)
        return self._clouds[key]

    def atom_weights(self) -> list[np.ndarray | None]:
        out = []
        for m in self.marginals:
            out.append(m.atoms()[1] if m.enumerable else None)
        return out


class MomentEngine:
    """Per-fit cache of reduced surfaces, block numerators and moments."""

    def __init__(self, fit: NuisanceFit):
        self.fit = fit
        self.sampler = ProductMeasureSampler(
            fit.marginals, fit.fold, fit.config.mc_draws, fit.config.mc_seed
        )
        self._reduced: dict = {}
        self._scalars: dict = {}

    # -- surface reduction ---------------------------------------------------

    def _reduce(self, surface: Surface, subset: frozenset[int]) -> Surface:
        if not subset:
            return surface
        if isinstance(surface, PolynomialSurface):
            return surface.with_term_multipliers(subset, self._poly_multipliers(surface, subset))
        if self.sampler.exact(subset):
            return surface.reduce_exact(subset, self.sampler.atom_weights())
        self._note_mc(subset)
        cloud, order = self.sampler.cloud(subset)
        return surface.reduce_cloud(subset, cloud, list(order))

    def _poly_multipliers(self, surface: PolynomialSurface, subset: frozenset[int]) -> np.ndarray:
        # first moments are column 0 of the pair table since basis index 0 is 1
        mult = np.ones(surface.terms.shape[0])
        for k in subset:
            idxs = surface.terms[:, k]
            amax = int(idxs.max(initial=0))
            if amax == 0:
                continue
            mom = self._pair_table(surface.bases[k], k, amax)[:, 0]
            mult *= mom[idxs]
        return mult

    def reduced_mu(self, excluded: frozenset[int]) -> Surface:
        key = ("mu", frozenset(excluded))
        if key not in self._reduced:
            self._reduced[key] = self._reduce(self.fit.mu_surface, frozenset(excluded))
        return self._reduced[key]

    def _note_mc(self, subset: frozenset[int]) -> None:
        entry = tuple(sorted(subset))
        subsets = self.fit.diagnostics.setdefault("mc_subsets", [])
        if entry not in subsets:
            subsets.append(entry)

    # -- integrals -----------------------------------------------------------

    def _integral_of_product(self, s: Surface, t: Surface | None, subset: frozenset[int]) -> float:
        active = set(s.active_dims())
        if t is not None:
            active |= set(t.active_dims())
        if not active <= set(subset):
            raise ConfigError("integration subset does not cover the integrand")
        if isinstance(s, CellTableSurface) and (t is None or isinstance(t, CellTableSurface)):
            table = s.table if t is None else s.table * t.table
            prod = CellTableSurface(table)
            reduced = self._reduce(prod, frozenset(subset))
            return float(reduced.table.reshape(-1)[0])
        if isinstance(s, PolynomialSurface) and (t is None or isinstance(t, PolynomialSurface)):
            C = self._contract_pairs(s, t, frozenset(subset))
            return float(C.sum())
        raise ConfigError("mixed surface kinds in one integral")

    def block_numerator(self, excluded: frozenset[int]) -> float:
        """E over the product measure of the squared reduced conditional mean."""
        key = ("block", frozenset(excluded))
        if key not in self._scalars:
            m = self.reduced_mu(excluded)
            rest = frozenset(range(self.fit.num_factors)) - frozenset(excluded)
            self._scalars[key] = self._integral_of_product(m, m, rest)
        return self._scalars[key]

    def mean_y(self) -> float:
        if "mean_y" not in self._scalars:
            everything = frozenset(range(self.fit.num_factors))
            self._scalars["mean_y"] = self._integral_of_product(
                self.reduced_mu(frozenset()), None, everything
            )
        return self._scalars["mean_y"]

    def mean_nu(self) -> float:
        if "mean_nu" not in self._scalars:
            everything = frozenset(range(self.fit.num_factors))
            self._scalars["mean_nu"] = self._integral_of_product(
                self.fit.nu_surface, None, everything
            )
        return self._scalars["mean_nu"]

    def var_y(self) -> float:
        """Plug-in Var(Y), floored; raises once the raw value is not positive."""
        if "var_y" not in self._scalars:
            raw = self.mean_nu() - self.mean_y() ** 2
            if raw <= 0.0:
                raise DegenerateVariance(
                    f"plug-in outcome variance {raw:.3e} is not positive"
                )
            self._scalars["var_y"] = max(raw, VAR_FLOOR)
        return self._scalars["var_y"]

    # -- conditional moments ---------------------------------------------------

    def conditional_product_given(
        self, s: Surface, t: Surface | None, k: int, values: np.ndarray
    ) -> tuple[np.ndarray, float]:
        """E[ s(W) * t(W) | W_k = v ] under the product measure, per value,
        plus the tower mean of that function over W_k's marginal estimate.

        Values at repeated levels are computed once (memoized via uniqueness),
        which is what keeps all-Discrete data cheap. The tower mean uses the
        same contraction as the per-value function, so subtracting it centers
        the term exactly under the fitted product law even on Monte Carlo
        integration paths.
        """
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        uniq, inv = np.unique(values, return_inverse=True)
        rest = frozenset(range(self.fit.num_factors)) - {k}
        active = set(s.active_dims()) | (set(t.active_dims()) if t is not None else set())
        if not active <= (set(rest) | {k}):
            raise ConfigError("integrand depends on more factors than exist")

        if isinstance(s, CellTableSurface) and (t is None or isinstance(t, CellTableSurface)):
            out_u, tower = self._cond_table(s, t, k, uniq, rest)
        elif isinstance(s, PolynomialSurface) and (t is None or isinstance(t, PolynomialSurface)):
            out_u, tower = self._cond_poly(s, t, k, uniq, rest)
        else:
            raise ConfigError("mixed surface kinds in one conditional moment")
        return out_u[inv], tower

    def _cond_table(self, s, t, k, uniq, rest) -> tuple[np.ndarray, float]:
        table = s.table if t is None else s.table * t.table
        prod = CellTableSurface(table)
        reduced = self._reduce(prod, frozenset(rest))
        if reduced.table.shape[k] == 1:
            const = float(reduced.table.reshape(-1)[0])
            return np.full(uniq.shape[0], const), const
        vec = reduced.table.reshape(-1)
        probs = np.asarray(self.fit.marginals[k].probs, dtype=np.float64)
        tower = float(np.dot(vec, probs))
        return vec[np.rint(uniq).astype(np.int64)], tower

    def _pair_table(self, basis: FactorBasis, k: int, max_index: int) -> np.ndarray:
        """E[basis_a(W_k) * basis_b(W_k)] under W_k's fitted marginal, as an
        (A+1, A+1) table over the factor's atoms."""
        key = ("pair", k, max_index)
        if key not in self._scalars:
            vals, wts = self.fit.marginals[k].atoms()
            tab = basis.table(vals, max_index)
            self._scalars[key] = tab.T @ (wts[:, None] * tab)
        return self._scalars[key]

    @staticmethod
    def _t_indices(t: PolynomialSurface | None, k: int) -> np.ndarray:
        return np.zeros(1, dtype=np.int64) if t is None else t.terms[:, k]

    def _contract_pairs(
        self, s: PolynomialSurface, t: PolynomialSurface | None, factors: frozenset[int]
    ) -> np.ndarray:
        """Coefficient outer product of s and t with every factor in `factors`
        integrated out through its pair table. Exact under the product of the
        fitted marginals because each term factors across coordinates."""
        t_coefs = np.ones(1) if t is None else t.coefs
        C = np.outer(s.coefs, t_coefs)
        for kk in sorted(factors):
            a_s = s.terms[:, kk]
            a_t = self._t_indices(t, kk)
            amax = int(max(a_s.max(initial=0), a_t.max(initial=0)))
            if amax == 0:
                continue
            tab = self._pair_table(s.bases[kk], kk, amax)
            C = C * tab[np.ix_(a_s, a_t)]
        return C

    def _cond_poly(self, s: PolynomialSurface, t, k, uniq, rest) -> tuple[np.ndarray, float]:
        """Tensor contraction of E[s * t | W_k = v] plus its tower mean over
        W_k's own marginal: per-factor pair tables over `rest`, then the
        factor-k basis evaluated at the values."""
        C = self._contract_pairs(s, t, frozenset(rest))
        a_s = s.terms[:, k]
        a_t = self._t_indices(t, k)
        amax = int(max(a_s.max(initial=0), a_t.max(initial=0)))
        M = np.zeros((amax + 1, amax + 1))
        np.add.at(M, (a_s[:, None], a_t[None, :]), C)
        B = s.bases[k].table(uniq, amax)
        tower = float((M * self._pair_table(s.bases[k], k, amax)).sum())
        return np.einsum("ua,ab,ub->u", B, M, B), tower


# ---------------------------------------------------------------------------
# Public operations over a fit


@dataclass(frozen=True)
class MuTimesMuExcl:
    """Integrand mu(W) * (conditional mean of Y with `excluded` integrated out)."""

    excluded: frozenset[int]


@dataclass(frozen=True)
class MuExclSquared:
    """Integrand (conditional mean of Y with `excluded` integrated out) squared."""

    excluded: frozenset[int]


@dataclass(frozen=True)
class YSquaredCentered:
    """Integrand (Y - E[Y])^2, expanded through nu and mu."""


def conditional_mean_excluding(fit: NuisanceFit, excluded, w) -> np.ndarray | float:
    """E[Y | W with `excluded` integrated out] at encoded rows `w`."""
    engine = fit.engine()
    surface = engine.reduced_mu(frozenset(excluded))
    w = np.asarray(w, dtype=np.float64)
    single = w.ndim == 1
    out = surface.evaluate(np.atleast_2d(w))
    return float(out[0]) if single else out


def block_value(fit: NuisanceFit, excluded) -> float:
    """Numerator of block(excluded): E[(E[Y | W without excluded])^2]."""
    return fit.engine().block_numerator(frozenset(excluded))


def mean_of_outcome(fit: NuisanceFit) -> float:
    return fit.engine().mean_y()


def variance_of_outcome(fit: NuisanceFit) -> float:
    return fit.engine().var_y()


def _conditional_pieces(fit: NuisanceFit, integrand, k: int, values: np.ndarray) -> tuple[np.ndarray, float]:
    """(per-value conditional moment, its tower mean over W_k's marginal)."""
    engine = fit.engine()
    if isinstance(integrand, MuTimesMuExcl):
        m = engine.reduced_mu(frozenset(integrand.excluded))
        return engine.conditional_product_given(engine.reduced_mu(frozenset()), m, k, values)
    if isinstance(integrand, MuExclSquared):
        m = engine.reduced_mu(frozenset(integrand.excluded))
        return engine.conditional_product_given(m, m, k, values)
    if isinstance(integrand, YSquaredCentered):
        ey = engine.mean_y()
        e_nu, t_nu = engine.conditional_product_given(fit.nu_surface, None, k, values)
        e_mu, t_mu = engine.conditional_product_given(engine.reduced_mu(frozenset()), None, k, values)
        out = e_nu - 2.0 * ey * e_mu + ey * ey
        return out, t_nu - 2.0 * ey * t_mu + ey * ey
    raise ConfigError(f"unknown integrand {integrand!r}")


def conditional_moment_given_factor(fit: NuisanceFit, integrand, k: int, w_k) -> np.ndarray | float:
    """E[integrand | W_k = w_k] under the product measure.

    Accepts a scalar or an array of conditioning values; Discrete factors
    expect level codes.
    """
    values = np.atleast_1d(np.asarray(w_k, dtype=np.float64))
    out, _ = _conditional_pieces(fit, integrand, k, values)
    return float(out[0]) if np.ndim(w_k) == 0 else out


def conditional_moment_centered(fit: NuisanceFit, integrand, k: int, w_k) -> np.ndarray | float:
    """conditional_moment_given_factor minus its tower mean over W_k.

    The tower mean is taken under the same per-factor contraction that builds
    the conditional moment, so the centered term averages to zero exactly
    under the fitted product law. On exact integration paths this equals
    centering by the corresponding block integral (Fubini); on Monte Carlo
    paths it removes the cloud-mismatch error that a shared constant leaves.
    """
    values = np.atleast_1d(np.asarray(w_k, dtype=np.float64))
    out, tower = _conditional_pieces(fit, integrand, k, values)
    out = out - tower
    return float(out[0]) if np.ndim(w_k) == 0 else out
