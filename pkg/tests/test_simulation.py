"""Example processes, exact oracles, true-nuisance fits, study plumbing."""

import numpy as np
import pytest

from causal_anova import (
    ConfigError,
    Continuous,
    NormalFactor,
    StudyCell,
    UniformFactor,
    additive_gaussian_dgp,
    anchored_decomposition_check,
    coverage_grid_cells,
    cubic_interaction_dgp,
    custom_polynomial_dgp,
    generate,
    interaction,
    oracle_value,
    run_study,
    total,
    true_nuisance_fit,
)
from causal_anova.simulation import factor_moment


class TestExactOracles:
    # hand-reduced fractions for the cubic process at sigma=1:
    # Var(Y) = 93/70 and the ratios below follow from uniform moments
    CUBIC_VALUES = {
        total(2): 8.0 / 31.0,
        total(0): 704.0 / 2511.0,
        total(1): 326.0 / 2511.0,
        total(0, 2): 16.0 / 31.0,
        interaction(0, 2): 56.0 / 2511.0,
        total(0, 1, 2): 58.0 / 93.0,
    }

    def test_cubic_fractions(self):
        dgp = cubic_interaction_dgp(sigma=1.0)
        for spec, want in self.CUBIC_VALUES.items():
            got = oracle_value(dgp, spec)
            assert got.method == "symbolic"
            assert got.error_bound == 0.0
            assert got.value == pytest.approx(want, abs=1e-12)

    def test_sigma_zero_kills_the_interaction(self):
        dgp = cubic_interaction_dgp(sigma=0.0)
        got = oracle_value(dgp, interaction(0, 2))
        assert got.value == pytest.approx(0.0, abs=1e-15)

    def test_additive_process(self):
        dgp = additive_gaussian_dgp()
        assert oracle_value(dgp, total(0)).value == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert oracle_value(dgp, total(1)).value == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert oracle_value(dgp, interaction(0, 1)).value == pytest.approx(0.0, abs=1e-15)

    def test_oracles_satisfy_the_decomposition_identity(self):
        dgp = cubic_interaction_dgp(sigma=1.0)
        totals = {
            frozenset({0}): oracle_value(dgp, total(0)).value,
            frozenset({2}): oracle_value(dgp, total(2)).value,
            frozenset({0, 2}): oracle_value(dgp, total(0, 2)).value,
        }
        interactions = {frozenset({0, 2}): oracle_value(dgp, interaction(0, 2)).value}
        assert anchored_decomposition_check(totals, interactions, (0, 2)) < 1e-12

    def test_totals_are_monotone_and_bounded(self):
        dgp = cubic_interaction_dgp(sigma=1.0)
        t2 = oracle_value(dgp, total(2)).value
        t02 = oracle_value(dgp, total(0, 2)).value
        t012 = oracle_value(dgp, total(0, 1, 2)).value
        assert 0.0 < t2 < t02 < t012 < 1.0

    def test_monte_carlo_agrees_within_its_bound(self):
        dgp = cubic_interaction_dgp(sigma=1.0)
        for spec in (total(2), interaction(0, 2)):
            exact = oracle_value(dgp, spec).value
            mc = oracle_value(dgp, spec, method="mc", mc_draws=200_000, seed=1)
            assert mc.method == "mc"
            assert mc.error_bound > 0.0
            assert abs(mc.value - exact) <= mc.error_bound

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            oracle_value(additive_gaussian_dgp(), total(0), method="exactish")


class TestFactorMoments:
    def test_uniform(self):
        u = UniformFactor(-1.0, 1.0)
        assert factor_moment(u, 0) == 1.0
        assert factor_moment(u, 1) == pytest.approx(0.0, abs=1e-15)
        assert factor_moment(u, 2) == pytest.approx(1.0 / 3.0)
        assert factor_moment(u, 4) == pytest.approx(1.0 / 5.0)

    def test_standard_normal(self):
        g = NormalFactor(0.0, 1.0)
        assert [factor_moment(g, p) for p in range(5)] == pytest.approx([1, 0, 1, 0, 3])

    def test_shifted_normal_recurrence(self):
        g = NormalFactor(2.0, 1.0)
        assert factor_moment(g, 1) == pytest.approx(2.0)
        assert factor_moment(g, 2) == pytest.approx(5.0)
        assert factor_moment(g, 3) == pytest.approx(14.0)


class TestTrueNuisanceFit:
    def test_mu_at_the_all_ones_point(self):
        fit = true_nuisance_fit(cubic_interaction_dgp(sigma=1.0))
        assert fit.mu(np.array([[1.0, 1.0, 1.0]])) == pytest.approx(5.0, abs=1e-12)

    def test_nu_is_mu_squared_plus_noise_variance(self):
        fit = true_nuisance_fit(cubic_interaction_dgp(sigma=1.0))
        rng = np.random.default_rng(0)
        X = rng.uniform(-1.0, 1.0, size=(50, 3))
        diff = fit.nu(X) - fit.mu(X) ** 2
        assert np.allclose(diff, 0.5, atol=1e-10)

    def test_quadrature_marginals_reproduce_exact_moments(self):
        fit = true_nuisance_fit(cubic_interaction_dgp(sigma=1.0))
        atoms, wts = fit.marginals[0].atoms()
        assert wts.sum() == pytest.approx(1.0)
        assert float(wts @ atoms**2) == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert float(wts @ atoms**4) == pytest.approx(1.0 / 5.0, abs=1e-12)
        fit_g = true_nuisance_fit(additive_gaussian_dgp())
        atoms, wts = fit_g.marginals[1].atoms()
        assert float(wts @ atoms**2) == pytest.approx(1.0, abs=1e-12)
        assert float(wts @ atoms**4) == pytest.approx(3.0, abs=1e-12)


class TestCustomProcess:
    def test_linear_two_factor_total(self):
        dgp = custom_polynomial_dgp(
            factors=(UniformFactor(-1.0, 1.0), NormalFactor(0.0, 1.0)),
            terms=((1.0, (1, 0)), (2.0, (0, 1))),
            noise_sd=1.0,
        )
        # Var = 1/3 + 4 + 1; removing W1 leaves 2*W2, so T(W1) = (1/3)/(16/3)
        assert oracle_value(dgp, total(0)).value == pytest.approx(1.0 / 16.0, abs=1e-12)

    def test_noise_must_be_given_exactly_once(self):
        factors = (UniformFactor(-1.0, 1.0),)
        terms = ((1.0, (1,)),)
        with pytest.raises(ConfigError):
            custom_polynomial_dgp(factors, terms)
        with pytest.raises(ConfigError):
            custom_polynomial_dgp(factors, terms, noise_sd=1.0, noise_variance=1.0)
        with pytest.raises(ConfigError):
            custom_polynomial_dgp(factors, terms, noise_variance=-0.5)

    def test_exponent_rows_must_match_factor_count(self):
        with pytest.raises(ConfigError):
            custom_polynomial_dgp(
                factors=(UniformFactor(-1.0, 1.0),),
                terms=((1.0, (1, 2)),),
                noise_sd=1.0,
            )


class TestGenerate:
    def test_deterministic_in_seed(self):
        dgp = cubic_interaction_dgp(sigma=1.0)
        a, _ = generate(dgp, 50, seed=3)
        b, _ = generate(dgp, 50, seed=3)
        c, _ = generate(dgp, 50, seed=4)
        assert np.array_equal(a.outcome, b.outcome)
        assert all(np.array_equal(x, z) for x, z in zip(a.factors, b.factors))
        assert not np.array_equal(a.outcome, c.outcome)

    def test_shapes_and_kinds(self):
        data, truth = generate(additive_gaussian_dgp(), 40, seed=0)
        assert data.n == 40
        assert data.factor_names == ("W1", "W2")
        assert all(isinstance(k, Continuous) for k in data.kinds)
        assert truth.learner == "true"

    def test_needs_two_observations(self):
        with pytest.raises(ConfigError):
            generate(additive_gaussian_dgp(), 1, seed=0)

    def test_additive_sample_variance_matches_the_oracle_denominator(self):
        data, _ = generate(additive_gaussian_dgp(), 100_000, seed=7)
        assert float(np.var(data.outcome)) == pytest.approx(3.0, abs=0.1)


class TestStudies:
    def cells(self):
        return [
            StudyCell(
                dgp=additive_gaussian_dgp(),
                n=200,
                trials=3,
                methods=("plugin", "if", "eif"),
                estimands=(total(0), interaction(0, 1)),
            )
        ]

    def test_row_layout_and_determinism(self):
        res = run_study(self.cells(), master_seed=5)
        assert len(res.rows) == 6
        again = run_study(self.cells(), master_seed=5)
        for r1, r2 in zip(res.rows, again.rows):
            assert r1.bias == r2.bias
            assert r1.coverage == r2.coverage

    def test_workers_do_not_change_results(self):
        a = run_study(self.cells(), master_seed=5, workers=1)
        b = run_study(self.cells(), master_seed=5, workers=2)
        for r1, r2 in zip(a.rows, b.rows):
            assert r1.bias == r2.bias
            assert r1.sd_sqrt_n == r2.sd_sqrt_n

    def test_plugin_rows_have_no_coverage(self):
        res = run_study(self.cells(), master_seed=5)
        for row in res.rows:
            if row.method == "plugin":
                assert row.coverage is None and row.mean_ci_width is None
            else:
                assert row.coverage in (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)
                assert row.mean_ci_width >= 0.0

    def test_kept_trials_expose_per_trial_points(self):
        res = run_study(self.cells(), master_seed=5, keep_trials=True)
        entry = res.trials[(0, "if", "total:W1")]
        assert entry["points"].shape == (3,)
        assert entry["truth"] == pytest.approx(1.0 / 3.0)
        assert entry["covered"].shape == (3,)
        assert ((entry["ci_low"] <= entry["ci_high"])).all()

    def test_csv_lines(self):
        import csv

        res = run_study(self.cells(), master_seed=5)
        lines = res.to_csv_lines()
        assert lines[0] == (
            "dgp,sigma,n,method,estimand,trials,bias,sd_sqrt_n,coverage,mean_ci_width,seconds"
        )
        assert len(lines) == 7
        parsed = list(csv.reader(lines[1:]))
        for row in parsed:
            assert len(row) == 11
            assert row[10] == ""  # seconds stays empty without timing
        # comma-bearing labels survive a round trip intact
        assert any(row[4] == "interaction:W1,W2" for row in parsed)
        timed = list(csv.reader(res.to_csv_lines(timing=True)[1:]))
        assert all(row[10] != "" for row in timed)

    def test_empty_estimands_rejected(self):
        cell = StudyCell(dgp=additive_gaussian_dgp(), n=100, trials=1)
        with pytest.raises(ConfigError):
            run_study([cell])

    def test_coverage_grid_layout(self):
        cells = coverage_grid_cells(sigma=1.0, n_grid=(250, 500), trials=7)
        assert [c.n for c in cells] == [250, 500]
        for cell in cells:
            assert cell.trials == 7
            assert cell.estimands == (total(2), total(0, 2), interaction(0, 2))
            assert cell.learner is None
            assert cell.dgp.name == "cubic_interaction"
