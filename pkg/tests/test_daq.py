"""Tests for power-law fitting and post-Softmax quantizer selection."""

import csv
import math

import numpy as np
import pytest
from scipy.integrate import quad

from tcaq.calibration import CalibrationSample, CalibrationSet
from tcaq.daq import (
    CSV_FIELDS,
    LOGNORMAL_MAX_Z,
    AltFamily,
    DaqError,
    InsufficientTailError,
    PostSoftmaxMode,
    decide,
    decision_records,
    decisions_from_records,
    fit_alternative,
    fit_power_law,
    fit_truncated_lognormal,
    likelihood_ratio,
    lognormal_loglik,
    power_law_loglik,
    run_daq_offline,
    select_quantizer,
    write_decision_csv,
)
from tcaq.quant import QuantizerKind
from tcaq.tensor import Tensor, ops


def power_law_draw(rng, n=10000, alpha=2.5, x_min=0.01):
    """Inverse-CDF sampling: x = x_min * u^(-1 / (alpha - 1)), u in (0, 1]."""
    u = 1.0 - rng.uniform(size=n)
    return x_min * u ** (-1.0 / (alpha - 1.0))


def tail_ratio(samples):
    """R_g of the power law against both alternatives."""
    fit = fit_power_law(samples)
    alts = {f.value: fit_alternative(samples, f, fit.x_min) for f in AltFamily}
    return likelihood_ratio(fit, alts)


def replace_captures(cal, layer_ids, draw):
    """Copy of ``cal`` with the captures of ``layer_ids`` replaced by ``draw()``."""
    samples = [
        CalibrationSample(
            x_t=s.x_t, t=s.t, chain_id=s.chain_id,
            captured={**s.captured, **{layer_id: draw() for layer_id in layer_ids}},
        )
        for s in cal.samples
    ]
    return CalibrationSet(samples, cal.source, cal.seed, cal.timesteps, cal.layer_ids)


@pytest.fixture
def pareto(rng):
    """Classical Pareto with x_min = 0.01 and density exponent 2.5."""
    return 0.01 * (rng.pareto(1.5, size=20000) + 1.0)


@pytest.fixture
def exponential(rng):
    return rng.exponential(scale=0.05, size=20000)


@pytest.fixture
def lognormal(rng):
    return rng.lognormal(mean=-3.0, sigma=1.0, size=20000)


@pytest.fixture
def truncated_normal(rng):
    x = rng.normal(loc=0.3, scale=0.05, size=20000)
    return x[x > 0]


@pytest.fixture
def probs(rng):
    return ops.softmax(Tensor(rng.normal(scale=4.0, size=(32, 64)))).data


# =============================================================================
# Power-law fit
# =============================================================================

class TestPowerLawFit:
    """MLE exponent with a KS-selected cutoff."""

    def test_recovers_exponent(self, pareto):
        fit = fit_power_law(pareto)
        assert fit.alpha == pytest.approx(2.5, abs=0.2)
        assert fit.x_min >= np.percentile(pareto, 50) * (1 - 1e-9)
        assert fit.n_tail >= 50
        assert 0 <= fit.ks_distance < 0.1

    def test_density_constant(self, pareto):
        fit = fit_power_law(pareto)
        assert fit.c == pytest.approx((fit.alpha - 1) * fit.x_min ** (fit.alpha - 1))

    def test_loglik_matches_closed_form(self, pareto):
        fit = fit_power_law(pareto)
        tail = pareto[pareto >= fit.x_min]
        assert power_law_loglik(tail, fit.alpha, fit.x_min) == pytest.approx(fit.loglik)

    def test_non_positive_samples_are_ignored(self, pareto):
        padded = np.concatenate([pareto, np.zeros(5000), -pareto[:100]])
        assert fit_power_law(padded).alpha == pytest.approx(fit_power_law(pareto).alpha)

    def test_too_few_positives(self):
        with pytest.raises(InsufficientTailError):
            fit_power_law(np.linspace(0.1, 1.0, 49))

    def test_constant_samples(self):
        with pytest.raises(InsufficientTailError):
            fit_power_law(np.full(500, 0.25))

    def test_subsampling(self, pareto):
        fit = fit_power_law(pareto, max_samples=4000)
        assert fit.alpha == pytest.approx(2.5, abs=0.3)


class TestAlternatives:
    """Exponential and log-normal fits on the same tail."""

    def test_power_law_beats_alternatives_on_power_law_data(self, pareto):
        fit = fit_power_law(pareto)
        alts = {f.value: fit_alternative(pareto, f, fit.x_min) for f in AltFamily}
        assert likelihood_ratio(fit, alts) > 0

    def test_exponential_wins_on_exponential_data(self, exponential):
        fit = fit_power_law(exponential)
        alts = {f.value: fit_alternative(exponential, f, fit.x_min) for f in AltFamily}
        assert alts[AltFamily.EXPONENTIAL.value] > fit.loglik
        assert likelihood_ratio(fit, alts) < 0

    def test_lognormal_wins_on_lognormal_data(self, lognormal):
        fit = fit_power_law(lognormal)
        alts = {f.value: fit_alternative(lognormal, f, fit.x_min) for f in AltFamily}
        assert alts[AltFamily.LOGNORMAL.value] > fit.loglik
        assert likelihood_ratio(fit, alts) < 0

    def test_truncated_lognormal_recovers_parameters(self, lognormal):
        x_min = math.exp(-3.0)
        logs = np.log(lognormal[lognormal >= x_min])
        mu, sigma, loglik = fit_truncated_lognormal(logs, x_min, float(logs.mean()), float(logs.std()))
        assert mu == pytest.approx(-3.0, abs=0.15)
        assert sigma == pytest.approx(1.0, abs=0.1)
        assert loglik == pytest.approx(lognormal_loglik(logs, x_min, mu, sigma))

    def test_truncated_fit_beats_tail_moments(self, lognormal):
        x_min = float(np.percentile(lognormal, 80))
        logs = np.log(lognormal[lognormal >= x_min])
        mu0, sigma0 = float(logs.mean()), float(logs.std())
        _, _, loglik = fit_truncated_lognormal(logs, x_min, mu0, sigma0)
        assert loglik > lognormal_loglik(logs, x_min, mu0, sigma0)

    def test_truncated_density_is_normalized(self):
        x_min, mu, sigma = 0.1, -3.0, 1.0

        def density(u):
            # integrate over u = ln x
            return math.exp(lognormal_loglik(np.array([u]), x_min, mu, sigma) + u)

        total, _ = quad(density, math.log(x_min), math.log(x_min) + 40.0)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_lognormal_cutoff_is_capped(self, pareto):
        fit = fit_power_law(pareto)
        logs = np.log(pareto[pareto >= fit.x_min])
        mu, sigma, _ = fit_truncated_lognormal(logs, fit.x_min, float(logs.mean()), float(logs.std()))
        assert (math.log(fit.x_min) - mu) / sigma <= LOGNORMAL_MAX_Z + 1e-9

    def test_empty_tail(self, pareto):
        with pytest.raises(DaqError):
            fit_alternative(pareto, AltFamily.EXPONENTIAL, x_min=1e9)

    def test_ratio_needs_an_alternative(self, pareto):
        with pytest.raises(DaqError):
            likelihood_ratio(fit_power_law(pareto), {})


# =============================================================================
# Selection
# =============================================================================

class TestSelection:
    """Per-cell quantizer choice."""

    @pytest.mark.parametrize("r_g, kind", [
        (0.3, QuantizerKind.LOG2),
        (0.0, QuantizerKind.UNIFORM),
        (-1.0, QuantizerKind.UNIFORM),
        (math.nan, QuantizerKind.UNIFORM),
        (-math.inf, QuantizerKind.UNIFORM),
    ])
    def test_decide(self, r_g, kind):
        assert decide(r_g) == kind

    def test_power_law_cell_gets_log2(self, pareto):
        d = select_quantizer("a", 10, pareto, bits=8)
        assert d.chosen == QuantizerKind.LOG2
        assert d.params.kind == QuantizerKind.LOG2
        assert d.r_g > 0 and d.fit is not None
        assert set(d.alt_logliks) == {f.value for f in AltFamily}

    def test_exponential_cell_gets_uniform(self, exponential):
        d = select_quantizer("a", 10, exponential, bits=8)
        assert d.chosen == QuantizerKind.UNIFORM
        assert d.params.kind == QuantizerKind.UNIFORM

    def test_lognormal_cell_gets_uniform(self, lognormal):
        d = select_quantizer("a", 10, lognormal, bits=8)
        assert d.r_g < 0
        assert d.chosen == QuantizerKind.UNIFORM

    def test_truncated_normal_cell_gets_uniform(self, truncated_normal):
        d = select_quantizer("a", 10, truncated_normal, bits=8)
        assert d.r_g < 0
        assert d.chosen == QuantizerKind.UNIFORM

    def test_uniform_noise_cell_gets_uniform(self, rng):
        d = select_quantizer("a", 10, rng.uniform(size=20000), bits=8)
        assert d.r_g < 0
        assert d.chosen == QuantizerKind.UNIFORM

    def test_uniform_noise_grid_is_all_uniform(self, tiny_cal, tiny_model, rng):
        layer_ids = [s.layer_id for s in tiny_model.post_softmax_layers()]
        cal = replace_captures(tiny_cal, layer_ids, lambda: rng.uniform(size=(2, 32, 32)))
        decisions = run_daq_offline(cal, layer_ids, bits=8, grid=10)
        assert len(decisions) == len(layer_ids) * len(tiny_cal.timesteps)
        for d in decisions.values():
            assert d.chosen == QuantizerKind.UNIFORM
            assert np.isfinite(d.r_g) and d.r_g < 0

    @pytest.mark.slow
    def test_trained_toy_grid_is_not_all_uniform(self, trained_model, trained_cal):
        layer_ids = [s.layer_id for s in trained_model.post_softmax_layers()]
        decisions = run_daq_offline(trained_cal, layer_ids, bits=8, grid=20)
        assert any(d.chosen == QuantizerKind.LOG2 for d in decisions.values())

    @pytest.mark.parametrize("mode, kind", [
        (PostSoftmaxMode.UNIFORM, QuantizerKind.UNIFORM),
        (PostSoftmaxMode.LOG2, QuantizerKind.LOG2),
    ])
    def test_forced_modes_skip_the_fit(self, probs, mode, kind):
        d = select_quantizer("a", 0, probs, bits=6, mode=mode)
        assert d.chosen == kind
        assert math.isnan(d.r_g)
        assert d.fit is None
        assert d.note == f"forced {mode.value}"

    def test_insufficient_tail_falls_back_to_uniform(self):
        d = select_quantizer("a", 0, np.linspace(0.01, 0.2, 20), bits=8)
        assert d.r_g == -math.inf
        assert d.chosen == QuantizerKind.UNIFORM
        assert d.note.startswith("insufficient tail")

    def test_offline_grid_covers_every_cell(self, tiny_cal):
        decisions = run_daq_offline(tiny_cal, ["mid.attn", "up.1.attn.0"], bits=8, grid=10)
        assert list(decisions) == [(layer, t) for layer in ("mid.attn", "up.1.attn.0") for t in tiny_cal.timesteps]
        for d in decisions.values():
            assert d.params.kind == d.chosen


# =============================================================================
# Seeded trials
# =============================================================================

class TestSeededTrials:
    """Fit and decision rates over independent seeds."""

    def test_alpha_recovery_rate(self):
        hits = 0
        for seed in range(100):
            alpha = fit_power_law(power_law_draw(np.random.default_rng(seed))).alpha
            hits += 2.4 <= alpha <= 2.6
        assert hits >= 95

    @pytest.mark.parametrize("draw, positive", [
        (lambda rng: power_law_draw(rng), True),
        (lambda rng: rng.exponential(scale=0.05, size=10000), False),
        (lambda rng: np.abs(rng.normal(loc=0.3, scale=0.05, size=10000)), False),
        (lambda rng: rng.uniform(size=10000), False),
    ], ids=["power_law", "exponential", "truncated_normal", "uniform"])
    def test_ratio_sign_rate(self, draw, positive):
        hits = sum((tail_ratio(draw(np.random.default_rng(seed))) > 0) == positive for seed in range(20))
        assert hits >= 19


# =============================================================================
# Persistence
# =============================================================================

class TestDecisionPersistence:
    """CSV dump and archive records."""

    @pytest.fixture
    def decisions(self, pareto, exponential):
        return {
            ("a", 20): select_quantizer("a", 20, pareto, bits=8, grid=20),
            ("a", 0): select_quantizer("a", 0, exponential, bits=8, grid=20),
            ("b", 20): select_quantizer("b", 20, np.ones(3), bits=8, grid=20),
        }

    def test_csv_header_and_rows(self, decisions, tmp_path):
        path = write_decision_csv(decisions, tmp_path / "out" / "daq.csv")
        with path.open(newline="") as f:
            reader = csv.DictReader(f)
            assert reader.fieldnames == CSV_FIELDS
            rows = list(reader)
        assert [r["chosen"] for r in rows] == ["log2", "uniform", "uniform"]
        assert rows[2]["alpha"] == ""

    def test_records_round_trip(self, decisions):
        loaded = decisions_from_records(decision_records(decisions))
        assert list(loaded) == [("a", 20), ("a", 0), ("b", 20)]
        for key, d in decisions.items():
            assert loaded[key].chosen == d.chosen
            assert loaded[key].params == d.params
            np.testing.assert_allclose(loaded[key].r_g, d.r_g, rtol=1e-6)
        assert loaded[("b", 20)].fit is None
