"""
Tests for structural equation modelling: model layout, implied moments,
discrepancy, gradients, fit indices, standardization and estimation.
"""
import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import (
    InsufficientDataError,
    NotPositiveDefiniteError,
    ValidationError,
    ZeroDfError,
    ZeroVarianceError,
)
from app.services.sem import (
    CONTINUOUS_COLUMNS,
    ETA_NAMES,
    XI_COLUMNS,
    Y_COLUMNS,
    SemData,
    SemModel,
    baseline_model,
    build_canonical_model,
    fit,
    fit_indices,
    implied_covariance,
    implied_derivatives,
    implied_from_matrices,
    ml_discrepancy,
    ml_gradient,
    numeric_gradient,
    population_parameters,
    simulate_data,
    standardize,
    zscore,
)


@pytest.fixture
def model():
    return build_canonical_model()


@pytest.fixture
def population(model):
    return population_parameters(model)


@pytest.fixture
def measured_model():
    """Small model with free loadings and measurement errors."""
    nan = np.nan
    return SemModel(
        y_names=("y1", "y2", "y3"),
        eta_names=("first", "second"),
        xi_names=("x1", "x2"),
        lambda_y=np.array([[1.0, 0.0], [nan, 0.0], [0.0, 1.0]]),
        beta=np.array([[0.0, 0.0], [nan, 0.0]]),
        gamma=np.array([[nan, nan], [0.0, nan]]),
        phi=np.full((2, 2), nan),
        psi=np.diag([nan, nan]),
        theta=np.diag([nan, nan, 0.0]),
    )


def _random_parameters(model, rng):
    """Admissible parameter set: bounded paths, positive disturbances, positive definite Phi."""
    w = rng.normal(size=(len(model.xi_names), len(model.xi_names)))
    phi = w @ w.T / 6.0 + 0.5 * np.eye(len(model.xi_names))
    values = []
    for spec in model.params:
        if spec.matrix in ("beta", "gamma", "lambda_y"):
            values.append(rng.uniform(-0.8, 0.8))
        elif spec.matrix == "phi":
            values.append(phi[spec.row, spec.col])
        else:
            values.append(rng.uniform(0.2, 1.5))
    return np.array(values)


def _structural_paths(model):
    for matrix, sources in (("gamma", model.xi_names), ("beta", model.eta_names)):
        pattern = getattr(model, matrix)
        for i, j in zip(*np.where(np.isnan(pattern) | (pattern != 0))):
            yield matrix, sources[j], model.eta_names[i], int(i), int(j)


def _standardized_errors(model, population, result):
    """Absolute standardized error per (source, target) path."""
    truth = standardize(model, population).matrices
    table = result.path_table().set_index(["source", "target"])
    return {
        (source, target): abs(table.loc[(source, target), "std_estimate"] - getattr(truth, matrix)[i, j])
        for matrix, source, target, i, j in _structural_paths(model)
    }


class TestModelLayout:
    """Canonical model structure."""

    def test_counts(self, model):
        assert model.n_free == 38
        assert model.p == 10
        assert model.df == 17
        assert model.observed_names == Y_COLUMNS + XI_COLUMNS
        assert model.eta_names == ETA_NAMES

    def test_parameter_labels(self, model):
        labels = {spec.label for spec in model.params}
        assert "Image -> EnvironmentalAwareness" in labels
        assert "DimensionAwareness -> SelfIdentification" in labels
        # the scale-setting path is fixed
        assert "PastPresentMemory -> SelfIdentification" not in labels

    def test_pack_inverts_matrices(self, model, population):
        assert np.array_equal(model.pack(model.matrices(population)), population)

    def test_wrong_parameter_count(self, model):
        with pytest.raises(ValidationError):
            model.matrices(np.zeros(5))

    def test_asymmetric_pattern_rejected(self, model):
        phi = np.full((6, 6), np.nan)
        phi[0, 1] = 0.0
        with pytest.raises(ValidationError):
            SemModel(model.y_names, model.eta_names, model.xi_names, model.lambda_y,
                     model.beta, model.gamma, phi, model.psi, model.theta)


class TestImpliedMoments:
    """Implied covariance and discrepancy."""

    def test_implied_is_symmetric_positive_definite(self, model, population):
        sigma = implied_covariance(model, population)
        assert sigma.shape == (10, 10)
        assert np.allclose(sigma, sigma.T)
        np.linalg.cholesky(sigma)

    def test_exogenous_block_is_phi(self, model, population):
        sigma = implied_covariance(model, population)
        assert np.allclose(sigma[4:, 4:], model.matrices(population).phi)

    def test_discrepancy_reference_value(self):
        assert ml_discrepancy(np.eye(2), 2 * np.eye(2)) == pytest.approx(0.3863, abs=1e-4)

    def test_discrepancy_zero_at_truth(self, model, population):
        sigma = implied_covariance(model, population)
        assert ml_discrepancy(sigma, sigma) == pytest.approx(0.0, abs=1e-10)

    def test_discrepancy_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefiniteError) as exc_info:
            ml_discrepancy(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert exc_info.value.details["matrix"] == "implied"

    def test_numeric_gradient(self):
        grad = numeric_gradient(lambda x: float(np.sum(x ** 2)), np.array([1.0, -2.0]))
        assert grad == pytest.approx([2.0, -4.0], abs=1e-6)

    @pytest.mark.slow
    def test_simulated_covariance_matches_implied(self, model):
        rng = np.random.default_rng(0)
        for _ in range(20):
            theta = _random_parameters(model, rng)
            sigma = implied_covariance(model, theta)
            data = simulate_data(model, theta, 1_000_000, rng)
            S = data.covariance(model.observed_names)
            assert np.linalg.norm(S - sigma) / np.linalg.norm(sigma) < 0.02


class TestGradient:
    """Likelihood gradients."""

    @staticmethod
    def _sample(model, theta, n=500, seed=3):
        data = simulate_data(model, theta, n, np.random.default_rng(seed))
        return data.covariance(model.observed_names)

    @staticmethod
    def _perturb(model, theta, rng):
        paths = np.array([spec.matrix in ("beta", "gamma") for spec in model.params])
        return theta + paths * rng.normal(0.0, 0.1, size=theta.shape)

    def test_forward_agrees_with_central(self, model, population):
        S = self._sample(model, population)
        rng = np.random.default_rng(10)

        def objective(theta):
            return ml_discrepancy(S, implied_covariance(model, theta))

        for _ in range(10):
            point = self._perturb(model, population, rng)
            central = numeric_gradient(objective, point)
            forward = numeric_gradient(objective, point, scheme="forward")
            assert np.linalg.norm(forward - central) <= 1e-4 * max(np.linalg.norm(central), 1.0)

    def test_closed_form_agrees_with_central(self, model, population):
        S = self._sample(model, population)
        rng = np.random.default_rng(11)
        for _ in range(10):
            point = self._perturb(model, population, rng)
            central = numeric_gradient(lambda t: ml_discrepancy(S, implied_covariance(model, t)), point)
            assert ml_gradient(model, S, point) == pytest.approx(central, rel=1e-5, abs=1e-6)

    def test_closed_form_with_loadings_and_errors(self, measured_model):
        rng = np.random.default_rng(12)
        theta = _random_parameters(measured_model, rng)
        S = self._sample(measured_model, theta)
        central = numeric_gradient(lambda t: ml_discrepancy(S, implied_covariance(measured_model, t)), theta)
        assert ml_gradient(measured_model, S, theta) == pytest.approx(central, rel=1e-5, abs=1e-6)

    def test_derivatives_are_symmetric(self, measured_model):
        theta = _random_parameters(measured_model, np.random.default_rng(13))
        derivatives = implied_derivatives(measured_model, theta)
        assert derivatives.shape == (measured_model.n_free, 5, 5)
        assert np.allclose(derivatives, derivatives.transpose(0, 2, 1))

    def test_zero_at_population_moments(self, model, population):
        sigma = implied_covariance(model, population)
        assert np.allclose(ml_gradient(model, sigma, population), 0.0, atol=1e-10)


class TestFitIndices:
    """CFI, TLI and RMSEA."""

    def test_reference_values(self):
        indices = fit_indices(100.0, 40, 1000.0, 45, 657)
        assert indices.cfi == pytest.approx(0.9372, abs=1e-4)
        assert indices.rmsea == pytest.approx(0.0478, abs=1e-4)
        assert indices.tli == pytest.approx(0.9293, abs=1e-4)

    def test_perfect_fit(self):
        indices = fit_indices(10.0, 17, 500.0, 45, 300)
        assert indices.cfi == 1.0
        assert indices.rmsea == 0.0
        assert indices.tli == 1.0

    def test_zero_df(self):
        with pytest.raises(ZeroDfError):
            fit_indices(1.0, 0, 10.0, 45, 100)

    def test_baseline(self):
        S = np.array([[1.0, 0.5], [0.5, 1.0]])
        baseline = baseline_model(S, 101)
        assert baseline.df == 1
        assert baseline.chi2 == pytest.approx(-100 * np.log(0.75))


class TestStandardization:
    """Standardized solutions and z-scoring."""

    def test_standardized_moments_have_unit_diagonal(self, model, population):
        solution = standardize(model, population)
        sigma = implied_from_matrices(solution.matrices)
        assert np.allclose(np.diag(sigma), 1.0)

    def test_zscore_continuous_only(self):
        rng = np.random.default_rng(3)
        frame = pd.DataFrame({
            "Memory": rng.integers(0, 2, 200),
            "Position": rng.normal(5.0, 2.0, 200),
            "Orientation": rng.uniform(-3, 3, 200),
            "Velocity": rng.normal(0.6, 0.1, 200),
            "Acceleration": rng.normal(0.0, 0.3, 200),
        })
        result = zscore(SemData(frame)).frame
        for column in CONTINUOUS_COLUMNS:
            assert result[column].mean() == pytest.approx(0.0, abs=1e-12)
            assert result[column].std(ddof=0) == pytest.approx(1.0)
        assert result["Memory"].equals(frame["Memory"])

    def test_zscore_uses_population_sd(self):
        frame = pd.DataFrame({"Position": [1.0, 2.0, 3.0], "Memory": [0, 1, 1]})
        result = zscore(SemData(frame), ("Position",)).frame
        assert result["Position"].tolist() == pytest.approx([-1.2247449, 0.0, 1.2247449], abs=1e-6)
        assert result["Memory"].tolist() == [0, 1, 1]

    def test_zscore_is_idempotent(self):
        frame = pd.DataFrame({"Velocity": np.random.default_rng(8).normal(2.0, 3.0, 100)})
        once = zscore(SemData(frame), ("Velocity",)).frame
        twice = zscore(SemData(once), ("Velocity",)).frame
        assert np.allclose(once["Velocity"], twice["Velocity"], atol=1e-12)

    def test_zscore_constant_column(self):
        frame = pd.DataFrame({"Position": [1.0] * 10, "Velocity": np.arange(10.0)})
        with pytest.raises(ZeroVarianceError) as exc_info:
            zscore(SemData(frame), ("Position", "Velocity"))
        assert exc_info.value.details["columns"] == ["Position"]


class TestFit:
    """Maximum-likelihood estimation."""

    def test_too_few_rows(self, model, population):
        data = simulate_data(model, population, 40, np.random.default_rng(1))
        with pytest.raises(InsufficientDataError):
            fit(model, data)

    def test_constant_column(self, model, population):
        data = simulate_data(model, population, 200, np.random.default_rng(1))
        data.frame["Image"] = 1.0
        with pytest.raises(ZeroVarianceError):
            fit(model, data)

    @pytest.mark.slow
    def test_fit_result_layout(self, model, population):
        data = simulate_data(model, population, 5000, np.random.default_rng(11))
        result = fit(model, data, n_starts=2, seed=0)

        assert result.converged
        assert result.df == 17
        assert len(result.starts) == 2
        assert result.se is not None
        assert np.all(result.se > 0)
        table = result.path_table()
        assert set(table["matrix"]) == {"beta", "gamma"}
        assert table[table["fixed"]]["source"].tolist() == ["PastPresentMemory"]
        assert abs(result.standardized_path("Image", "EnvironmentalAwareness")) <= 1.0
        summary = result.summary()
        assert summary["free_parameters"] == 38
        assert summary["n"] == 5000

    @pytest.mark.slow
    def test_recovers_population_paths_across_seeds(self, model, population):
        truth = standardize(model, population).matrices
        strong = {
            (source, target) for matrix, source, target, i, j in _structural_paths(model)
            if abs(getattr(truth, matrix)[i, j]) >= 0.3
        }
        errors, cfi, tli, rmsea = [], [], [], []
        for seed in range(20):
            data = simulate_data(model, population, 657, np.random.default_rng(seed))
            result = fit(model, data, n_starts=2, seed=seed)
            errors.append(_standardized_errors(model, population, result))
            cfi.append(result.indices.cfi)
            tli.append(result.indices.tli)
            rmsea.append(result.indices.rmsea)

            table = result.path_table().set_index(["source", "target"])
            for path in strong:
                if not table.loc[path, "fixed"]:
                    assert table.loc[path, "p_value"] < 0.05, (seed, path)

        for path in errors[0]:
            assert np.median([e[path] for e in errors]) <= 0.05, path
        assert np.median(cfi) >= 0.95
        assert np.median(tli) >= 0.95
        assert np.median(rmsea) <= 0.05

    @pytest.mark.slow
    def test_error_shrinks_with_sample_size(self, model, population):
        mean_errors = []
        for n in (200, 657, 5000):
            medians = []
            for seed in range(3):
                data = simulate_data(model, population, n, np.random.default_rng(100 + seed))
                result = fit(model, data, n_starts=1, seed=seed)
                medians.append(np.median(list(_standardized_errors(model, population, result).values())))
            mean_errors.append(np.mean(medians))
        assert mean_errors[0] > mean_errors[1] > mean_errors[2]

    @pytest.mark.slow
    def test_rescaled_columns_give_same_fit(self, model, population):
        data = simulate_data(model, population, 657, np.random.default_rng(5))
        rescaled = data.frame.copy()
        rescaled["Position"] *= 3.0
        rescaled["rubric_Movement"] *= 0.5
        first = fit(model, data, n_starts=1, seed=0)
        second = fit(model, SemData(rescaled), n_starts=1, seed=0)

        assert second.chi2 == pytest.approx(first.chi2, rel=1e-6, abs=1e-6)
        assert second.indices.cfi == pytest.approx(first.indices.cfi, abs=1e-6)
        assert second.indices.tli == pytest.approx(first.indices.tli, abs=1e-6)
        assert second.indices.rmsea == pytest.approx(first.indices.rmsea, abs=1e-6)
        # standardized paths agree up to optimizer tolerance
        assert np.allclose(second.standardized.matrices.beta, first.standardized.matrices.beta, atol=1e-4)
        assert np.allclose(second.standardized.matrices.gamma, first.standardized.matrices.gamma, atol=1e-4)

    def test_saturated_model(self):
        nan = np.nan
        saturated = SemModel(
            y_names=("score",), eta_names=("latent",), xi_names=("input",),
            lambda_y=np.ones((1, 1)), beta=np.zeros((1, 1)), gamma=np.full((1, 1), nan),
            phi=np.full((1, 1), nan), psi=np.full((1, 1), nan), theta=np.zeros((1, 1)),
        )
        data = simulate_data(saturated, np.array([0.5, 1.0, 0.3]), 200, np.random.default_rng(4))
        result = fit(saturated, data, n_starts=1)

        S = data.covariance(saturated.observed_names)
        assert result.df == 0
        assert result.chi2 == pytest.approx(0.0, abs=1e-6)
        assert result.indices is None
        assert result.p_value is None
        assert any("saturated" in w for w in result.warnings)
        assert result.theta[0] == pytest.approx(S[0, 1] / S[1, 1], rel=1e-4)

    def test_gradient_choice_follows_settings(self, monkeypatch):
        import app.services.sem as sem_module

        calls = []
        real = sem_module.ml_gradient

        def counting(*args):
            calls.append(1)
            return real(*args)

        monkeypatch.setattr(sem_module, "ml_gradient", counting)
        rng = np.random.default_rng(6)
        frame = pd.DataFrame({"Memory": rng.normal(size=120)})
        frame["rubric_Dimensions"] = 0.4 * frame["Memory"] + rng.normal(size=120)
        nan = np.nan
        small = SemModel(
            y_names=("rubric_Dimensions",), eta_names=("latent",), xi_names=("Memory",),
            lambda_y=np.ones((1, 1)), beta=np.zeros((1, 1)), gamma=np.full((1, 1), nan),
            phi=np.full((1, 1), nan), psi=np.full((1, 1), nan), theta=np.zeros((1, 1)),
        )

        monkeypatch.setattr(sem_module.settings, "sem_analytic_gradient", False)
        fit(small, SemData(frame), n_starts=1)
        assert calls == []

        monkeypatch.setattr(sem_module.settings, "sem_analytic_gradient", True)
        fit(small, SemData(frame), n_starts=1)
        assert calls

    @pytest.mark.slow
    def test_closed_form_and_numeric_gradients_agree(self, model, population):
        data = simulate_data(model, population, 300, np.random.default_rng(9))
        closed = fit(model, data, n_starts=1, analytic_gradient=True)
        numeric = fit(model, data, n_starts=1, analytic_gradient=False)
        assert closed.chi2 == pytest.approx(numeric.chi2, rel=1e-5)
        assert np.allclose(closed.standardized.matrices.beta, numeric.standardized.matrices.beta, atol=1e-3)

    @pytest.mark.slow
    def test_sample_size_of_a_full_run(self, model, population):
        data = simulate_data(model, population, 657, np.random.default_rng(5))
        result = fit(model, data, seed=2)
        assert result.n == 657
        assert result.chi2 == pytest.approx(result.discrepancy * 656)
        assert 0.0 <= result.p_value <= 1.0
        assert len(result.parameter_table()) == 38
