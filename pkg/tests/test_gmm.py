import math
from pathlib import Path

import numpy as np
import pytest

from spoofbox.errors import (
    ConfigurationError,
    CorruptFileError,
    DimensionMismatchError,
    FingerprintMismatchError,
    InsufficientDataError,
)
from spoofbox.gmm import (
    LOG_2PI,
    GmmModel,
    TrainingOptions,
    avg_log_likelihood,
    frame_log_likelihoods,
    llr_score,
    load_model,
    sample,
    save_model,
    train,
)


def _random_model(rng: np.random.Generator, c: int, d: int, fingerprint: tuple[int, int] = (0, 0)) -> GmmModel:
    weights = rng.random(c) + 0.1
    return GmmModel(
        weights=weights / weights.sum(),
        means=rng.standard_normal((c, d)),
        variances=rng.random((c, d)) + 0.5,
        family_id=fingerprint[0],
        dynamics_id=fingerprint[1],
    )


def _two_clusters() -> np.ndarray:
    rng = np.random.default_rng(42)
    return np.concatenate([rng.normal(-10.0, 1.0, 500), rng.normal(10.0, 1.0, 500)])[:, np.newaxis]


class TestTrainingOptions:
    @pytest.mark.parametrize("field, value", [
        ("n_components", 0),
        ("n_em_iterations", 0),
        ("seed", -1),
        ("variance_floor_factor", 0.0),
        ("workers", 0),
    ])
    def test_rejects_non_positive(self, field: str, value: float):
        with pytest.raises(ConfigurationError, match=field):
            _ = TrainingOptions(**{field: value})

    def test_defaults(self):
        opts = TrainingOptions()
        assert (opts.n_components, opts.n_em_iterations, opts.variance_floor_factor) == (512, 10, 0.01)


class TestTrain:
    @pytest.mark.parametrize("n_frames", [200, 10000])
    @pytest.mark.parametrize("offset", [3.0, 1000.0])
    def test_single_component_closed_form(self, rng: np.random.Generator, n_frames: int, offset: float):
        x = rng.normal(offset, 1.0, size=(n_frames, 3)) * np.array([2.0, 1.0, 0.5])
        model = train(x, TrainingOptions(n_components=1, n_em_iterations=1))
        np.testing.assert_allclose(model.means[0], x.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(model.variances[0], x.var(axis=0), rtol=1e-12)
        assert model.weights[0] == 1.0

    def test_two_separated_clusters(self):
        model = train(_two_clusters(), TrainingOptions(n_components=2, n_em_iterations=10, seed=0))
        order = np.argsort(model.means[:, 0])
        assert model.means[order[0], 0] == pytest.approx(-10.0, abs=0.2)
        assert model.means[order[1], 0] == pytest.approx(10.0, abs=0.2)
        np.testing.assert_allclose(model.weights, 0.5, atol=0.05)

    def test_likelihood_non_decreasing(self, rng: np.random.Generator):
        x = np.vstack([rng.normal(m, 1.0, size=(300, 2)) for m in (-4.0, 0.0, 5.0)])
        history: list[float] = []
        _ = train(x, TrainingOptions(n_components=6, n_em_iterations=10, seed=3), history=history)
        assert len(history) == 11
        assert all(b >= a - 1e-8 for a, b in zip(history, history[1:]))

    def test_simplex_and_variance_floor(self, rng: np.random.Generator):
        x = rng.standard_normal((400, 4)) * np.array([1.0, 10.0, 0.1, 3.0])
        opts = TrainingOptions(n_components=8, n_em_iterations=5, variance_floor_factor=0.05)
        model = train(x, opts)
        assert math.fsum(model.weights) == pytest.approx(1.0, abs=1e-12)
        assert np.all(model.weights >= 0)
        assert np.all(model.variances >= 0.05 * x.var(axis=0) * (1 - 1e-12))

    def test_same_seed_is_bit_identical(self, rng: np.random.Generator):
        x = rng.standard_normal((500, 3))
        opts = TrainingOptions(n_components=4, n_em_iterations=4, seed=11)
        a, b = train(x, opts), train(x, opts)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.variances, b.variances)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_worker_count_does_not_change_result(self, rng: np.random.Generator):
        # spans several E-step chunks
        x = rng.standard_normal((9000, 2))
        serial = train(x, TrainingOptions(n_components=3, n_em_iterations=2, workers=1))
        threaded = train(x, TrainingOptions(n_components=3, n_em_iterations=2, workers=4))
        np.testing.assert_array_equal(serial.means, threaded.means)
        np.testing.assert_array_equal(serial.variances, threaded.variances)

    def test_fewer_frames_than_components(self, rng: np.random.Generator):
        with pytest.raises(InsufficientDataError, match=r"short by 2\); use at most 3 components"):
            _ = train(rng.standard_normal((3, 2)), TrainingOptions(n_components=5))

    def test_non_finite_frames(self):
        x = np.ones((10, 2))
        x[3, 1] = np.nan
        with pytest.raises(DimensionMismatchError, match="non-finite"):
            _ = train(x, TrainingOptions(n_components=1))

    def test_fingerprint_recorded(self, rng: np.random.Generator):
        model = train(rng.standard_normal((50, 2)), TrainingOptions(n_components=2, seed=9), fingerprint=(3, 2))
        assert model.fingerprint == (3, 2)
        assert model.seed == 9


class TestLikelihood:
    def test_log_density_at_mean(self):
        d = 5
        model = GmmModel(np.ones(1), np.full((1, d), 2.0), np.ones((1, d)))
        assert avg_log_likelihood(np.full((1, d), 2.0), model) == pytest.approx(-0.5 * d * LOG_2PI, rel=1e-14)

    def test_duplicated_component(self, rng: np.random.Generator):
        base = _random_model(rng, 3, 4)
        split = GmmModel(
            weights=np.concatenate([base.weights[:1] / 2, base.weights[:1] / 2, base.weights[1:]]),
            means=np.vstack([base.means[:1], base.means[:1], base.means[1:]]),
            variances=np.vstack([base.variances[:1], base.variances[:1], base.variances[1:]]),
        )
        x = rng.standard_normal((20, 4))
        assert avg_log_likelihood(x, split) == pytest.approx(avg_log_likelihood(x, base), abs=1e-12)

    def test_matches_naive_summation(self, rng: np.random.Generator):
        model = _random_model(rng, 2, 3)
        x = rng.standard_normal((5, 3))
        expected = []
        for frame in x:
            total = math.fsum(
                w * math.exp(-0.5 * sum(
                    math.log(2 * math.pi * v) + (xi - m) ** 2 / v for xi, m, v in zip(frame, mean, var)
                ))
                for w, mean, var in zip(model.weights, model.means, model.variances)
            )
            expected.append(math.log(total))
        np.testing.assert_allclose(frame_log_likelihoods(x, model), expected, rtol=1e-10)
        assert avg_log_likelihood(x, model) == pytest.approx(math.fsum(expected) / 5, rel=1e-10)

    def test_dimension_mismatch(self, rng: np.random.Generator):
        with pytest.raises(DimensionMismatchError, match="model expects 3"):
            _ = avg_log_likelihood(np.zeros((2, 4)), _random_model(rng, 2, 3))


class TestLlrScore:
    def test_identical_models_score_zero(self, rng: np.random.Generator):
        model = _random_model(rng, 3, 2)
        assert llr_score(rng.standard_normal((10, 2)), model, model) == 0.0

    def test_favours_the_generating_model(self, rng: np.random.Generator):
        natural = GmmModel(np.ones(1), np.zeros((1, 2)), np.ones((1, 2)))
        synthetic = GmmModel(np.ones(1), np.full((1, 2), 8.0), np.ones((1, 2)))
        assert llr_score(sample(natural, 200, seed=1), natural, synthetic) > 0

    def test_swap_negates_exactly(self, rng: np.random.Generator):
        a, b = _random_model(rng, 3, 2), _random_model(rng, 4, 2)
        x = rng.standard_normal((30, 2))
        assert llr_score(x, a, b) == -llr_score(x, b, a)

    def test_fingerprint_mismatch(self, rng: np.random.Generator):
        a = _random_model(rng, 2, 2, fingerprint=(0, 0))
        b = _random_model(rng, 2, 2, fingerprint=(2, 0))
        with pytest.raises(FingerprintMismatchError):
            _ = llr_score(np.zeros((1, 2)), a, b)


class TestModelFile:
    def test_round_trip(self, rng: np.random.Generator, tmp_path: Path):
        model = GmmModel(
            weights=np.array([0.25, 0.75]),
            means=rng.standard_normal((2, 3)),
            variances=rng.random((2, 3)) + 0.1,
            family_id=4,
            dynamics_id=2,
            seed=123,
        )
        path = tmp_path / "m.gmm"
        save_model(model, path)
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.weights, model.weights)
        np.testing.assert_array_equal(loaded.means, model.means)
        np.testing.assert_array_equal(loaded.variances, model.variances)
        assert (loaded.family_id, loaded.dynamics_id, loaded.seed) == (4, 2, 123)
        assert path.read_bytes()[:4] == b"GMM1"
        assert len(path.read_bytes()) == 22 + 8 * (2 + 2 * 2 * 3)

    def test_truncated(self, rng: np.random.Generator, tmp_path: Path):
        path = tmp_path / "m.gmm"
        save_model(_random_model(rng, 2, 2), path)
        _ = path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CorruptFileError, match="header implies"):
            _ = load_model(path)

    def test_bad_magic(self, rng: np.random.Generator, tmp_path: Path):
        path = tmp_path / "m.gmm"
        save_model(_random_model(rng, 2, 2), path)
        _ = path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(CorruptFileError, match="bad magic"):
            _ = load_model(path)


def test_invalid_weights_rejected():
    with pytest.raises(ConfigurationError, match="sum to 1"):
        _ = GmmModel(np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones((2, 1)))
