"""
Diagonal-covariance Gaussian mixture models trained by maximum-likelihood EM,
and the log-likelihood-ratio detector built from a natural/synthetic pair.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from spoofbox.errors import (
    ConfigurationError,
    CorruptFileError,
    DimensionMismatchError,
    FingerprintMismatchError,
    InsufficientDataError,
)
from spoofbox.parallel import map_threads

logger = logging.getLogger("spoofbox")

LOG_2PI = float(np.log(2.0 * np.pi))
# Frames per E-step chunk. Fixed so that sufficient statistics are reduced in
# the same order whatever the worker count.
CHUNK_FRAMES = 4096
EMPTY_COMPONENT_MASS = 1e-8
MIN_VARIANCE = 1e-10
UNBOUND_ID = 255


@dataclass(frozen=True)
class TrainingOptions:
    n_components: int = 512
    n_em_iterations: int = 10
    seed: int = 0
    variance_floor_factor: float = 0.01
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_components < 1:
            raise ConfigurationError(f"n_components must be positive, got {self.n_components}")
        if self.n_em_iterations < 1:
            raise ConfigurationError(f"n_em_iterations must be positive, got {self.n_em_iterations}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        if self.variance_floor_factor <= 0:
            raise ConfigurationError(f"variance_floor_factor must be positive, got {self.variance_floor_factor}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be positive, got {self.workers}")


@dataclass(frozen=True)
class GmmModel:
    weights: NDArray[np.float64]  # C
    means: NDArray[np.float64]  # C x D
    variances: NDArray[np.float64]  # C x D
    family_id: int = UNBOUND_ID
    dynamics_id: int = UNBOUND_ID
    seed: int = 0

    def __post_init__(self) -> None:
        c = len(self.weights)
        if c < 1 or self.means.ndim != 2 or self.means.shape[0] != c or self.variances.shape != self.means.shape:
            raise DimensionMismatchError(
                f"inconsistent GMM shapes: weights {self.weights.shape}, means {self.means.shape}, "
                f"variances {self.variances.shape}"
            )
        if np.any(self.weights < 0) or abs(float(np.sum(self.weights)) - 1.0) > 1e-9:
            raise ConfigurationError("GMM weights must be non-negative and sum to 1")
        if not np.all(self.variances > 0):
            raise ConfigurationError("GMM variances must be strictly positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dimension(self) -> int:
        return int(self.means.shape[1])

    @property
    def fingerprint(self) -> tuple[int, int]:
        return (self.family_id, self.dynamics_id)


def _weighted_log_gaussians(X: NDArray[np.float64], model: GmmModel) -> NDArray[np.float64]:
    """log w_c + log N(x_t; mu_c, diag(var_c)) as a T x C array"""
    precisions = 1.0 / model.variances
    log_det = np.sum(np.log(model.variances), axis=1)
    quadratic = (
        (X ** 2) @ precisions.T
        - 2.0 * (X @ (model.means * precisions).T)
        + np.sum(model.means ** 2 * precisions, axis=1)
    )
    return np.log(model.weights) - 0.5 * (model.dimension * LOG_2PI + log_det + quadratic)


def _chunks(n: int) -> list[slice]:
    return [slice(start, min(start + CHUNK_FRAMES, n)) for start in range(0, n, CHUNK_FRAMES)]


def _check_frames(X: ArrayLike, model: GmmModel | None = None) -> NDArray[np.float64]:
    frames = np.asarray(X, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise DimensionMismatchError(f"expected a non-empty T x D frame matrix, got shape {frames.shape}")
    if model is not None and frames.shape[1] != model.dimension:
        raise DimensionMismatchError(f"features have {frames.shape[1]} dimensions, model expects {model.dimension}")
    return frames


def frame_log_likelihoods(X: ArrayLike, model: GmmModel, workers: int = 1) -> NDArray[np.float64]:
    frames = _check_frames(X, model)
    parts = map_threads(
        lambda s: logsumexp(_weighted_log_gaussians(frames[s], model), axis=1),
        _chunks(frames.shape[0]),
        workers,
    )
    return np.concatenate(parts)


def avg_log_likelihood(X: ArrayLike, model: GmmModel, workers: int = 1) -> float:
    """(1/T) sum_t log sum_c w_c N(x_t; mu_c, var_c)"""
    return float(np.mean(frame_log_likelihoods(X, model, workers)))


def llr_score(X: ArrayLike, natural: GmmModel, synthetic: GmmModel, workers: int = 1) -> float:
    """Average log-likelihood ratio; positive favours natural speech"""
    if natural.fingerprint != synthetic.fingerprint:
        raise FingerprintMismatchError(
            f"natural model was trained on features {natural.fingerprint}, synthetic on {synthetic.fingerprint}"
        )
    return avg_log_likelihood(X, natural, workers) - avg_log_likelihood(X, synthetic, workers)


@dataclass(frozen=True)
class _SufficientStatistics:
    """Per-component occupancy, weighted mean and centred scatter sum(r (x - mean)^2)"""

    occupancy: NDArray[np.float64]
    mean: NDArray[np.float64]
    scatter: NDArray[np.float64]
    log_likelihood: float

    def __add__(self, other: "_SufficientStatistics") -> "_SufficientStatistics":
        # pairwise update of centred moments
        occupancy = self.occupancy + other.occupancy
        share = np.divide(other.occupancy, occupancy, out=np.zeros_like(occupancy), where=occupancy > 0)
        delta = other.mean - self.mean
        return _SufficientStatistics(
            occupancy=occupancy,
            mean=self.mean + delta * share[:, np.newaxis],
            scatter=self.scatter + other.scatter + delta ** 2 * (self.occupancy * share)[:, np.newaxis],
            log_likelihood=self.log_likelihood + other.log_likelihood,
        )


def _expectation(X: NDArray[np.float64], model: GmmModel, workers: int) -> _SufficientStatistics:
    def chunk_statistics(s: slice) -> _SufficientStatistics:
        x = X[s]
        log_prob = _weighted_log_gaussians(x, model)
        log_norm = logsumexp(log_prob, axis=1)
        resp = np.exp(log_prob - log_norm[:, np.newaxis])
        occupancy = np.sum(resp, axis=0)
        mean = np.divide(
            resp.T @ x,
            occupancy[:, np.newaxis],
            out=np.zeros((model.n_components, x.shape[1])),
            where=occupancy[:, np.newaxis] > 0,
        )
        scatter = np.empty_like(mean)
        for component in range(model.n_components):
            deviation = x - mean[component]
            scatter[component] = resp[:, component] @ (deviation * deviation)
        return _SufficientStatistics(
            occupancy=occupancy,
            mean=mean,
            scatter=scatter,
            log_likelihood=float(np.sum(log_norm)),
        )

    parts = map_threads(chunk_statistics, _chunks(X.shape[0]), workers)
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total


def train(
    frames: ArrayLike,
    opts: TrainingOptions,
    fingerprint: tuple[int, int] = (UNBOUND_ID, UNBOUND_ID),
    history: list[float] | None = None,
) -> GmmModel:
    """Fit a C-component diagonal GMM with exactly opts.n_em_iterations EM updates.

    Means start at distinct randomly chosen frames, variances at the global
    variance, weights uniform. Variances are floored at
    variance_floor_factor x global variance after every M-step; a component
    whose occupancy vanishes is reseeded at a random frame.

    If ``history`` is given it receives the training average log-likelihood of
    the initial model and of the model after every iteration.
    """
    X = np.asarray(frames, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimensionMismatchError(f"expected an N x D frame matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DimensionMismatchError("training frames contain non-finite values")
    n_frames, dimension = X.shape
    c = opts.n_components
    if n_frames < c:
        raise InsufficientDataError(
            f"{n_frames} training frames are fewer than {c} components (short by {c - n_frames}); "
            f"use at most {n_frames} components"
        )

    rng = np.random.default_rng(opts.seed)
    global_var = np.var(X, axis=0)
    floor = np.maximum(opts.variance_floor_factor * global_var, MIN_VARIANCE)
    start_var = np.maximum(global_var, floor)
    model = GmmModel(
        weights=np.full(c, 1.0 / c),
        means=X[rng.choice(n_frames, size=c, replace=False)].copy(),
        variances=np.tile(start_var, (c, 1)),
        family_id=fingerprint[0],
        dynamics_id=fingerprint[1],
        seed=opts.seed,
    )
    logger.info(f"Training GMM: {n_frames} frames x {dimension} dims, {c} components, {opts.n_em_iterations} iterations")

    for iteration in range(1, opts.n_em_iterations + 1):
        stats = _expectation(X, model, opts.workers)
        average = stats.log_likelihood / n_frames
        if history is not None:
            history.append(average)
        logger.info(f"EM iteration {iteration}/{opts.n_em_iterations}: average log-likelihood {average:.6f}")

        empty = stats.occupancy < EMPTY_COMPONENT_MASS
        occupancy = np.where(empty, 1.0, stats.occupancy)
        means = stats.mean.copy()
        variances = stats.scatter / occupancy[:, np.newaxis]
        weights = stats.occupancy / n_frames

        n_floored = int(np.sum(variances < floor))
        if n_floored:
            logger.debug(f"EM iteration {iteration}: {n_floored} variances raised to the floor")
        variances = np.maximum(variances, floor)

        for component in np.flatnonzero(empty):
            logger.warning(f"EM iteration {iteration}: component {component} lost its data, reseeding")
            means[component] = X[rng.integers(n_frames)]
            variances[component] = start_var
            weights[component] = 1.0 / c

        model = GmmModel(
            weights=weights / np.sum(weights),
            means=means,
            variances=variances,
            family_id=fingerprint[0],
            dynamics_id=fingerprint[1],
            seed=opts.seed,
        )

    if history is not None:
        history.append(avg_log_likelihood(X, model, opts.workers))
    return model


def sample(model: GmmModel, n_frames: int, seed: int = 0) -> NDArray[np.float64]:
    """Draw frames from the mixture"""
    rng = np.random.default_rng(seed)
    components = rng.choice(model.n_components, size=n_frames, p=model.weights)
    noise = rng.standard_normal((n_frames, model.dimension))
    return model.means[components] + noise * np.sqrt(model.variances[components])


# Model file: magic, u32 C, u32 D, u8 family, u8 dynamics, u64 seed,
# then float64 weights, means and variances (row-major)
MODEL_MAGIC = b"GMM1"
_MODEL_HEADER = struct.Struct("<4sIIBBQ")


def save_model(model: GmmModel, path: Path) -> None:
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC, model.n_components, model.dimension, model.family_id, model.dynamics_id, model.seed
    )
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (model.weights, model.means, model.variances)
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    partial_path = path.parent / (path.name + ".partial")
    _ = partial_path.write_bytes(header + body)
    _ = partial_path.replace(path)
    logger.info(f"Wrote model {path}")


def load_model(path: Path) -> GmmModel:
    payload = path.read_bytes()
    if len(payload) < _MODEL_HEADER.size:
        raise CorruptFileError(f"{path}: model file truncated")
    magic, c, d, family_id, dynamics_id, seed = _MODEL_HEADER.unpack_from(payload)
    if magic != MODEL_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    expected = _MODEL_HEADER.size + 8 * (c + 2 * c * d)
    if len(payload) != expected:
        raise CorruptFileError(f"{path}: holds {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f8", offset=_MODEL_HEADER.size).astype(np.float64)
    try:
        return GmmModel(
            weights=values[:c],
            means=values[c:c + c * d].reshape(c, d),
            variances=values[c + c * d:].reshape(c, d),
            family_id=family_id,
            dynamics_id=dynamics_id,
            seed=seed,
        )
    except (ConfigurationError, DimensionMismatchError) as e:
        raise CorruptFileError(f"{path}: {e}") from e
