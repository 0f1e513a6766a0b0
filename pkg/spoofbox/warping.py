"""
Frequency warping functions and the triangular filter banks built from them.

Four warps are supported: mel, inverted mel, the corpus-adaptive equal-area
warp (SFCC) and its inverted counterpart. Every warp is a list of
n_filters + 2 boundary frequencies from 0 Hz to Nyquist; filter j has its
edges at boundaries j-1 and j+1 and unit gain at boundary j.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import cumulative_trapezoid

from spoofbox.errors import (
    ConfigurationError,
    CorruptFileError,
    DegenerateSpectrumError,
    DimensionMismatchError,
)
from spoofbox.frontend import PowerSpectrumSequence, bin_frequencies

logger = logging.getLogger("spoofbox")

LOG_FLOOR_RATIO = 1e-10
WARP_FILE_HEADER = "sfcc-warp v1"
WARP_SIGNIFICANT_DIGITS = 9


class WarpKind(Enum):
    MEL = "mel"
    INVERTED_MEL = "inverted-mel"
    SFCC = "sfcc"
    INVERTED_SFCC = "inverted-sfcc"

    @property
    def is_inverted(self) -> bool:
        return self in (WarpKind.INVERTED_MEL, WarpKind.INVERTED_SFCC)

    @property
    def counterpart(self) -> "WarpKind":
        return _COUNTERPARTS[self]


_COUNTERPARTS = {
    WarpKind.MEL: WarpKind.INVERTED_MEL,
    WarpKind.INVERTED_MEL: WarpKind.MEL,
    WarpKind.SFCC: WarpKind.INVERTED_SFCC,
    WarpKind.INVERTED_SFCC: WarpKind.SFCC,
}


def mel_from_hz(f: ArrayLike) -> NDArray[np.float64]:
    """2595 log10(1 + f / 700)"""
    hz = np.asarray(f, dtype=np.float64)
    if np.any(hz < 0):
        raise ConfigurationError(f"mel scale is undefined for negative frequency {np.min(hz)}")
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def hz_from_mel(m: ArrayLike) -> NDArray[np.float64]:
    mel = np.asarray(m, dtype=np.float64)
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


@dataclass(frozen=True)
class WarpingFunction:
    kind: WarpKind
    boundary_freqs: NDArray[np.float64]
    sample_rate: int

    def __post_init__(self) -> None:
        b = np.asarray(self.boundary_freqs, dtype=np.float64)
        if b.ndim != 1 or len(b) < 3:
            raise ConfigurationError(f"a warp needs at least 3 boundaries, got {b.shape}")
        if b[0] != 0.0 or b[-1] != self.nyquist:
            raise ConfigurationError(f"warp boundaries must run from 0 to {self.nyquist} Hz, got {b[0]}..{b[-1]}")
        if np.any(np.diff(b) <= 0):
            raise ConfigurationError("warp boundaries must be strictly increasing")
        object.__setattr__(self, "boundary_freqs", b)

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    @property
    def n_filters(self) -> int:
        return len(self.boundary_freqs) - 2

    def __call__(self, f: ArrayLike) -> NDArray[np.float64]:
        """Warped frequency in [0, 1]: boundary i maps to i / (n_filters + 1)."""
        levels = np.linspace(0.0, 1.0, len(self.boundary_freqs))
        return np.interp(np.asarray(f, dtype=np.float64), self.boundary_freqs, levels)


@dataclass(frozen=True)
class FilterBank:
    weights: NDArray[np.float64]  # n_filters x (K/2 + 1)
    fft_size: int
    sample_rate: int
    kind: WarpKind

    @property
    def n_filters(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.weights.shape[1])

    def peak_bins(self) -> NDArray[np.int64]:
        return np.argmax(self.weights, axis=1)

    def energies(self, spectra: NDArray[np.float64]) -> NDArray[np.float64]:
        """Filter outputs sum_b w[j, b] * P[t, b] for every frame t.

        Products are summed as folded pairs (b, M-1-b) so that reversing both the
        bank and the spectrum gives bit-identical sums.
        """
        power = np.asarray(spectra, dtype=np.float64)
        if power.ndim != 2 or power.shape[1] != self.n_bins:
            raise DimensionMismatchError(f"spectra with shape {power.shape} do not match a bank of {self.n_bins} bins")
        out = np.empty((power.shape[0], self.n_filters), dtype=np.float64)
        half = self.n_bins // 2
        for start in range(0, power.shape[0], _ENERGY_CHUNK):
            chunk = power[start:start + _ENERGY_CHUNK]
            products = chunk[:, np.newaxis, :] * self.weights[np.newaxis, :, :]
            folded = products[:, :, :half] + products[:, :, ::-1][:, :, :half]
            sums = np.sum(folded, axis=2)
            if self.n_bins % 2:
                sums = sums + products[:, :, half]
            out[start:start + _ENERGY_CHUNK] = sums
        return out


_ENERGY_CHUNK = 256


def mel_warp(n_filters: int, sample_rate: int) -> WarpingFunction:
    """Boundaries equally spaced on the mel scale between 0 Hz and Nyquist"""
    if n_filters < 1:
        raise ConfigurationError(f"need at least one filter, got {n_filters}")
    nyquist = sample_rate / 2.0
    mels = np.arange(n_filters + 2, dtype=np.float64) * float(mel_from_hz(nyquist)) / (n_filters + 1)
    hz = hz_from_mel(mels)
    hz[0] = 0.0
    hz[-1] = nyquist
    return WarpingFunction(kind=WarpKind.MEL, boundary_freqs=hz, sample_rate=sample_rate)


def linear_warp(n_filters: int, sample_rate: int, kind: WarpKind = WarpKind.SFCC) -> WarpingFunction:
    nyquist = sample_rate / 2.0
    hz = np.linspace(0.0, nyquist, n_filters + 2)
    hz[-1] = nyquist
    return WarpingFunction(kind=kind, boundary_freqs=hz, sample_rate=sample_rate)


def invert_warp(warp: WarpingFunction) -> WarpingFunction:
    """Reflect the boundaries about half Nyquist and switch to the counterpart kind"""
    flipped = warp.nyquist - warp.boundary_freqs[::-1]
    flipped[0] = 0.0
    flipped[-1] = warp.nyquist
    return WarpingFunction(kind=warp.kind.counterpart, boundary_freqs=flipped, sample_rate=warp.sample_rate)


def _triangular_weights(boundaries: NDArray[np.float64], fft_size: int, sample_rate: int) -> NDArray[np.float64]:
    freqs = bin_frequencies(fft_size, sample_rate)
    lower = boundaries[:-2, np.newaxis]
    center = boundaries[1:-1, np.newaxis]
    upper = boundaries[2:, np.newaxis]
    rising = (freqs[np.newaxis, :] - lower) / (center - lower)
    falling = (upper - freqs[np.newaxis, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def build_warped_filterbank(warp: WarpingFunction, fft_size: int, sample_rate: int) -> FilterBank:
    """Triangular bank on the warp's boundaries, evaluated at bin center frequencies.

    Inverted warps are realized by flipping the bank of their counterpart, which is
    what applying the bank to the reversed spectrum amounts to.
    """
    if warp.sample_rate != sample_rate:
        raise ConfigurationError(f"warp was built for {warp.sample_rate} Hz, not {sample_rate} Hz")
    if fft_size < 2:
        raise ConfigurationError(f"invalid FFT size {fft_size}")
    if warp.kind.is_inverted:
        return invert_filterbank(build_warped_filterbank(invert_warp(warp), fft_size, sample_rate))

    weights = _triangular_weights(warp.boundary_freqs, fft_size, sample_rate)
    empty = np.flatnonzero(~np.any(weights > 0.0, axis=1))
    if len(empty):
        raise ConfigurationError(
            f"{warp.n_filters} filters are too many for a {fft_size}-point FFT: "
            f"filter(s) {', '.join(str(j + 1) for j in empty)} cover no bin"
        )
    return FilterBank(weights=weights, fft_size=fft_size, sample_rate=sample_rate, kind=warp.kind)


def build_mel_filterbank(n_filters: int, fft_size: int, sample_rate: int) -> FilterBank:
    return build_warped_filterbank(mel_warp(n_filters, sample_rate), fft_size, sample_rate)


def invert_filterbank(bank: FilterBank) -> FilterBank:
    """Filter j of the result is filter n+1-j of the input read from Nyquist downwards.

    Reversing the filter order keeps the result sorted by ascending peak.
    """
    return FilterBank(
        weights=np.ascontiguousarray(bank.weights[::-1, ::-1]),
        fft_size=bank.fft_size,
        sample_rate=bank.sample_rate,
        kind=bank.kind.counterpart,
    )


@dataclass
class EnsembleSpectrum:
    """Corpus-wide accumulator of per-frame periodograms.

    Per-utterance column sums are kept apart and combined with an exactly rounded
    sum, so the mean does not depend on the order utterances arrive in.
    """
    fft_size: int
    sample_rate: int
    partial_sums: list[NDArray[np.float64]] = field(default_factory=list)
    n_frames_accumulated: int = 0

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def mean_power(self) -> NDArray[np.float64]:
        if self.n_frames_accumulated <= 0:
            raise DegenerateSpectrumError("ensemble spectrum degenerate: no frames accumulated")
        stacked = np.vstack(self.partial_sums)
        total = np.array([math.fsum(column) for column in stacked.T], dtype=np.float64)
        return total / self.n_frames_accumulated

    def merge(self, other: "EnsembleSpectrum") -> "EnsembleSpectrum":
        if (other.fft_size, other.sample_rate) != (self.fft_size, self.sample_rate):
            raise DimensionMismatchError(
                f"cannot merge ensembles of K={other.fft_size}/{other.sample_rate} Hz "
                f"into K={self.fft_size}/{self.sample_rate} Hz"
            )
        return EnsembleSpectrum(
            fft_size=self.fft_size,
            sample_rate=self.sample_rate,
            partial_sums=self.partial_sums + other.partial_sums,
            n_frames_accumulated=self.n_frames_accumulated + other.n_frames_accumulated,
        )


def accumulate_ensemble(spectra: PowerSpectrumSequence, acc: EnsembleSpectrum) -> EnsembleSpectrum:
    if (spectra.fft_size, spectra.sample_rate) != (acc.fft_size, acc.sample_rate):
        raise DimensionMismatchError(
            f"utterance {spectra.utterance_id or '<unnamed>'} has K={spectra.fft_size} at {spectra.sample_rate} Hz, "
            f"ensemble expects K={acc.fft_size} at {acc.sample_rate} Hz"
        )
    part = EnsembleSpectrum(
        fft_size=acc.fft_size,
        sample_rate=acc.sample_rate,
        partial_sums=[np.sum(spectra.spectra, axis=0)],
        n_frames_accumulated=spectra.n_frames,
    )
    return acc.merge(part)


def _partition_integrand(ens: EnsembleSpectrum) -> NDArray[np.float64]:
    """Floored log of the ensemble mean, shifted so its minimum is zero"""
    mean = ens.mean_power
    peak = float(np.max(mean)) if mean.size else 0.0
    if not math.isfinite(peak) or peak <= 0.0:
        raise DegenerateSpectrumError("ensemble spectrum degenerate: mean power is zero everywhere")
    log_power = np.log(np.maximum(mean, LOG_FLOOR_RATIO * peak))
    return log_power - np.min(log_power)


def _quantize(values: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.array([float(f"{v:.{WARP_SIGNIFICANT_DIGITS}g}") for v in values], dtype=np.float64)


def estimate_sfcc_warp(ens: EnsembleSpectrum, n_filters: int) -> WarpingFunction:
    """Split the log ensemble spectrum into n_filters + 1 intervals of equal area.

    The cumulative trapezoidal integral over the bins is inverted by linear
    interpolation; boundaries are rounded to the precision of the warp file.
    """
    if n_filters < 1:
        raise ConfigurationError(f"need at least one filter, got {n_filters}")
    integrand = _partition_integrand(ens)
    freqs = bin_frequencies(ens.fft_size, ens.sample_rate)
    nyquist = ens.sample_rate / 2.0
    cumulative = cumulative_trapezoid(integrand, freqs, initial=0.0)
    total = float(cumulative[-1])

    if total <= 0.0:
        # constant integrand: equal area is equal width
        logger.info("Ensemble log spectrum is flat; SFCC warp reduces to linear spacing")
        return linear_warp(n_filters, ens.sample_rate, WarpKind.SFCC)

    targets = np.arange(1, n_filters + 1, dtype=np.float64) * total / (n_filters + 1)
    upper = np.searchsorted(cumulative, targets, side="left")
    lower = upper - 1
    fraction = (targets - cumulative[lower]) / (cumulative[upper] - cumulative[lower])
    inner = freqs[lower] + fraction * (freqs[upper] - freqs[lower])

    boundaries = _quantize(np.concatenate(([0.0], inner, [nyquist])))
    boundaries[0] = 0.0
    boundaries[-1] = nyquist
    warp = WarpingFunction(kind=WarpKind.SFCC, boundary_freqs=boundaries, sample_rate=ens.sample_rate)
    logger.info(
        f"Estimated SFCC warp from {ens.n_frames_accumulated} frames: "
        f"{n_filters} filters, first inner boundary {boundaries[1]:.1f} Hz, last {boundaries[-2]:.1f} Hz"
    )
    return warp


def warp_interval_areas(ens: EnsembleSpectrum, warp: WarpingFunction) -> NDArray[np.float64]:
    """Area of the partition integrand inside each consecutive boundary interval"""
    if warp.sample_rate != ens.sample_rate:
        raise DimensionMismatchError(f"warp is for {warp.sample_rate} Hz, ensemble for {ens.sample_rate} Hz")
    freqs = bin_frequencies(ens.fft_size, ens.sample_rate)
    cumulative = cumulative_trapezoid(_partition_integrand(ens), freqs, initial=0.0)
    return np.diff(np.interp(warp.boundary_freqs, freqs, cumulative))


def save_warp(warp: WarpingFunction, path: Path) -> None:
    """Write the warp atomically: header line then one boundary per line"""
    if warp.kind is not WarpKind.SFCC:
        raise ConfigurationError(f"only SFCC warps are stored in warp files, got {warp.kind.value}")
    lines = [f"{WARP_FILE_HEADER} {warp.n_filters} {warp.sample_rate}"]
    lines.extend(f"{v:.{WARP_SIGNIFICANT_DIGITS}g}" for v in warp.boundary_freqs)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial_path = path.parent / (path.name + ".partial")
    _ = partial_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _ = partial_path.replace(path)
    logger.info(f"Wrote warp file {path}")


def load_warp(path: Path) -> WarpingFunction:
    text = path.read_text(encoding="utf-8")
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith(WARP_FILE_HEADER + " "):
        raise CorruptFileError(f"{path}: missing '{WARP_FILE_HEADER}' header")
    try:
        n_filters_str, sample_rate_str = lines[0][len(WARP_FILE_HEADER):].split()
        n_filters = int(n_filters_str)
        sample_rate = int(sample_rate_str)
        boundaries = np.array([float(v) for v in lines[1:]], dtype=np.float64)
    except ValueError as e:
        raise CorruptFileError(f"{path}: {e}") from e
    if len(boundaries) != n_filters + 2:
        raise CorruptFileError(f"{path}: header declares {n_filters} filters but file holds {len(boundaries)} boundaries")
    try:
        return WarpingFunction(kind=WarpKind.SFCC, boundary_freqs=boundaries, sample_rate=sample_rate)
    except ConfigurationError as e:
        raise CorruptFileError(f"{path}: {e}") from e
