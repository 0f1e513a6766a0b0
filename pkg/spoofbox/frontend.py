"""
Signal frontend: framing, Hamming windowing and periodogram power spectra.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
from numpy.typing import NDArray

from spoofbox.errors import ConfigurationError, UtteranceTooShortError

logger = logging.getLogger("spoofbox")

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioBuffer:
    samples: NDArray[np.float64]
    sample_rate: int = DEFAULT_SAMPLE_RATE
    utterance_id: str = ""

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample rate must be positive, got {self.sample_rate}")


@dataclass(frozen=True)
class FrameMatrix:
    frames: NDArray[np.float64]  # T x N
    frame_length: int
    hop: int
    sample_rate: int = DEFAULT_SAMPLE_RATE
    utterance_id: str = ""

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    def start_indices(self) -> NDArray[np.int64]:
        return np.arange(self.n_frames, dtype=np.int64) * self.hop


@dataclass(frozen=True)
class PowerSpectrumSequence:
    spectra: NDArray[np.float64]  # T x (K/2 + 1)
    fft_size: int
    sample_rate: int = DEFAULT_SAMPLE_RATE
    utterance_id: str = ""

    @property
    def n_frames(self) -> int:
        return int(self.spectra.shape[0])

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def bin_frequencies(self) -> NDArray[np.float64]:
        """Center frequency in Hz of every one-sided bin"""
        return bin_frequencies(self.fft_size, self.sample_rate)


@dataclass(frozen=True)
class FrontendOptions:
    frame_ms: float = 20.0
    overlap_fraction: float = 0.5
    pad_to_power_of_two: bool = True
    pre_emphasis: bool = False
    pre_emphasis_coefficient: float = 0.97

    def frame_length(self, sample_rate: int) -> int:
        return int(round(self.frame_ms * sample_rate / 1000.0))

    def fft_size(self, sample_rate: int) -> int:
        n = self.frame_length(sample_rate)
        return next_power_of_two(n) if self.pad_to_power_of_two else n


def next_power_of_two(n: int) -> int:
    """Smallest power of two >= n"""
    if n < 1:
        raise ConfigurationError(f"length must be positive, got {n}")
    return 1 << (n - 1).bit_length()


def bin_frequencies(fft_size: int, sample_rate: int) -> NDArray[np.float64]:
    return np.arange(fft_size // 2 + 1, dtype=np.float64) * sample_rate / fft_size


def frame_signal(audio: AudioBuffer, frame_ms: float = 20.0, overlap_fraction: float = 0.5) -> FrameMatrix:
    """Cut the signal into overlapping frames; a trailing partial frame is dropped."""
    frame_length = int(round(frame_ms * audio.sample_rate / 1000.0))
    if frame_length < 2:
        raise ConfigurationError(f"frame of {frame_ms} ms at {audio.sample_rate} Hz is shorter than 2 samples")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigurationError(f"overlap fraction must lie in [0, 1), got {overlap_fraction}")
    hop = max(1, int(round(frame_length * (1.0 - overlap_fraction))))

    samples = np.asarray(audio.samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ConfigurationError(f"expected mono samples, got array of shape {samples.shape}")
    if len(samples) < frame_length:
        raise UtteranceTooShortError(audio.utterance_id, len(samples), frame_length)

    # T = floor((len - N) / hop) + 1
    windows = np.lib.stride_tricks.sliding_window_view(samples, frame_length)[::hop]
    return FrameMatrix(
        frames=np.ascontiguousarray(windows),
        frame_length=frame_length,
        hop=hop,
        sample_rate=audio.sample_rate,
        utterance_id=audio.utterance_id,
    )


def hamming_window(length: int) -> NDArray[np.float64]:
    """w(n) = 0.54 - 0.46 cos(2 pi n / (N - 1)); exactly symmetric"""
    if length < 2:
        raise ConfigurationError(f"Hamming window needs at least 2 samples, got {length}")
    return np.hamming(length)


def apply_hamming(frames: FrameMatrix) -> FrameMatrix:
    window = hamming_window(frames.frame_length)
    return FrameMatrix(
        frames=frames.frames * window[np.newaxis, :],
        frame_length=frames.frame_length,
        hop=frames.hop,
        sample_rate=frames.sample_rate,
        utterance_id=frames.utterance_id,
    )


def power_spectrum(frames: FrameMatrix, fft_size: int | None = None) -> PowerSpectrumSequence:
    """Periodogram |DFT_K(frame)|^2 / N of every frame, N being the analysis window length.

    Frames are zero-padded to ``fft_size`` (default: next power of two).
    """
    n = frames.frame_length
    if fft_size is None:
        fft_size = next_power_of_two(n)
    if fft_size < n:
        raise ConfigurationError(f"FFT size {fft_size} is smaller than the frame length {n}")

    spectrum = scipy.fft.rfft(frames.frames, n=fft_size, axis=1)
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / n
    return PowerSpectrumSequence(
        spectra=power,
        fft_size=fft_size,
        sample_rate=frames.sample_rate,
        utterance_id=frames.utterance_id,
    )


def pre_emphasize(audio: AudioBuffer, coefficient: float = 0.97) -> AudioBuffer:
    """y[n] = x[n] - a x[n-1], first sample passed through"""
    samples = np.asarray(audio.samples, dtype=np.float64)
    emphasized = np.append(samples[:1], samples[1:] - coefficient * samples[:-1])
    return AudioBuffer(samples=emphasized, sample_rate=audio.sample_rate, utterance_id=audio.utterance_id)


def analyze(audio: AudioBuffer, options: FrontendOptions | None = None) -> PowerSpectrumSequence:
    """Full frontend for one utterance"""
    options = options or FrontendOptions()
    if options.pre_emphasis:
        audio = pre_emphasize(audio, options.pre_emphasis_coefficient)
    frames = frame_signal(audio, options.frame_ms, options.overlap_fraction)
    windowed = apply_hamming(frames)
    spectra = power_spectrum(windowed, options.fft_size(audio.sample_rate))
    logger.debug(f"{audio.utterance_id or '<unnamed>'}: {spectra.n_frames} frames, K={spectra.fft_size}")
    return spectra
