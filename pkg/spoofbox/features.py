"""
Cepstral feature families.

MFCC/IMFCC/SFCC/ISFCC apply a full-band DCT to filter-bank log energies;
MOBT/IMOBT/SOBT/ISOBT apply a separate DCT to each (possibly overlapping)
block of filters. Any family can be emitted static, static plus deltas, or
deltas only.
"""

import logging
import struct
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.fft
from numpy.typing import NDArray

from spoofbox.errors import ConfigurationError, CorruptFileError, DimensionMismatchError
from spoofbox.frontend import PowerSpectrumSequence
from spoofbox.warping import (
    FilterBank,
    WarpingFunction,
    WarpKind,
    build_mel_filterbank,
    build_warped_filterbank,
    invert_filterbank,
)

logger = logging.getLogger("spoofbox")

LOG_ENERGY_FLOOR = 1e-10


class FeatureFamily(Enum):
    # values are the ids used in cache and model files
    MFCC = 0
    IMFCC = 1
    SFCC = 2
    ISFCC = 3
    MOBT = 4
    IMOBT = 5
    SOBT = 6
    ISOBT = 7

    @property
    def is_block(self) -> bool:
        return self in (FeatureFamily.MOBT, FeatureFamily.IMOBT, FeatureFamily.SOBT, FeatureFamily.ISOBT)

    @property
    def bank_kind(self) -> WarpKind:
        return _BANK_KINDS[self]

    @property
    def needs_warp(self) -> bool:
        return self.bank_kind in (WarpKind.SFCC, WarpKind.INVERTED_SFCC)

    @classmethod
    def parse(cls, name: str) -> "FeatureFamily":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ConfigurationError(f"unknown feature family '{name}' (expected one of {', '.join(f.name for f in cls)})") from None


_BANK_KINDS = {
    FeatureFamily.MFCC: WarpKind.MEL,
    FeatureFamily.MOBT: WarpKind.MEL,
    FeatureFamily.IMFCC: WarpKind.INVERTED_MEL,
    FeatureFamily.IMOBT: WarpKind.INVERTED_MEL,
    FeatureFamily.SFCC: WarpKind.SFCC,
    FeatureFamily.SOBT: WarpKind.SFCC,
    FeatureFamily.ISFCC: WarpKind.INVERTED_SFCC,
    FeatureFamily.ISOBT: WarpKind.INVERTED_SFCC,
}


class Dynamics(Enum):
    STATIC = 0
    STATIC_DELTAS = 1
    DELTAS_ONLY = 2

    @property
    def label(self) -> str:
        return _DYNAMICS_LABELS[self]

    @property
    def width(self) -> int:
        """Output width as a multiple of the static width"""
        return {Dynamics.STATIC: 1, Dynamics.STATIC_DELTAS: 3, Dynamics.DELTAS_ONLY: 2}[self]

    @classmethod
    def parse(cls, name: str) -> "Dynamics":
        key = name.strip().lower()
        for dynamics, label in _DYNAMICS_LABELS.items():
            if key in (label, dynamics.name.lower()):
                return dynamics
        raise ConfigurationError(f"unknown dynamics '{name}' (expected one of {', '.join(_DYNAMICS_LABELS.values())})")


_DYNAMICS_LABELS = {
    Dynamics.STATIC: "static",
    Dynamics.STATIC_DELTAS: "static+deltas",
    Dynamics.DELTAS_ONLY: "deltas",
}


@dataclass(frozen=True)
class BlockSpec:
    """Inclusive, 1-based (start, end) filter ranges; overlaps allowed"""
    blocks: tuple[tuple[int, int], ...] = ((1, 7), (6, 20))

    @property
    def dimension(self) -> int:
        return sum(end - start + 1 for start, end in self.blocks)

    def validate(self, n_filters: int) -> None:
        if not self.blocks:
            raise ConfigurationError("block spec has no blocks")
        covered: set[int] = set()
        for start, end in self.blocks:
            if start < 1 or end > n_filters:
                raise ConfigurationError(f"block {start}-{end} is out of range for {n_filters} filters")
            if end < start:
                raise ConfigurationError(f"block {start}-{end} is empty")
            covered.update(range(start, end + 1))
        missing = sorted(set(range(1, n_filters + 1)) - covered)
        if missing:
            raise ConfigurationError(f"block spec leaves filters {missing} uncovered")

    def __str__(self) -> str:
        return ",".join(f"{start}-{end}" for start, end in self.blocks)

    @classmethod
    def parse(cls, text: str) -> "BlockSpec":
        blocks: list[tuple[int, int]] = []
        try:
            for part in text.split(","):
                start, end = part.strip().split("-")
                blocks.append((int(start), int(end)))
        except ValueError:
            raise ConfigurationError(f"cannot parse block spec '{text}' (expected e.g. '1-7,6-20')") from None
        return cls(blocks=tuple(blocks))


@dataclass(frozen=True)
class FeatureConfig:
    family: FeatureFamily
    dynamics: Dynamics = Dynamics.STATIC
    n_filters: int = 20
    n_ceps: int = 20
    block_spec: BlockSpec | None = field(default=None)

    def __post_init__(self) -> None:
        if self.family.is_block and self.block_spec is None:
            object.__setattr__(self, "block_spec", BlockSpec())
        if not self.family.is_block and self.block_spec is not None:
            raise ConfigurationError(f"{self.family.name} is a full-band family and takes no block spec")
        if self.n_filters < 1:
            raise ConfigurationError(f"need at least one filter, got {self.n_filters}")
        if not 1 <= self.n_ceps <= self.n_filters:
            raise ConfigurationError(f"n_ceps={self.n_ceps} must lie in 1..n_filters={self.n_filters}")
        if self.block_spec is not None:
            self.block_spec.validate(self.n_filters)

    @property
    def static_dimension(self) -> int:
        if self.block_spec is not None:
            return self.block_spec.dimension
        return self.n_ceps

    @property
    def dimension(self) -> int:
        return self.static_dimension * self.dynamics.width

    @property
    def fingerprint(self) -> tuple[int, int]:
        return (self.family.value, self.dynamics.value)

    @property
    def name(self) -> str:
        return f"{self.family.name}_{self.dynamics.label}"


@dataclass(frozen=True)
class FeatureMatrix:
    values: NDArray[np.float64]  # T x D
    config: FeatureConfig
    utterance_id: str = ""

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != self.config.dimension:
            raise DimensionMismatchError(
                f"{self.config.name} expects {self.config.dimension} columns, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DimensionMismatchError(f"non-finite feature values in {self.utterance_id or '<unnamed>'}")

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])


def filterbank_log_energies(spectra: PowerSpectrumSequence, bank: FilterBank) -> NDArray[np.float64]:
    """ln(max(filter energy, 1e-10)) per frame and filter"""
    if spectra.fft_size != bank.fft_size:
        raise DimensionMismatchError(f"spectra use K={spectra.fft_size} but the bank was built for K={bank.fft_size}")
    return np.log(np.maximum(bank.energies(spectra.spectra), LOG_ENERGY_FLOOR))


def dct_full(log_energies: NDArray[np.float64], n_ceps: int) -> NDArray[np.float64]:
    n_filters = log_energies.shape[1]
    if not 1 <= n_ceps <= n_filters:
        raise ConfigurationError(f"n_ceps={n_ceps} must lie in 1..{n_filters}")
    return scipy.fft.dct(log_energies, type=2, norm="ortho", axis=1)[:, :n_ceps]


def dct_block(log_energies: NDArray[np.float64], spec: BlockSpec) -> NDArray[np.float64]:
    """Orthonormal DCT-II of each block's slice, all coefficients kept, blocks concatenated"""
    n_filters = log_energies.shape[1]
    spec.validate(n_filters)
    return np.hstack([
        scipy.fft.dct(log_energies[:, start - 1:end], type=2, norm="ortho", axis=1)
        for start, end in spec.blocks
    ])


def compute_delta(features: NDArray[np.float64], half_width: int = 1) -> NDArray[np.float64]:
    """Regression delta over 2k+1 frames with edge frames replicated.

    For k = 1 this is (c[t+1] - c[t-1]) / 2.
    """
    if half_width < 1:
        raise ConfigurationError(f"delta half width must be positive, got {half_width}")
    padded = np.pad(features, ((half_width, half_width), (0, 0)), mode="edge")
    n_frames = features.shape[0]
    delta = np.zeros_like(features, dtype=np.float64)
    for k in range(1, half_width + 1):
        delta += k * (padded[half_width + k:half_width + k + n_frames] - padded[half_width - k:half_width - k + n_frames])
    return delta / (2 * sum(k * k for k in range(1, half_width + 1)))


def append_dynamics(static: NDArray[np.float64], mode: Dynamics) -> NDArray[np.float64]:
    if static.shape[0] < 1:
        raise DimensionMismatchError("cannot compute dynamics of an empty feature sequence")
    if mode is Dynamics.STATIC:
        return static
    delta = compute_delta(static)
    delta_delta = compute_delta(delta)
    if mode is Dynamics.STATIC_DELTAS:
        return np.hstack([static, delta, delta_delta])
    return np.hstack([delta, delta_delta])


def extract(spectra: PowerSpectrumSequence, config: FeatureConfig, bank: FilterBank) -> FeatureMatrix:
    if bank.kind is not config.family.bank_kind:
        raise ConfigurationError(
            f"{config.family.name} needs a {config.family.bank_kind.value} filter bank, got {bank.kind.value}"
        )
    if bank.n_filters != config.n_filters:
        raise ConfigurationError(f"{config.name} expects {config.n_filters} filters, bank has {bank.n_filters}")
    log_energies = filterbank_log_energies(spectra, bank)
    if config.block_spec is not None:
        static = dct_block(log_energies, config.block_spec)
    else:
        static = dct_full(log_energies, config.n_ceps)
    return FeatureMatrix(
        values=append_dynamics(static, config.dynamics),
        config=config,
        utterance_id=spectra.utterance_id,
    )


class FeatureExtractor:
    """Resolves and memoizes the filter banks the requested families need"""

    def __init__(self, n_filters: int = 20, warp: WarpingFunction | None = None):
        self.n_filters: int = n_filters
        self.warp: WarpingFunction | None = warp
        self._banks: dict[tuple[WarpKind, int, int], FilterBank] = {}
        if warp is not None and warp.n_filters != n_filters:
            raise ConfigurationError(f"warp has {warp.n_filters} filters, features expect {n_filters}")

    def bank(self, kind: WarpKind, fft_size: int, sample_rate: int) -> FilterBank:
        key = (kind, fft_size, sample_rate)
        if key not in self._banks:
            self._banks[key] = self._build(kind, fft_size, sample_rate)
        return self._banks[key]

    def prepare(self, configs: Iterable[FeatureConfig], fft_size: int, sample_rate: int) -> "FeatureExtractor":
        """Build every bank ``configs`` need up front, so copies sent to workers carry them"""
        for config in configs:
            _ = self.bank(config.family.bank_kind, fft_size, sample_rate)
        return self

    def _build(self, kind: WarpKind, fft_size: int, sample_rate: int) -> FilterBank:
        if kind is WarpKind.MEL:
            return build_mel_filterbank(self.n_filters, fft_size, sample_rate)
        if kind is WarpKind.INVERTED_MEL:
            return invert_filterbank(self.bank(WarpKind.MEL, fft_size, sample_rate))
        if self.warp is None:
            raise ConfigurationError(f"{kind.value} features need an SFCC warp; none was supplied")
        if kind is WarpKind.SFCC:
            return build_warped_filterbank(self.warp, fft_size, sample_rate)
        return invert_filterbank(self.bank(WarpKind.SFCC, fft_size, sample_rate))

    def extract(self, spectra: PowerSpectrumSequence, config: FeatureConfig) -> FeatureMatrix:
        bank = self.bank(config.family.bank_kind, spectra.fft_size, spectra.sample_rate)
        return extract(spectra, config, bank)


# Feature cache file: magic, u32 T, u32 D, u8 family, u8 dynamics, T*D float32 row-major
CACHE_MAGIC = b"FTR1"
_CACHE_HEADER = struct.Struct("<4sIIBB")


def encode_features(features: FeatureMatrix) -> bytes:
    n_frames, dimension = features.values.shape
    header = _CACHE_HEADER.pack(CACHE_MAGIC, n_frames, dimension, features.config.family.value, features.config.dynamics.value)
    return header + features.values.astype("<f4").tobytes(order="C")


def decode_features(
    payload: bytes,
    utterance_id: str = "",
    n_filters: int = 20,
    n_ceps: int = 20,
    block_spec: BlockSpec | None = None,
) -> FeatureMatrix:
    if len(payload) < _CACHE_HEADER.size:
        raise CorruptFileError(f"feature cache for {utterance_id or '<unnamed>'} is truncated ({len(payload)} bytes)")
    magic, n_frames, dimension, family_id, dynamics_id = _CACHE_HEADER.unpack_from(payload)
    if magic != CACHE_MAGIC:
        raise CorruptFileError(f"feature cache for {utterance_id or '<unnamed>'} has bad magic {magic!r}")
    expected = _CACHE_HEADER.size + 4 * n_frames * dimension
    if len(payload) != expected:
        raise CorruptFileError(
            f"feature cache for {utterance_id or '<unnamed>'} holds {len(payload)} bytes, header implies {expected}"
        )
    try:
        family = FeatureFamily(family_id)
        dynamics = Dynamics(dynamics_id)
    except ValueError as e:
        raise CorruptFileError(f"feature cache for {utterance_id or '<unnamed>'}: {e}") from e
    config = FeatureConfig(
        family=family,
        dynamics=dynamics,
        n_filters=n_filters,
        n_ceps=n_ceps,
        block_spec=(block_spec or BlockSpec()) if family.is_block else None,
    )
    values = np.frombuffer(payload, dtype="<f4", offset=_CACHE_HEADER.size).reshape(n_frames, dimension)
    return FeatureMatrix(values=values.astype(np.float64), config=config, utterance_id=utterance_id)


def write_features(features: FeatureMatrix, path: Path) -> bytes:
    """Write atomically (temp file then rename); returns the bytes written"""
    payload = encode_features(features)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial_path = path.parent / (path.name + ".partial")
    _ = partial_path.write_bytes(payload)
    _ = partial_path.replace(path)
    return payload


def read_features(
    path: Path,
    utterance_id: str = "",
    n_filters: int = 20,
    n_ceps: int = 20,
    block_spec: BlockSpec | None = None,
) -> FeatureMatrix:
    return decode_features(path.read_bytes(), utterance_id, n_filters, n_ceps, block_spec)
