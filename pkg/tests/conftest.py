"""
Shared fixtures: seeded random streams and a toy WAV corpus with protocols.
"""

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest
import scipy.signal
from numpy.typing import NDArray

from spoofbox.config import ExperimentConfig
from spoofbox.corpus import write_wav

SAMPLE_RATE = 16000


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def tilted_noise(rng: np.random.Generator, n_samples: int, pole: float, gain: float = 0.1) -> NDArray[np.float64]:
    """White noise through a one-pole filter; pole > 0 tilts energy to low frequencies, pole < 0 to high"""
    white = rng.standard_normal(n_samples)
    shaped = scipy.signal.lfilter([1.0], [1.0, -pole], white)
    return gain * shaped / np.max(np.abs(shaped))


def write_corpus(
    root: Path,
    rng: np.random.Generator,
    n_genuine: int,
    n_spoof: int,
    attacks: tuple[str, ...] = ("S1", "S2", "S3", "S4", "S5"),
    n_samples: int = 4000,
) -> None:
    """Genuine audio is low-tilted noise, spoofed audio high-tilted; one train and one dev protocol"""
    for split, prefix in (("train", "T"), ("dev", "D")):
        lines: list[str] = []
        for i in range(n_genuine):
            utt = f"{prefix}_G{i:04d}"
            write_wav(root / split / f"{utt}.wav", tilted_noise(rng, n_samples, 0.9), SAMPLE_RATE)
            lines.append(f"{utt} {split}/{utt}.wav human -")
        for i in range(n_spoof):
            utt = f"{prefix}_S{i:04d}"
            attack = attacks[i % len(attacks)]
            write_wav(root / split / f"{utt}.wav", tilted_noise(rng, n_samples, -0.9), SAMPLE_RATE)
            lines.append(f"{utt} {split}/{utt}.wav spoof {attack}")
        protocol = root / "protocols" / f"{split}.txt"
        protocol.parent.mkdir(parents=True, exist_ok=True)
        _ = protocol.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture
def corpus_builder(tmp_path: Path, rng: np.random.Generator) -> Callable[..., ExperimentConfig]:
    """Write a toy corpus and return an ExperimentConfig pointing at it"""
    def build(n_genuine: int = 4, n_spoof: int = 5, **overrides: object) -> ExperimentConfig:
        corpus = tmp_path / "corpus"
        write_corpus(corpus, rng, n_genuine, n_spoof)
        config = ExperimentConfig()
        config.corpus_root = str(corpus)
        config.work_dir = str(tmp_path / "work")
        config.workers = 1
        config.n_components = 4
        config.n_em_iterations = 3
        config.update(overrides)
        return config

    return build


@pytest.fixture(autouse=True)
def _reset_root_logging():
    """Drop handlers the CLI installs so they do not outlive the test's captured streams"""
    yield
    import logging
    root = logging.getLogger()
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()
