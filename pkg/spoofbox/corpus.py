"""
Corpus plumbing: WAV input, protocol files and the feature cache.
"""

import csv
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.io.wavfile
from numpy.typing import NDArray

from spoofbox.errors import AudioFormatError, CorruptFileError, MissingInputError, ProtocolError
from spoofbox.evaluation import ATTACKS, NO_ATTACK, Label
from spoofbox.features import (
    BlockSpec,
    Dynamics,
    FeatureConfig,
    FeatureFamily,
    FeatureMatrix,
    decode_features,
    write_features,
)
from spoofbox.frontend import AudioBuffer

logger = logging.getLogger("spoofbox")

PCM16_SCALE = 32768.0
# protocol label column -> label
PROTOCOL_LABELS = {"human": Label.GENUINE, "spoof": Label.SPOOF}


class Split(Enum):
    TRAIN = "train"
    DEV = "dev"


def read_wav(path: Path, utterance_id: str = "") -> AudioBuffer:
    """16-bit PCM mono WAV scaled to [-1, 1) by 1/32768"""
    try:
        sample_rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise MissingInputError(f"audio file not found: {path}") from None
    except ValueError as e:
        raise AudioFormatError(f"{path}: unsupported or malformed WAV file ({e})") from e
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: unsupported channel count: {data.shape[1]}")
    if data.dtype != np.int16:
        raise AudioFormatError(f"{path}: unsupported sample format: {data.dtype} (expected 16-bit PCM)")
    return AudioBuffer(
        samples=data.astype(np.float64) / PCM16_SCALE,
        sample_rate=int(sample_rate),
        utterance_id=utterance_id or path.stem,
    )


def write_wav(path: Path, samples: NDArray[np.float64], sample_rate: int = 16000) -> None:
    """Write mono 16-bit PCM, clipping to the representable range"""
    pcm = np.clip(np.round(np.asarray(samples) * PCM16_SCALE), -32768, 32767).astype(np.int16)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.wavfile.write(path, sample_rate, pcm)


@dataclass(frozen=True)
class ProtocolEntry:
    utterance_id: str
    audio_path: Path
    label: Label
    attack: str | None
    split: Split


def parse_protocol(path: Path, split: Split, corpus_root: Path | None = None, check_paths: bool = False) -> list[ProtocolEntry]:
    """Whitespace-delimited lines: utt_id, relative_audio_path, human|spoof, S1..S5|-

    Audio paths are resolved against ``corpus_root`` (default: the protocol's
    directory). With ``check_paths`` every file must exist.
    """
    root = corpus_root if corpus_root is not None else path.parent
    entries: list[ProtocolEntry] = []
    seen: set[str] = set()
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingInputError(f"protocol file not found: {path}") from None

    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 4:
            raise ProtocolError(f"{path}: expected 4 fields, got {len(fields)}", line_number)
        utt_id, audio, label_name, attack = fields
        if label_name not in PROTOCOL_LABELS:
            raise ProtocolError(f"{path}: unknown label '{label_name}' (expected human or spoof)", line_number)
        label = PROTOCOL_LABELS[label_name]
        if attack != NO_ATTACK and attack not in ATTACKS:
            raise ProtocolError(f"{path}: unknown attack tag '{attack}'", line_number)
        if label is Label.GENUINE and attack != NO_ATTACK:
            raise ProtocolError(f"{path}: genuine utterance {utt_id} carries attack tag {attack}", line_number)
        if label is Label.SPOOF and attack == NO_ATTACK:
            raise ProtocolError(f"{path}: spoofed utterance {utt_id} has no attack tag", line_number)
        if utt_id in seen:
            raise ProtocolError(f"{path}: duplicate utterance id {utt_id}", line_number)
        seen.add(utt_id)
        audio_path = root / audio
        if check_paths and not audio_path.exists():
            raise ProtocolError(f"{path}: audio file {audio_path} does not exist", line_number)
        entries.append(ProtocolEntry(
            utterance_id=utt_id,
            audio_path=audio_path,
            label=label,
            attack=None if attack == NO_ATTACK else attack,
            split=split,
        ))

    counts = summarize_protocol(entries)
    logger.info(f"Protocol {path.name} ({split.value}): {len(entries)} entries, "
                + ", ".join(f"{key}={count}" for key, count in sorted(counts.items())))
    return entries


def summarize_protocol(entries: list[ProtocolEntry]) -> Counter[str]:
    """Counts by label and by attack tag"""
    counts: Counter[str] = Counter()
    for entry in entries:
        counts[entry.label.value] += 1
        if entry.attack:
            counts[entry.attack] += 1
    return counts


def convert_asvspoof2015_protocol(source: Path, destination: Path, audio_dir: str, extension: str = ".wav") -> int:
    """Rewrite release protocol lines '<speaker> <utt> <human|S1..S5> <human|spoof>' in repo format.

    Returns the number of entries written.
    """
    try:
        text = source.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingInputError(f"protocol file not found: {source}") from None
    rows: list[str] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 4:
            raise ProtocolError(f"{source}: expected 4 fields, got {len(fields)}", line_number)
        _speaker, utt_id, system, label = fields
        if label not in PROTOCOL_LABELS:
            raise ProtocolError(f"{source}: unknown label '{label}'", line_number)
        attack = NO_ATTACK if label == "human" else system
        rows.append(f"{utt_id} {audio_dir.rstrip('/')}/{utt_id}{extension} {label} {attack}")
    destination.parent.mkdir(parents=True, exist_ok=True)
    _ = destination.write_text("\n".join(rows) + "\n", encoding="utf-8")
    logger.info(f"Converted {len(rows)} protocol entries {source} -> {destination}")
    return len(rows)


def digest_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class CacheRecord:
    utterance_id: str
    family: FeatureFamily
    dynamics: Dynamics
    path: Path
    digest: str


def cache_path(root: Path, utterance_id: str, family: FeatureFamily, dynamics: Dynamics) -> Path:
    return root / family.name / dynamics.label / f"{utterance_id}.ftr"


def store_features(root: Path, features: FeatureMatrix) -> CacheRecord:
    """Write one cache file and describe it; safe to call from worker processes"""
    family, dynamics = features.config.family, features.config.dynamics
    path = cache_path(root, features.utterance_id, family, dynamics)
    payload = write_features(features, path)
    return CacheRecord(features.utterance_id, family, dynamics, path, digest_bytes(payload))


class FeatureCache:
    """One binary feature file per (utterance, family, dynamics) plus a TSV manifest.

    Layout: <root>/<FAMILY>/<dynamics>/<utt>.ftr and <root>/manifest.tsv with
    columns utt_id, family id, dynamics id, path (relative to root), sha256.
    """

    MANIFEST_NAME = "manifest.tsv"

    def __init__(self, root: Path, n_filters: int = 20, n_ceps: int = 20, block_spec: BlockSpec | None = None):
        self.root: Path = root
        self.n_filters: int = n_filters
        self.n_ceps: int = n_ceps
        self.block_spec: BlockSpec = block_spec or BlockSpec()
        self.records: dict[tuple[str, FeatureFamily, Dynamics], CacheRecord] = {}
        self.root.mkdir(parents=True, exist_ok=True)
        self.load_manifest()

    @property
    def manifest_path(self) -> Path:
        return self.root / self.MANIFEST_NAME

    def path_for(self, utterance_id: str, family: FeatureFamily, dynamics: Dynamics) -> Path:
        return cache_path(self.root, utterance_id, family, dynamics)

    def load_manifest(self) -> None:
        self.records = {}
        if not self.manifest_path.exists():
            return
        with open(self.manifest_path, "r", newline="", encoding="utf-8") as f:
            for line_number, row in enumerate(csv.reader(f, delimiter="\t"), start=1):
                if not row:
                    continue
                try:
                    utt_id, family_id, dynamics_id, rel_path, digest = row
                    family = FeatureFamily(int(family_id))
                    dynamics = Dynamics(int(dynamics_id))
                except ValueError as e:
                    raise CorruptFileError(f"{self.manifest_path}: line {line_number}: {e}") from e
                self.records[(utt_id, family, dynamics)] = CacheRecord(utt_id, family, dynamics, self.root / rel_path, digest)

    def save_manifest(self) -> None:
        """Rewrite the manifest atomically, sorted by utterance then configuration"""
        partial_path = self.manifest_path.parent / (self.manifest_path.name + ".partial")
        ordered = sorted(self.records.values(), key=lambda r: (r.utterance_id, r.family.value, r.dynamics.value))
        with open(partial_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, delimiter="\t", lineterminator="\n")
            for record in ordered:
                writer.writerow([
                    record.utterance_id,
                    record.family.value,
                    record.dynamics.value,
                    record.path.relative_to(self.root).as_posix(),
                    record.digest,
                ])
        _ = partial_path.replace(self.manifest_path)

    def store(self, features: FeatureMatrix) -> CacheRecord:
        record = store_features(self.root, features)
        self.add_record(record)
        return record

    def add_record(self, record: CacheRecord) -> None:
        self.records[(record.utterance_id, record.family, record.dynamics)] = record

    def is_valid(self, utterance_id: str, family: FeatureFamily, dynamics: Dynamics) -> bool:
        """True when the entry is in the manifest and its file matches the recorded digest"""
        record = self.records.get((utterance_id, family, dynamics))
        if record is None or not record.path.exists():
            return False
        return digest_bytes(record.path.read_bytes()) == record.digest

    def load(self, utterance_id: str, family: FeatureFamily, dynamics: Dynamics) -> FeatureMatrix:
        record = self.records.get((utterance_id, family, dynamics))
        if record is None:
            raise MissingInputError(
                f"no cached {family.name}/{dynamics.label} features for {utterance_id}; run 'extract' first"
            )
        try:
            payload = record.path.read_bytes()
        except FileNotFoundError:
            raise MissingInputError(f"cache file {record.path} is missing; run 'extract' again") from None
        if digest_bytes(payload) != record.digest:
            raise CorruptFileError(f"cache file {record.path} does not match its manifest digest")
        features = decode_features(payload, utterance_id, self.n_filters, self.n_ceps, self.block_spec)
        if features.config.family is not family or features.config.dynamics is not dynamics:
            raise CorruptFileError(f"cache file {record.path} holds {features.config.name}, expected {family.name}_{dynamics.label}")
        return features

    def roundtrip(self, features: FeatureMatrix) -> FeatureMatrix:
        """Store then load back through the manifest digest check"""
        _ = self.store(features)
        config: FeatureConfig = features.config
        return self.load(features.utterance_id, config.family, config.dynamics)
