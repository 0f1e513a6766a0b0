"""
Experiment lifecycle: warp learning, feature extraction, model training,
scoring and reporting over a protocol-described corpus.

Per-utterance work runs in a process pool; results are gathered in protocol
order and every file is written by the coordinating process, sorted by
utterance id.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from spoofbox.config import ExperimentConfig
from spoofbox.corpus import (
    CacheRecord,
    FeatureCache,
    ProtocolEntry,
    Split,
    parse_protocol,
    read_wav,
    store_features,
)
from spoofbox.errors import FingerprintMismatchError, InsufficientDataError, MissingInputError, ProtocolError
from spoofbox.evaluation import (
    EvalReport,
    Label,
    ScoreSet,
    per_attack_report,
    read_scores,
    render_report,
    write_report,
    write_scores,
)
from spoofbox.features import FeatureConfig, FeatureExtractor
from spoofbox.frontend import DEFAULT_SAMPLE_RATE, FrontendOptions, analyze
from spoofbox.gmm import GmmModel, llr_score, load_model, save_model, train
from spoofbox.parallel import map_processes, map_threads
from spoofbox.warping import (
    EnsembleSpectrum,
    WarpingFunction,
    accumulate_ensemble,
    estimate_sfcc_warp,
    load_warp,
    save_warp,
    warp_interval_areas,
)

logger = logging.getLogger("spoofbox")

NATURAL = "natural"
SYNTHETIC = "synthetic"
# utterances per extraction batch; the manifest is saved after each one
EXTRACT_BATCH = 256


@dataclass(frozen=True)
class _SpectrumJob:
    entry: ProtocolEntry
    frontend: FrontendOptions


@dataclass(frozen=True)
class _ExtractJob:
    entry: ProtocolEntry
    configs: tuple[FeatureConfig, ...]
    frontend: FrontendOptions
    extractor: FeatureExtractor
    cache_root: Path


def _utterance_ensemble(job: _SpectrumJob) -> EnsembleSpectrum:
    audio = read_wav(job.entry.audio_path, job.entry.utterance_id)
    spectra = analyze(audio, job.frontend)
    return accumulate_ensemble(spectra, EnsembleSpectrum(fft_size=spectra.fft_size, sample_rate=spectra.sample_rate))


def _extract_utterance(job: _ExtractJob) -> list[CacheRecord]:
    # one frontend pass per utterance, shared by every requested configuration
    audio = read_wav(job.entry.audio_path, job.entry.utterance_id)
    spectra = analyze(audio, job.frontend)
    return [store_features(job.cache_root, job.extractor.extract(spectra, config)) for config in job.configs]


class ExperimentRunner:
    """Runs each stage of an experiment against one ExperimentConfig"""

    def __init__(self, config: ExperimentConfig):
        config.validate()
        self.config: ExperimentConfig = config
        self._protocols: dict[Split, list[ProtocolEntry]] = {}

    def entries(self, split: Split) -> list[ProtocolEntry]:
        if not self._protocols:
            self._protocols = self._parse_protocols()
        return self._protocols[split]

    def _parse_protocols(self) -> dict[Split, list[ProtocolEntry]]:
        # the feature cache is keyed by utterance id, so ids must be unique across splits
        paths = {
            Split.TRAIN: self.config.resolve(self.config.train_protocol),
            Split.DEV: self.config.resolve(self.config.dev_protocol),
        }
        protocols = {
            split: parse_protocol(path, split, corpus_root=Path(self.config.corpus_root))
            for split, path in paths.items()
        }
        dev_ids = {entry.utterance_id for entry in protocols[Split.DEV]}
        for entry in protocols[Split.TRAIN]:
            if entry.utterance_id in dev_ids:
                raise ProtocolError(
                    f"utterance id {entry.utterance_id} appears in both {paths[Split.TRAIN]} and {paths[Split.DEV]}"
                )
        return protocols

    def open_cache(self) -> FeatureCache:
        return FeatureCache(
            self.config.cache_dir,
            n_filters=self.config.n_filters,
            n_ceps=self.config.n_ceps,
            block_spec=self.config.block_spec(),
        )

    # Warp learning

    def learn_warp(self) -> WarpingFunction:
        entries = self.entries(Split.TRAIN)
        if self.config.warp_source == "genuine":
            entries = [e for e in entries if e.label is Label.GENUINE]
        if not entries:
            raise InsufficientDataError(
                f"cannot learn the SFCC warp: training split has no {'genuine ' if self.config.warp_source == 'genuine' else ''}utterances"
            )
        logger.info(f"Learning SFCC warp from {len(entries)} training utterances ({self.config.warp_source})")

        frontend = self.config.frontend_options()
        parts = map_processes(_utterance_ensemble, [_SpectrumJob(e, frontend) for e in entries], self.config.workers)
        ensemble = parts[0]
        for part in parts[1:]:
            ensemble = ensemble.merge(part)
        logger.info(f"Ensemble spectrum: {ensemble.n_frames_accumulated} frames, K={ensemble.fft_size}")

        warp = estimate_sfcc_warp(ensemble, self.config.n_filters)
        areas = warp_interval_areas(ensemble, warp)
        logger.debug(f"Warp interval areas: min {np.min(areas):.6g}, max {np.max(areas):.6g}")
        save_warp(warp, self.config.warp_path)
        return warp

    def load_warp_for(self, configs: list[FeatureConfig]) -> WarpingFunction | None:
        if not any(c.family.needs_warp for c in configs):
            return None
        if not self.config.warp_path.exists():
            raise MissingInputError(f"SFCC warp not found at {self.config.warp_path}; run 'learn-warp' first")
        return load_warp(self.config.warp_path)

    # Feature extraction

    def extract(self) -> FeatureCache:
        configs = self.config.feature_configs()
        warp = self.load_warp_for(configs)
        frontend = self.config.frontend_options()
        cache = self.open_cache()
        entries = self.entries(Split.TRAIN) + self.entries(Split.DEV)
        extractor = FeatureExtractor(self.config.n_filters, warp).prepare(
            configs, frontend.fft_size(DEFAULT_SAMPLE_RATE), DEFAULT_SAMPLE_RATE
        )

        jobs: list[_ExtractJob] = []
        reused = repaired = 0
        for entry in entries:
            pending: list[FeatureConfig] = []
            for config in configs:
                key = (entry.utterance_id, config.family, config.dynamics)
                if cache.is_valid(*key):
                    reused += 1
                    continue
                if key in cache.records:
                    logger.warning(f"Cache entry {config.name} for {entry.utterance_id} is corrupt, recomputing")
                    repaired += 1
                pending.append(config)
            if pending:
                jobs.append(_ExtractJob(entry, tuple(pending), frontend, extractor, cache.root))

        computed = 0
        for start in range(0, len(jobs), EXTRACT_BATCH):
            batch = jobs[start:start + EXTRACT_BATCH]
            for records in map_processes(_extract_utterance, batch, self.config.workers):
                for record in records:
                    cache.add_record(record)
                    computed += 1
            cache.save_manifest()
            logger.info(f"Extracted {min(start + EXTRACT_BATCH, len(jobs))}/{len(jobs)} utterances")

        cache.save_manifest()
        logger.info(
            f"Feature cache: {len(entries)} utterances x {len(configs)} configurations; "
            f"{reused} reused, {computed} computed ({repaired} repaired)"
        )
        return cache

    # Model training

    def _pooled_frames(self, cache: FeatureCache, entries: list[ProtocolEntry], config: FeatureConfig) -> NDArray[np.float64]:
        matrices = [cache.load(e.utterance_id, config.family, config.dynamics).values for e in entries]
        if not matrices:
            return np.empty((0, config.dimension), dtype=np.float64)
        return np.vstack(matrices)

    def train(self) -> dict[str, tuple[GmmModel, GmmModel]]:
        cache = self.open_cache()
        opts = self.config.training_options()
        entries = self.entries(Split.TRAIN)
        genuine = [e for e in entries if e.label is Label.GENUINE]
        spoof = [e for e in entries if e.label is Label.SPOOF]
        logger.info(f"Training on {len(genuine)} genuine and {len(spoof)} spoofed of {len(entries)} training utterances")

        models: dict[str, tuple[GmmModel, GmmModel]] = {}
        for config in self.config.feature_configs():
            pair: list[GmmModel] = []
            for which, group in ((NATURAL, genuine), (SYNTHETIC, spoof)):
                frames = self._pooled_frames(cache, group, config)
                logger.info(f"{config.name}: {which} model from {frames.shape[0]} frames")
                try:
                    model = train(frames, opts, fingerprint=config.fingerprint)
                except InsufficientDataError as e:
                    raise InsufficientDataError(f"{config.name} {which} model: {e}") from e
                save_model(model, self.config.model_path(config, which))
                pair.append(model)
            models[config.name] = (pair[0], pair[1])
        return models

    # Scoring and reporting

    def load_models(self, config: FeatureConfig) -> tuple[GmmModel, GmmModel]:
        pair: list[GmmModel] = []
        for which in (NATURAL, SYNTHETIC):
            path = self.config.model_path(config, which)
            if not path.exists():
                raise MissingInputError(f"{which} model for {config.name} not found at {path}; run 'train' first")
            model = load_model(path)
            if model.fingerprint != config.fingerprint:
                raise FingerprintMismatchError(
                    f"{path} was trained on features {model.fingerprint}, {config.name} is {config.fingerprint}"
                )
            pair.append(model)
        return pair[0], pair[1]

    def score(self) -> dict[str, ScoreSet]:
        cache = self.open_cache()
        entries = sorted(self.entries(Split.DEV), key=lambda e: e.utterance_id)
        results: dict[str, ScoreSet] = {}
        for config in self.config.feature_configs():
            natural, synthetic = self.load_models(config)

            def score_entry(entry: ProtocolEntry) -> float:
                features = cache.load(entry.utterance_id, config.family, config.dynamics)
                return llr_score(features.values, natural, synthetic)

            # models are read-only, so scoring threads share them
            values = map_threads(score_entry, entries, self.config.workers)
            scores = ScoreSet()
            for entry, value in zip(entries, values):
                scores.add(entry.utterance_id, value, entry.label, entry.attack)
            write_scores(scores, self.config.score_path(config))
            logger.info(
                f"{config.name}: scored {len(scores)}/{len(entries)} dev utterances "
                f"({scores.genuine_scores().size} genuine, {scores.spoof_scores().size} spoofed)"
            )
            results[config.name] = scores
        return results

    def report(self) -> list[EvalReport]:
        reports: list[EvalReport] = []
        for config in self.config.feature_configs():
            path = self.config.score_path(config)
            if not path.exists():
                raise MissingInputError(f"scores for {config.name} not found at {path}; run 'score' first")
            reports.append(per_attack_report(read_scores(path), config))
        write_report(reports, self.config.report_path)
        text = render_report(reports)
        self.config.report_text_path.parent.mkdir(parents=True, exist_ok=True)
        _ = self.config.report_text_path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Wrote report {self.config.report_path}")
        return reports

    def score_and_report(self) -> list[EvalReport]:
        _ = self.score()
        return self.report()

    def run_all(self) -> list[EvalReport]:
        if any(c.family.needs_warp for c in self.config.feature_configs()):
            _ = self.learn_warp()
        _ = self.extract()
        _ = self.train()
        return self.score_and_report()
