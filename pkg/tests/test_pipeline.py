import copy
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from spoofbox.config import ExperimentConfig
from spoofbox.corpus import Split
from spoofbox.errors import InsufficientDataError, MissingInputError, ProtocolError
from spoofbox.evaluation import Label, eer_of
from spoofbox.features import Dynamics, FeatureFamily
from spoofbox.gmm import llr_score
from spoofbox.pipeline import ExperimentRunner

Builder = Callable[..., ExperimentConfig]


class TestExtract:
    def test_resume_reuses_valid_entries(self, corpus_builder: Builder):
        config = corpus_builder(families=["MFCC", "SOBT"], dynamics=["static", "deltas"])
        runner = ExperimentRunner(config)
        _ = runner.learn_warp()
        cache = runner.extract()
        assert len(cache.records) == 18 * 4
        stamps = {path: path.stat().st_mtime_ns for path in config.cache_dir.rglob("*.ftr")}
        manifest = cache.manifest_path.read_bytes()

        again = ExperimentRunner(config).extract()
        assert {path: path.stat().st_mtime_ns for path in config.cache_dir.rglob("*.ftr")} == stamps
        assert again.manifest_path.read_bytes() == manifest

    def test_corrupt_entry_is_recomputed(self, corpus_builder: Builder):
        config = corpus_builder(families=["IMFCC"], dynamics=["static"])
        cache = ExperimentRunner(config).extract()
        path = cache.path_for("D_S0002", FeatureFamily.IMFCC, Dynamics.STATIC)
        original = path.read_bytes()
        _ = path.write_bytes(original[:-4])
        assert not cache.is_valid("D_S0002", FeatureFamily.IMFCC, Dynamics.STATIC)

        repaired = ExperimentRunner(config).extract()
        assert repaired.is_valid("D_S0002", FeatureFamily.IMFCC, Dynamics.STATIC)
        # extraction is deterministic, so the repaired file matches the original bytes
        assert path.read_bytes() == original

    def test_sfcc_needs_warp(self, corpus_builder: Builder):
        config = corpus_builder(families=["ISFCC"])
        with pytest.raises(MissingInputError, match="run 'learn-warp' first"):
            _ = ExperimentRunner(config).extract()

    def test_id_shared_between_splits(self, corpus_builder: Builder):
        config = corpus_builder(families=["MFCC"], dynamics=["static"])
        dev_protocol = config.resolve(config.dev_protocol)
        with dev_protocol.open("a", encoding="utf-8") as f:
            _ = f.write("T_G0001 dev/D_G0001.wav human -\n")
        with pytest.raises(ProtocolError, match="utterance id T_G0001 appears in both .*train.txt and .*dev.txt"):
            _ = ExperimentRunner(config).extract()
        assert not config.cache_dir.exists() or not any(config.cache_dir.rglob("*.ftr"))

    def test_mel_families_skip_warp(self, corpus_builder: Builder):
        config = corpus_builder(families=["MFCC", "IMOBT"], dynamics=["static"])
        _ = ExperimentRunner(config).extract()
        assert not config.warp_path.exists()


class TestLearnWarp:
    def test_genuine_only_source(self, corpus_builder: Builder):
        config = corpus_builder(warp_source="genuine")
        mixed = ExperimentRunner(corpus_builder()).learn_warp()
        genuine = ExperimentRunner(config).learn_warp()
        assert genuine.n_filters == mixed.n_filters == 20
        assert not np.array_equal(genuine.boundary_freqs, mixed.boundary_freqs)

    def test_no_genuine_training_audio(self, corpus_builder: Builder):
        config = corpus_builder(n_genuine=0, warp_source="genuine")
        with pytest.raises(InsufficientDataError, match="no genuine utterances"):
            _ = ExperimentRunner(config).learn_warp()


class TestModels:
    def test_train_then_load(self, corpus_builder: Builder):
        config = corpus_builder(families=["MOBT"], dynamics=["static+deltas"])
        runner = ExperimentRunner(config)
        _ = runner.extract()
        models = runner.train()
        natural, synthetic = models["MOBT_static+deltas"]
        assert natural.means.shape == (4, 66)
        loaded = runner.load_models(config.feature_configs()[0])
        np.testing.assert_array_equal(loaded[0].means, natural.means)
        np.testing.assert_array_equal(loaded[1].variances, synthetic.variances)

    def test_fixed_seed_rerun_is_bit_identical(self, corpus_builder: Builder):
        config = corpus_builder(families=["MFCC"], dynamics=["static"])
        runner = ExperimentRunner(config)
        _ = runner.extract()
        _ = runner.train()
        paths = [config.model_path(config.feature_configs()[0], which) for which in ("natural", "synthetic")]
        first = [p.read_bytes() for p in paths]
        _ = ExperimentRunner(config).train()
        assert [p.read_bytes() for p in paths] == first

    def test_score_without_models(self, corpus_builder: Builder):
        config = corpus_builder(families=["MFCC"], dynamics=["static"])
        runner = ExperimentRunner(config)
        _ = runner.extract()
        with pytest.raises(MissingInputError, match="run 'train' first"):
            _ = runner.score()

    def test_report_without_scores(self, corpus_builder: Builder):
        with pytest.raises(MissingInputError, match="run 'score' first"):
            _ = ExperimentRunner(corpus_builder(families=["MFCC"], dynamics=["static"])).report()


class TestSyntheticExperiment:
    """Two procedurally generated classes with opposite spectral tilt"""

    def _config(
        self, corpus_builder: Builder, work_dir: Path, workers: int, families: tuple[str, ...] = ("MFCC", "SFCC")
    ) -> ExperimentConfig:
        config = corpus_builder(
            n_genuine=100,
            n_spoof=100,
            families=list(families),
            dynamics=["static"],
            n_components=16,
            n_em_iterations=5,
            workers=workers,
        )
        config.work_dir = str(work_dir)
        return config

    def test_separates_classes_and_is_deterministic(self, corpus_builder: Builder, tmp_path: Path):
        serial_config = self._config(corpus_builder, tmp_path / "serial", workers=1)
        serial = ExperimentRunner(serial_config)
        reports = serial.run_all()
        for report in reports:
            assert report.average is not None
            assert report.average < 5.0

        scores = serial.score()
        for name, score_set in scores.items():
            assert eer_of(score_set) < 5.0, name

        # same corpus, another work directory and worker count
        parallel_config = copy.copy(serial_config)
        parallel_config.work_dir = str(tmp_path / "parallel")
        parallel_config.workers = 2
        _ = ExperimentRunner(parallel_config).run_all()
        for config in serial_config.feature_configs():
            assert parallel_config.score_path(config).read_bytes() == serial_config.score_path(config).read_bytes()
        assert parallel_config.report_path.read_bytes() == serial_config.report_path.read_bytes()

    def test_swapping_classes_flips_mean_llr(self, corpus_builder: Builder, tmp_path: Path):
        config = self._config(corpus_builder, tmp_path / "work", workers=1)
        config.families = ["MFCC"]
        runner = ExperimentRunner(config)
        _ = runner.extract()
        _ = runner.train()
        feature_config = config.feature_configs()[0]
        natural, synthetic = runner.load_models(feature_config)
        cache = runner.open_cache()

        for label in Label:
            entries = [e for e in runner.entries(Split.DEV) if e.label is label]
            forward = [llr_score(cache.load(e.utterance_id, feature_config.family, feature_config.dynamics).values, natural, synthetic) for e in entries]
            backward = [llr_score(cache.load(e.utterance_id, feature_config.family, feature_config.dynamics).values, synthetic, natural) for e in entries]
            assert backward == [-s for s in forward]
            assert np.mean(forward) > 0 if label is Label.GENUINE else np.mean(forward) < 0

    @pytest.mark.parametrize("family", ["IMFCC", "IMOBT", "SOBT", "ISOBT"])
    def test_other_families_separate_classes(self, corpus_builder: Builder, tmp_path: Path, family: str):
        config = self._config(corpus_builder, tmp_path / "work", workers=1, families=(family,))
        reports = ExperimentRunner(config).run_all()
        assert [r.family for r in reports] == [family]
        assert reports[0].average is not None
        assert reports[0].average < 5.0
