from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from spoofbox.cli import build_parser, load_experiment_config, main
from spoofbox.config import ExperimentConfig, save_config
from spoofbox.evaluation import Label, eer_from_scores, read_scores
from spoofbox.warping import load_warp

Builder = Callable[..., ExperimentConfig]


def _config_file(config: ExperimentConfig, tmp_path: Path) -> str:
    path = tmp_path / "experiment.conf"
    save_config(config, path)
    return str(path)


def _error_line(capsys: pytest.CaptureFixture[str]) -> str:
    """The one line a failed command leaves on stderr"""
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1, lines
    return lines[0]


class TestArguments:
    def test_flags_override_file(self, tmp_path: Path):
        conf = tmp_path / "a.conf"
        _ = conf.write_text("n_components = 8\nseed = 3\nfamilies = MFCC, SFCC\n")
        args = build_parser().parse_args(["train", "-c", str(conf), "--components", "4", "--family", "ISOBT"])
        config = load_experiment_config(args)
        assert config.n_components == 4
        assert config.seed == 3
        assert config.families == ["ISOBT"]

    def test_defaults_without_file(self):
        config = load_experiment_config(build_parser().parse_args(["report"]))
        assert config.n_components == 512
        assert len(config.feature_configs()) == 24

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            _ = main(["bogus"])

    def test_save_config_records_effective_values(self, corpus_builder: Builder, tmp_path: Path):
        config = corpus_builder()
        saved = tmp_path / "saved.conf"
        # report has nothing to read yet, but the config is saved first
        code = main(["report", "-c", _config_file(config, tmp_path), "--components", "2", "--save-config", str(saved)])
        assert code == 8
        text = saved.read_text()
        assert "n_components = 2" in text
        assert "n_em_iterations = 3" in text


class TestExitCodes:
    def test_unknown_family_is_config_error(self, capsys: pytest.CaptureFixture[str]):
        assert main(["extract", "--family", "LPCC"]) == 2
        line = _error_line(capsys)
        assert line.startswith("error: config:")
        assert "unknown feature family 'LPCC'" in line

    def test_missing_warp(self, corpus_builder: Builder, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        config = corpus_builder(families=["SFCC"], dynamics=["static"])
        assert main(["extract", "-c", _config_file(config, tmp_path)]) == 8
        line = _error_line(capsys)
        assert line.startswith("error: missing: SFCC warp not found")
        assert "run 'learn-warp' first" in line

    def test_too_many_components(self, corpus_builder: Builder, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        config = corpus_builder(families=["MFCC"], dynamics=["static"], n_components=500)
        assert main(["run-all", "-c", _config_file(config, tmp_path)]) == 5
        line = _error_line(capsys)
        assert line.startswith("error: data: MFCC_static natural model")
        assert "short by" in line

    def test_corrupt_model(self, corpus_builder: Builder, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        config = corpus_builder(families=["MFCC"], dynamics=["static"])
        conf = _config_file(config, tmp_path)
        assert main(["run-all", "-c", conf]) == 0
        feature_config = config.feature_configs()[0]
        _ = config.model_path(feature_config, "natural").write_bytes(b"GMM1 but not really")
        assert main(["score", "-c", conf]) == 7
        assert _error_line(capsys).startswith("error: corrupt:")

    def test_missing_protocol(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        code = main(["learn-warp", "--corpus-root", str(tmp_path), "--work-dir", str(tmp_path / "work")])
        assert code == 8
        assert "protocol file not found" in _error_line(capsys)

    def test_convert_protocol_needs_two_paths(self, tmp_path: Path):
        assert main(["convert-protocol", "only-one", "--work-dir", str(tmp_path)]) == 2


class TestStages:
    def test_run_all(self, corpus_builder: Builder, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        config = corpus_builder()
        assert main(["run-all", "-c", _config_file(config, tmp_path)]) == 0
        rows = config.report_path.read_text().splitlines()
        assert len(rows) == 25
        assert rows[0].split("\t")[0] == "Feature"
        assert config.report_text_path.exists()
        assert "✅ Report written" in capsys.readouterr().out
        assert len(list((config.work_path / "models").glob("*.gmm"))) == 48

    def test_learn_warp_is_reproducible(self, corpus_builder: Builder, tmp_path: Path):
        config = corpus_builder(n_genuine=1, n_spoof=1)
        conf = _config_file(config, tmp_path)
        assert main(["learn-warp", "-c", conf]) == 0
        first = config.warp_path.read_bytes()
        warp = load_warp(config.warp_path)
        assert len(warp.boundary_freqs) == config.n_filters + 2
        assert np.all(np.diff(warp.boundary_freqs) > 0)

        assert main(["learn-warp", "-c", conf]) == 0
        assert config.warp_path.read_bytes() == first

    def test_one_utterance_gets_every_configuration(self, corpus_builder: Builder, tmp_path: Path):
        config = corpus_builder(n_genuine=1, n_spoof=0)
        conf = _config_file(config, tmp_path)
        assert main(["learn-warp", "-c", conf]) == 0
        assert main(["extract", "-c", conf]) == 0
        assert len(list(config.cache_dir.rglob("T_G0000.ftr"))) == 24

    def test_swapped_models_negate_scores(self, corpus_builder: Builder, tmp_path: Path):
        config = corpus_builder(families=["IMFCC"], dynamics=["deltas"])
        conf = _config_file(config, tmp_path)
        assert main(["run-all", "-c", conf]) == 0
        feature_config = config.feature_configs()[0]
        original = read_scores(config.score_path(feature_config))

        natural = config.model_path(feature_config, "natural")
        synthetic = config.model_path(feature_config, "synthetic")
        natural_bytes, synthetic_bytes = natural.read_bytes(), synthetic.read_bytes()
        _ = natural.write_bytes(synthetic_bytes)
        _ = synthetic.write_bytes(natural_bytes)
        assert main(["score-and-report", "-c", conf]) == 0
        swapped = read_scores(config.score_path(feature_config))

        assert [e.utterance_id for e in swapped.entries] == [e.utterance_id for e in original.entries]
        assert all(s.score == -o.score for s, o in zip(swapped.entries, original.entries))
        assert sum(e.label is Label.SPOOF for e in swapped.entries) == 5
        # negated scores with the class roles exchanged give back the same EER
        assert eer_from_scores(swapped.spoof_scores(), swapped.genuine_scores()) == pytest.approx(
            eer_from_scores(original.genuine_scores(), original.spoof_scores()), abs=1e-12
        )
