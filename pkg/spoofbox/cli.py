"""
SpoofBox CLI - Command line interface for synthetic speech detection experiments
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from datetime import datetime
from pathlib import Path
from typing import cast

from spoofbox.config import ExperimentConfig, load_config, save_config
from spoofbox.corpus import convert_asvspoof2015_protocol
from spoofbox.errors import EXIT_CODES, ConfigurationError, SpoofBoxError
from spoofbox.evaluation import EvalReport, render_report
from spoofbox.pipeline import ExperimentRunner

logger = logging.getLogger("spoofbox")

COMMANDS = ("learn-warp", "extract", "train", "score", "report", "score-and-report", "run-all", "convert-protocol")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spoofbox",
        description="SpoofBox - GMM countermeasures against synthetic speech with warped-cepstral features",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s run-all --config experiment.conf
  %(prog)s extract --family SFCC,ISFCC --dynamics deltas --workers 8
  %(prog)s train --components 64 --seed 1 --work-dir ./work
  %(prog)s convert-protocol CM_protocol/cm_train.trn protocols/train.txt --audio-dir wav
        """
    )
    _ = parser.add_argument("command", choices=COMMANDS, help="Stage to run")
    _ = parser.add_argument("arguments", nargs="*", help="convert-protocol: SOURCE DESTINATION")

    # Configuration
    _ = parser.add_argument("--config", "-c", help="Load configuration from a key = value file")
    _ = parser.add_argument("--save-config", help="Save the effective configuration to a file")

    # Corpus
    corpus_group = parser.add_argument_group("Corpus")
    _ = corpus_group.add_argument("--corpus-root", help="Directory audio paths are relative to")
    _ = corpus_group.add_argument("--train-protocol", help="Training protocol file")
    _ = corpus_group.add_argument("--dev-protocol", help="Development protocol file")
    _ = corpus_group.add_argument("--work-dir", help="Directory for warp, cache, models, scores and reports")
    _ = corpus_group.add_argument("--audio-dir", default="wav", help="convert-protocol: audio directory prefix (default: wav)")

    # Features
    feature_group = parser.add_argument_group("Features")
    _ = feature_group.add_argument("--family", help="Comma-separated feature families (e.g. MFCC,SFCC,ISOBT)")
    _ = feature_group.add_argument("--dynamics", help="Comma-separated dynamics modes: static, static+deltas, deltas")
    _ = feature_group.add_argument("--warp-source", choices=("all", "genuine"), help="Training audio the SFCC warp is learned from")

    # Training
    training_group = parser.add_argument_group("Training")
    _ = training_group.add_argument("--components", type=int, help="Gaussian components per model (default: 512)")
    _ = training_group.add_argument("--seed", type=int, help="Random seed for EM initialization (default: 0)")
    _ = training_group.add_argument("--workers", type=int, help="Worker count (default: physical CPU cores)")

    # Other
    _ = parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    return parser


def load_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the config file, then command line flags"""
    config = ExperimentConfig()
    if cast(str | None, args.config):
        config = load_config(Path(cast(str, args.config)), config)

    # Update config from arguments
    if cast(str | None, args.corpus_root): config.corpus_root = cast(str, args.corpus_root)
    if cast(str | None, args.train_protocol): config.train_protocol = cast(str, args.train_protocol)
    if cast(str | None, args.dev_protocol): config.dev_protocol = cast(str, args.dev_protocol)
    if cast(str | None, args.work_dir): config.work_dir = cast(str, args.work_dir)
    if cast(str | None, args.family): config.update({"families": cast(str, args.family)})
    if cast(str | None, args.dynamics): config.update({"dynamics": cast(str, args.dynamics)})
    if cast(str | None, args.warp_source): config.warp_source = cast(str, args.warp_source)
    if cast(int | None, args.components) is not None: config.n_components = cast(int, args.components)
    if cast(int | None, args.seed) is not None: config.seed = cast(int, args.seed)
    if cast(int | None, args.workers) is not None: config.workers = cast(int, args.workers)

    config.validate()
    return config


def configure_logging(work_dir: Path, verbose: bool) -> None:
    work_dir.mkdir(parents=True, exist_ok=True)
    log_filename = work_dir / f"spoofbox_{datetime.now().strftime('%Y-%m-%d')}.log"
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s [%(levelname)s] %(message)s',
        handlers=[
            # stderr is reserved for the final error line
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(log_filename, encoding='utf-8'),
        ],
        force=True,
    )


def cmd_learn_warp(config: ExperimentConfig) -> None:
    warp = ExperimentRunner(config).learn_warp()
    print(f"✅ SFCC warp with {warp.n_filters} filters written to {config.warp_path}")


def cmd_extract(config: ExperimentConfig) -> None:
    cache = ExperimentRunner(config).extract()
    print(f"✅ Feature cache holds {len(cache.records)} entries in {cache.root}")


def cmd_train(config: ExperimentConfig) -> None:
    models = ExperimentRunner(config).train()
    print(f"✅ Trained {len(models)} natural/synthetic model pairs")


def cmd_score(config: ExperimentConfig) -> None:
    results = ExperimentRunner(config).score()
    for name, scores in results.items():
        print(f"✅ {name}: {len(scores)} scores written to {config.work_path / 'scores'}")


def _print_report(reports: list[EvalReport], config: ExperimentConfig) -> None:
    print(render_report(reports))
    print(f"✅ Report written to {config.report_path}")


def cmd_report(config: ExperimentConfig) -> None:
    _print_report(ExperimentRunner(config).report(), config)


def cmd_score_and_report(config: ExperimentConfig) -> None:
    _print_report(ExperimentRunner(config).score_and_report(), config)


def cmd_run_all(config: ExperimentConfig) -> None:
    _print_report(ExperimentRunner(config).run_all(), config)


def cmd_convert_protocol(arguments: list[str], audio_dir: str) -> None:
    if len(arguments) != 2:
        raise ConfigurationError("convert-protocol needs SOURCE and DESTINATION")
    count = convert_asvspoof2015_protocol(Path(arguments[0]), Path(arguments[1]), audio_dir)
    print(f"✅ Converted {count} protocol entries to {arguments[1]}")


def main(argv: Sequence[str] | None = None) -> int:
    """Main CLI function; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    command = cast(str, args.command)

    try:
        config = load_experiment_config(args)
        configure_logging(config.work_path, cast(bool, args.verbose))

        # Save config if requested
        if cast(str | None, args.save_config):
            save_config(config, Path(cast(str, args.save_config)))
            print(f"Configuration saved to {cast(str, args.save_config)}")

        if command == "learn-warp":
            cmd_learn_warp(config)
        elif command == "extract":
            cmd_extract(config)
        elif command == "train":
            cmd_train(config)
        elif command == "score":
            cmd_score(config)
        elif command == "report":
            cmd_report(config)
        elif command == "score-and-report":
            cmd_score_and_report(config)
        elif command == "run-all":
            cmd_run_all(config)
        elif command == "convert-protocol":
            cmd_convert_protocol(cast(list[str], args.arguments), cast(str, args.audio_dir))
    except SpoofBoxError as e:
        logger.error(f"{command} failed: {e}")
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)
    except Exception as e:
        logger.exception(f"{command} failed unexpectedly")
        print(f"error: internal: {e}", file=sys.stderr)
        return EXIT_CODES["internal"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
