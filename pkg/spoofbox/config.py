"""
Experiment configuration: defaults, key = value files and derived option objects.
"""

import logging
from pathlib import Path
from typing import cast

from spoofbox.errors import ConfigurationError
from spoofbox.features import BlockSpec, Dynamics, FeatureConfig, FeatureFamily
from spoofbox.frontend import FrontendOptions
from spoofbox.gmm import TrainingOptions
from spoofbox.parallel import default_workers

logger = logging.getLogger("spoofbox")

WARP_SOURCES = ("all", "genuine")


class ExperimentConfig:
    def __init__(self):
        # Initialize all values to their defaults
        self.corpus_root: str = '.'
        self.train_protocol: str = 'protocols/train.txt'
        self.dev_protocol: str = 'protocols/dev.txt'
        self.work_dir: str = './work'
        self.families: list[str] = [f.name for f in FeatureFamily]
        self.dynamics: list[str] = [d.label for d in Dynamics]
        # Feature extraction
        self.frame_ms: float = 20.0
        self.overlap: float = 0.5
        self.pad_to_power_of_two: bool = True
        self.pre_emphasis: bool = False
        self.pre_emphasis_coefficient: float = 0.97
        self.n_filters: int = 20
        self.n_ceps: int = 20
        self.blocks: str = '1-7,6-20'
        self.warp_source: str = 'all'
        # GMM training
        self.n_components: int = 512
        self.n_em_iterations: int = 10
        self.variance_floor_factor: float = 0.01
        self.seed: int = 0
        self.workers: int = default_workers()

    def update(self, values: dict[str, object]) -> None:
        """Set known fields, coercing strings to each field's type"""
        for key, value in values.items():
            if not hasattr(self, key):
                raise ConfigurationError(f"unknown configuration key '{key}'")
            current = cast(object, getattr(self, key))
            setattr(self, key, _coerce(key, value, current))

    def validate(self) -> None:
        for name in self.families:
            _ = FeatureFamily.parse(name)
        for name in self.dynamics:
            _ = Dynamics.parse(name)
        if self.warp_source not in WARP_SOURCES:
            raise ConfigurationError(f"warp_source must be one of {', '.join(WARP_SOURCES)}, got '{self.warp_source}'")
        self.block_spec().validate(self.n_filters)
        _ = self.training_options()

    def block_spec(self) -> BlockSpec:
        return BlockSpec.parse(self.blocks)

    def feature_configs(self) -> list[FeatureConfig]:
        """Every requested (family, dynamics) pair, families in id order"""
        families = sorted({FeatureFamily.parse(name) for name in self.families}, key=lambda f: f.value)
        dynamics = sorted({Dynamics.parse(name) for name in self.dynamics}, key=lambda d: d.value)
        return [self.feature_config(f, d) for f in families for d in dynamics]

    def feature_config(self, family: FeatureFamily, dynamics: Dynamics) -> FeatureConfig:
        return FeatureConfig(
            family=family,
            dynamics=dynamics,
            n_filters=self.n_filters,
            n_ceps=self.n_ceps,
            block_spec=self.block_spec() if family.is_block else None,
        )

    def frontend_options(self) -> FrontendOptions:
        return FrontendOptions(
            frame_ms=self.frame_ms,
            overlap_fraction=self.overlap,
            pad_to_power_of_two=self.pad_to_power_of_two,
            pre_emphasis=self.pre_emphasis,
            pre_emphasis_coefficient=self.pre_emphasis_coefficient,
        )

    def training_options(self) -> TrainingOptions:
        return TrainingOptions(
            n_components=self.n_components,
            n_em_iterations=self.n_em_iterations,
            seed=self.seed,
            variance_floor_factor=self.variance_floor_factor,
            workers=self.workers,
        )

    # Paths inside the work directory
    @property
    def work_path(self) -> Path:
        return Path(self.work_dir)

    @property
    def warp_path(self) -> Path:
        return self.work_path / 'sfcc.warp'

    @property
    def cache_dir(self) -> Path:
        return self.work_path / 'cache'

    def model_path(self, config: FeatureConfig, which: str) -> Path:
        return self.work_path / 'models' / f"{config.name}.{which}.gmm"

    def score_path(self, config: FeatureConfig) -> Path:
        return self.work_path / 'scores' / f"{config.name}.tsv"

    @property
    def report_path(self) -> Path:
        return self.work_path / 'report.tsv'

    @property
    def report_text_path(self) -> Path:
        return self.work_path / 'report.txt'

    def resolve(self, path: str) -> Path:
        """Protocol paths are relative to the corpus root unless absolute"""
        p = Path(path)
        return p if p.is_absolute() else Path(self.corpus_root) / p


def _coerce(key: str, value: object, current: object) -> object:
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if isinstance(current, bool):
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(f"not a boolean: {text}")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, list):
            return [item.strip() for item in text.split(',') if item.strip()]
    except ValueError as e:
        raise ConfigurationError(f"invalid value for '{key}': {e}") from e
    return text


def parse_config_text(text: str, source: str = '<config>') -> dict[str, str]:
    """key = value lines; '#' starts a comment"""
    values: dict[str, str] = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError(f"{source}: line {line_number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigurationError(f"{source}: line {line_number}: missing key")
        values[key] = value
    return values


def load_config(path: Path, config: ExperimentConfig | None = None) -> ExperimentConfig:
    config = config or ExperimentConfig()
    try:
        text = path.read_text(encoding='utf-8')
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    values = parse_config_text(text, str(path))
    try:
        config.update(cast(dict[str, object], values))
    except ConfigurationError as e:
        raise ConfigurationError(f"{path}: {e}") from e
    logger.info(f"Configuration loaded from {path}")
    return config


def dump_config(config: ExperimentConfig) -> str:
    lines: list[str] = []
    for key, value in vars(config).items():
        if isinstance(value, list):
            text = ','.join(str(v) for v in cast(list[object], value))
        elif isinstance(value, bool):
            text = 'true' if value else 'false'
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return '\n'.join(lines) + '\n'


def save_config(config: ExperimentConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    _ = path.write_text(dump_config(config), encoding='utf-8')
    logger.info(f"Configuration saved to {path}")
