import os
import json
import logging
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

from utils.constants import (
    DEFAULT_PATCH_SIZE, DEFAULT_STRIDE, DEFAULT_MORPH_RADIUS, DEFAULT_VIDEO_EPSILON_8BIT,
    EVAL_SIZE, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LR_MATTE_D, DEFAULT_LR_PARAM,
    DEFAULT_LAMBDA_SM, DEFAULT_LAMBDA_MAT, DEFAULT_LAMBDA_BD, DEFAULT_LAMBDA_ADV,
    ADVERSARIAL_MODES, ABLATIONS, EDGE_POLICIES, RMSE_DATASET_MODES
)
from utils.error_handlers import ConfigurationError

load_dotenv()


class Config:
    ENV_PREFIX = 'SHADOWPATCH_'
    CONFIG_ENV_VAR = 'SHADOWPATCH_CONFIG'

    # Built-in defaults; each can be overridden by SHADOWPATCH_<NAME> in the environment
    PATCH_SIZE = DEFAULT_PATCH_SIZE
    STRIDE = DEFAULT_STRIDE
    RADIUS = DEFAULT_MORPH_RADIUS
    EPSILON = DEFAULT_VIDEO_EPSILON_8BIT
    EVAL_SIZE = EVAL_SIZE
    EDGE_POLICY = 'drop'
    PRESET = 'desk'
    SEED = 0
    WORKERS = 0
    LOG_LEVEL = 'INFO'
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    @staticmethod
    def default_config_path() -> Optional[str]:
        return os.getenv(Config.CONFIG_ENV_VAR) or None

    @staticmethod
    def env_overrides() -> Dict[str, str]:
        """Raw SHADOWPATCH_* values keyed by lower-case RunConfig field name"""
        overrides = {}
        for key, value in os.environ.items():
            if key.startswith(Config.ENV_PREFIX) and key != Config.CONFIG_ENV_VAR:
                overrides[key[len(Config.ENV_PREFIX):].lower()] = value
        return overrides

    @staticmethod
    def init_directories(*paths: str):
        """Create output directories a subcommand writes into"""
        for path in paths:
            if path:
                os.makedirs(path, exist_ok=True)


@dataclass
class LossWeights:
    lambda_sm: float = DEFAULT_LAMBDA_SM
    lambda_mat: float = DEFAULT_LAMBDA_MAT
    lambda_bd: float = DEFAULT_LAMBDA_BD
    lambda_adv: float = DEFAULT_LAMBDA_ADV

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigurationError(f"{f.name} must be non-negative")

    def with_ablations(self, ablations) -> 'LossWeights':
        """Zero the weight of every ablated loss"""
        return LossWeights(
            lambda_sm=0.0 if 'sm' in ablations else self.lambda_sm,
            lambda_mat=0.0 if 'mat' in ablations else self.lambda_mat,
            lambda_bd=0.0 if 'bd' in ablations else self.lambda_bd,
            lambda_adv=0.0 if 'gan' in ablations else self.lambda_adv,
        )


@dataclass
class TrainConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    lr_matte_d: float = DEFAULT_LR_MATTE_D
    lr_param: float = DEFAULT_LR_PARAM
    weights: LossWeights = field(default_factory=LossWeights)
    adversarial_mode: str = 'nonsaturating'
    ablations: Tuple[str, ...] = ()
    seed: int = 0
    preset: str = 'desk'
    patch_size: int = DEFAULT_PATCH_SIZE
    radius: int = DEFAULT_MORPH_RADIUS
    workers: int = 0
    checkpoint_every: int = 1
    lr_decay_start: Optional[int] = None
    deterministic: bool = False
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.lr_matte_d <= 0 or self.lr_param <= 0:
            raise ConfigurationError("Learning rates must be positive")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.adversarial_mode not in ADVERSARIAL_MODES:
            raise ConfigurationError(f"adversarial_mode must be one of {ADVERSARIAL_MODES}")
        unknown = [a for a in self.ablations if a not in ABLATIONS]
        if unknown:
            raise ConfigurationError(f"Unknown ablation(s): {', '.join(unknown)}")
        self.ablations = tuple(sorted(set(self.ablations)))
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    @property
    def effective_weights(self) -> LossWeights:
        return self.weights.with_ablations(self.ablations)

    @property
    def bounded(self) -> bool:
        return 'bounds' not in self.ablations

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload['ablations'] = list(self.ablations)
        return payload

    @staticmethod
    def from_dict(payload: Dict[str, Any]) -> 'TrainConfig':
        data = dict(payload)
        data['weights'] = LossWeights(**data.get('weights', {}))
        data['ablations'] = tuple(data.get('ablations', ()))
        known = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in data.items() if k in known})


@dataclass
class RunConfig:
    # Paths
    images: Optional[str] = None
    masks: Optional[str] = None
    manifest: Optional[str] = None
    ckpt: Optional[str] = None
    out: Optional[str] = None
    # Patch protocol and geometry
    patch_size: int = Config.PATCH_SIZE
    stride: Optional[int] = None
    radius: int = Config.RADIUS
    epsilon: float = Config.EPSILON
    edge_policy: str = Config.EDGE_POLICY
    eval_size: int = Config.EVAL_SIZE
    preset: str = Config.PRESET
    seed: int = Config.SEED
    workers: int = Config.WORKERS
    # Training
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    lr_matte_d: float = DEFAULT_LR_MATTE_D
    lr_param: float = DEFAULT_LR_PARAM
    lambda_sm: float = DEFAULT_LAMBDA_SM
    lambda_mat: float = DEFAULT_LAMBDA_MAT
    lambda_bd: float = DEFAULT_LAMBDA_BD
    lambda_adv: float = DEFAULT_LAMBDA_ADV
    adversarial_mode: str = 'nonsaturating'
    ablate: Tuple[str, ...] = ()
    checkpoint_every: int = 1
    lr_decay_start: Optional[int] = None
    deterministic: bool = False
    max_steps: Optional[int] = None
    # Inference and evaluation
    score_after_override: bool = False
    dataset_mode: str = 'per_image'
    per_channel: bool = False

    def __post_init__(self):
        if self.edge_policy not in EDGE_POLICIES:
            raise ConfigurationError(f"edge_policy must be one of {EDGE_POLICIES}")
        if self.dataset_mode not in RMSE_DATASET_MODES:
            raise ConfigurationError(f"dataset_mode must be one of {RMSE_DATASET_MODES}")
        if isinstance(self.ablate, (list, str)):
            self.ablate = tuple([self.ablate] if isinstance(self.ablate, str) else self.ablate)

    @staticmethod
    def _coerce(name: str, raw: Any) -> Any:
        """Coerce an environment / file value to the declared field type"""
        default = RunConfig.__dataclass_fields__[name].default
        if raw is None or not isinstance(raw, str):
            return raw
        if isinstance(default, bool):
            return raw.strip().lower() in ('1', 'true', 'yes', 'on')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(part.strip() for part in raw.split(',') if part.strip())
        if name in ('stride', 'lr_decay_start', 'max_steps'):
            return int(raw)
        return raw

    @staticmethod
    def load_file(path: Optional[str]) -> Dict[str, Any]:
        """Read a JSON config file; a missing path means no file layer"""
        if not path:
            return {}
        if not os.path.isfile(path):
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(payload, dict):
            raise ConfigurationError(f"Config file {path} must hold a JSON object")
        return payload

    @classmethod
    def resolve(cls, cli_args: Optional[Dict[str, Any]] = None,
                config_path: Optional[str] = None) -> 'RunConfig':
        """Merge layers: CLI flag > config file > environment > built-in default"""
        known = {f.name for f in fields(cls)}
        merged: Dict[str, Any] = {}

        for name, raw in Config.env_overrides().items():
            if name in known:
                merged[name] = cls._coerce(name, raw)

        file_layer = cls.load_file(config_path or Config.default_config_path())
        unknown = sorted(set(file_layer) - known)
        if unknown:
            logging.warning(f"Ignoring unknown config keys: {', '.join(unknown)}")
        merged.update({k: cls._coerce(k, v) for k, v in file_layer.items() if k in known})

        for name, value in (cli_args or {}).items():
            if name in known and value is not None:
                merged[name] = value

        logging.debug(f"Resolved run configuration: {merged}")
        return cls(**merged)

    def require_dirs(self, *names: str):
        """Check that the named directory fields exist"""
        for name in names:
            path = getattr(self, name)
            if not path or not os.path.isdir(path):
                raise ConfigurationError(f"--{name} directory does not exist: {path}")

    def grid_stride(self) -> int:
        """Stride for building a training manifest; inference and fine-tuning pick their own default"""
        return self.stride or Config.STRIDE

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_sm, self.lambda_mat, self.lambda_bd, self.lambda_adv)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            lr_matte_d=self.lr_matte_d, lr_param=self.lr_param,
            weights=self.loss_weights(), adversarial_mode=self.adversarial_mode,
            ablations=tuple(self.ablate), seed=self.seed, preset=self.preset,
            patch_size=self.patch_size, radius=self.radius, workers=self.workers,
            checkpoint_every=self.checkpoint_every, lr_decay_start=self.lr_decay_start,
            deterministic=self.deterministic, max_steps=self.max_steps
        )

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload['ablate'] = list(self.ablate)
        return payload
