import configparser
import copy
import hashlib
import io
import json
from types import SimpleNamespace
from typing import Any, Dict, Iterable, Optional

from preview_restore.errors import ConfigError
from preview_restore.helper import get_param_value, parse_float_list, parse_int_list
from preview_restore.logging import logger as default_logger
from preview_restore.logging.logger import Logger

SAMPLER_MODES = ("adares", "fixed", "no_reference", "noisy_preview", "mean_reference")
DEGRADATION_LEVELS = ("hq", "down4", "down8_analog", "multi")


class RunConfig:
    """
    Declarative run configuration: schedule, networks, training, sampler, data and paths.

    Every key is declared in ``CONFIG_SCHEMA`` with its default, type and label;
    files are INI text, unknown sections or keys are rejected.
    """

    CONFIG_SCHEMA = {
        "schedule": [
            {"name": "kind", "default": "cosine", "type": str, "label": "Noise schedule form"},
            {"name": "steps", "default": 256, "type": int, "label": "Training grid length T"},
        ],
        "nets": [
            {"name": "image_size", "default": 24, "type": int, "label": "Square image extent in pixels"},
            {"name": "channels", "default": 32, "type": int, "label": "Base UNet width C"},
            {"name": "time_dim", "default": 64, "type": int, "label": "Time embedding width"},
            {"name": "num_classes", "default": 4, "type": int, "label": "Number of shape classes"},
            {"name": "class_tokens", "default": 4, "type": int, "label": "Tokens per class embedding"},
            {"name": "context_tokens", "default": 8, "type": int, "label": "Compact encoder tokens M"},
            {"name": "context_width", "default": 64, "type": int, "label": "Context token width D"},
            {"name": "patch_size", "default": 4, "type": int, "label": "Compact encoder patch size"},
            {"name": "encoder_layers", "default": 2, "type": int, "label": "Compact encoder self-attention layers"},
            {"name": "resampler_layers", "default": 1, "type": int, "label": "Resampler cross-attention layers"},
            {"name": "heads", "default": 1, "type": int, "label": "Attention heads"},
            {"name": "self_attn_levels", "default": "1,2", "type": str, "label": "UNet levels with self-attention"},
            {"name": "lq_weights", "default": "1.0,1.0,1.0", "type": str, "label": "LQ cross-attention weight w_l per level"},
            {"name": "adapter_rank", "default": 4, "type": int, "label": "Previewer adapter rank r"},
            {"name": "adapter_scale", "default": 1.0, "type": float, "label": "Previewer adapter scale s"},
        ],
        "training": [
            {"name": "lr", "default": 1e-3, "type": float, "label": "AdamW learning rate"},
            {"name": "beta1", "default": 0.9, "type": float, "label": "AdamW beta1"},
            {"name": "beta2", "default": 0.999, "type": float, "label": "AdamW beta2"},
            {"name": "weight_decay", "default": 0.0, "type": float, "label": "AdamW decoupled weight decay"},
            {"name": "batch_size", "default": 16, "type": int, "label": "Batch size"},
            {"name": "stage1_steps", "default": 4000, "type": int, "label": "Stage I optimisation steps"},
            {"name": "distill_steps", "default": 1500, "type": int, "label": "Previewer distillation steps"},
            {"name": "stage2_steps", "default": 3000, "type": int, "label": "Stage II optimisation steps"},
            {"name": "lq_dropout", "default": 0.15, "type": float, "label": "LQ condition dropout probability"},
            {"name": "class_dropout", "default": 0.15, "type": float, "label": "Class condition dropout probability"},
            {"name": "teacher_cfg", "default": 1.0, "type": float, "label": "CFG scale of the distillation teacher step"},
            {"name": "dcp_text", "default": True, "type": bool,
             "label": "Stage I conditions on classes; false trains an image-only compact encoder"},
            {"name": "noisy_preview", "default": False, "type": bool, "label": "Stage II trains on noised previews"},
            {"name": "log_every", "default": 50, "type": int, "label": "Steps between loss log rows"},
            {"name": "checkpoint_every", "default": 500, "type": int, "label": "Steps between resumable checkpoints"},
            {"name": "workers", "default": 2, "type": int, "label": "Data generation threads"},
            {"name": "seed", "default": 0, "type": int, "label": "Weight init and batch sampling seed"},
            {"name": "progress", "default": True, "type": bool, "label": "Show progress bars"},
        ],
        "sampler": [
            {"name": "steps", "default": 30, "type": int, "label": "Inference steps K"},
            {"name": "cfg_scale", "default": 7.0, "type": float, "label": "Classifier-free guidance scale"},
            {"name": "eta_cutoff", "default": 4, "type": int, "label": "Steps from the end with delta forced to 0"},
            {"name": "delta_max", "default": 5.0, "type": float, "label": "Upper clamp of the quality indicator"},
            {"name": "mode", "default": "adares", "type": str, "label": "Sampler mode"},
            {"name": "creative_class", "default": -1, "type": int, "label": "Creative target class (-1 disables)"},
            {"name": "creative_cutoff", "default": -1, "type": int, "label": "Aggregator cutoff grid index (-1 disables)"},
            {"name": "cfg_drop_residuals", "default": False, "type": bool, "label": "Unconditional branch drops residuals"},
            {"name": "seed", "default": 0, "type": int, "label": "Sampling seed"},
            {"name": "snapshots", "default": False, "type": bool, "label": "Keep preview/mean snapshots in logs"},
        ],
        "data": [
            {"name": "seed", "default": 0, "type": int, "label": "Dataset base seed"},
            {"name": "train_size", "default": 4096, "type": int, "label": "Training pairs"},
            {"name": "val_size", "default": 64, "type": int, "label": "Validation pairs"},
            {"name": "test_size", "default": 64, "type": int, "label": "Test pairs per level"},
            {"name": "second_pass_prob", "default": 0.5, "type": float, "label": "Second degradation pass probability p2"},
        ],
        "paths": [
            {"name": "work_dir", "default": "runs/default", "type": str, "label": "Directory for every artifact"},
        ],
    }

    def __init__(self, values: Optional[Dict[str, Dict[str, Any]]] = None, source: Optional[str] = None,
                 logger: Optional[Logger] = None):
        """
        Build a configuration from already-typed ``values`` layered over the defaults.

        Args:
            values (dict, optional): ``{section: {key: value}}`` overrides.
            source (str, optional): Where the values came from, for log messages.
            logger (Logger, optional): Logger instance; the package logger by default.
        """
        self.logger = logger or default_logger
        self.source = source or "<defaults>"
        self.values = self.defaults()
        for section, entries in (values or {}).items():
            for key, value in entries.items():
                self._set(section, key, value)
        self._resolve_environment()
        self._validate_config()

    @classmethod
    def defaults(cls) -> Dict[str, Dict[str, Any]]:
        """Return the default value of every declared key."""
        return {section: {entry["name"]: entry["default"] for entry in entries}
                for section, entries in cls.CONFIG_SCHEMA.items()}

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Iterable[str] = (),
             logger: Optional[Logger] = None) -> "RunConfig":
        """
        Read an INI file (optional) and apply ``section.key=value`` overrides.

        Raises:
            ConfigError: Unreadable file, unknown section or key, or bad value.
        """
        raw: Dict[str, Dict[str, str]] = {}
        if path:
            parser = configparser.ConfigParser(interpolation=None)
            try:
                with open(path, "r", encoding="utf-8") as handle:
                    parser.read_file(handle)
            except (OSError, configparser.Error) as e:
                raise ConfigError(f"Cannot read configuration '{path}': {e}") from e
            raw = {section: dict(parser.items(section)) for section in parser.sections()}

        for override in overrides:
            section, key, value = cls.parse_override(override)
            raw.setdefault(section, {})[key] = value

        typed = {section: {key: cls._coerce(section, key, value) for key, value in entries.items()}
                 for section, entries in raw.items()}
        return cls(typed, source=path, logger=logger)

    @staticmethod
    def parse_override(text: str):
        """Split ``section.key=value``."""
        if "=" not in text or "." not in text.split("=", 1)[0]:
            raise ConfigError(f"Override '{text}' must look like section.key=value")
        dotted, value = text.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        return section.strip(), key.strip(), value.strip()

    @classmethod
    def _entry(cls, section: str, key: str) -> Dict[str, Any]:
        if section not in cls.CONFIG_SCHEMA:
            raise ConfigError(f"Unknown config section '{section}'. Allowed: {sorted(cls.CONFIG_SCHEMA)}")
        for entry in cls.CONFIG_SCHEMA[section]:
            if entry["name"] == key:
                return entry
        allowed = [entry["name"] for entry in cls.CONFIG_SCHEMA[section]]
        raise ConfigError(f"Unknown config key '{section}.{key}'. Allowed: {allowed}")

    @classmethod
    def _coerce(cls, section: str, key: str, value: Any) -> Any:
        kind = cls._entry(section, key)["type"]
        if not isinstance(value, str):
            return kind(value)
        text = value.strip()
        try:
            if kind is bool:
                lowered = text.lower()
                if lowered in {"1", "true", "yes", "on"}:
                    return True
                if lowered in {"0", "false", "no", "off"}:
                    return False
                raise ValueError(text)
            return kind(text)
        except ValueError as e:
            raise ConfigError(f"Config value {section}.{key}={text!r} is not a valid {kind.__name__}") from e

    def _set(self, section: str, key: str, value: Any):
        self.values[section][key] = self._coerce(section, key, value)

    def _resolve_environment(self):
        """The work directory may come from PREVIEW_RESTORE_WORK_DIR when left at its default."""
        default_dir = self.defaults()["paths"]["work_dir"]
        current = self.values["paths"]["work_dir"]
        explicit = current if current != default_dir else None
        self.values["paths"]["work_dir"] = get_param_value("work_dir", explicit, default_dir)

    def _validate_config(self):
        """Range checks that the schema types alone cannot express."""
        sampler = self.values["sampler"]
        nets = self.values["nets"]
        training = self.values["training"]
        if self.values["schedule"]["kind"] != "cosine":
            raise ConfigError(f"Unsupported schedule kind '{self.values['schedule']['kind']}'. Allowed: ['cosine']")
        if self.values["schedule"]["steps"] < 2:
            raise ConfigError("schedule.steps must be at least 2")
        if sampler["mode"] not in SAMPLER_MODES:
            raise ConfigError(f"Invalid sampler mode '{sampler['mode']}'. Allowed: {list(SAMPLER_MODES)}")
        if not 1 <= sampler["steps"] < self.values["schedule"]["steps"]:
            raise ConfigError("sampler.steps must lie in [1, schedule.steps)")
        if not 0 <= sampler["eta_cutoff"] < sampler["steps"]:
            raise ConfigError("sampler.eta_cutoff must satisfy 0 <= eta < steps")
        if sampler["creative_cutoff"] > sampler["steps"]:
            raise ConfigError("sampler.creative_cutoff must not exceed sampler.steps")
        if sampler["delta_max"] <= 0:
            raise ConfigError("sampler.delta_max must be positive")
        if nets["image_size"] % 8 or nets["image_size"] % nets["patch_size"]:
            raise ConfigError("nets.image_size must be divisible by 8 and by nets.patch_size")
        if len(self.lq_weights) != 3:
            raise ConfigError("nets.lq_weights needs one weight per UNet level (3)")
        if any(level not in (0, 1, 2) for level in self.self_attn_levels):
            raise ConfigError("nets.self_attn_levels entries must be 0, 1 or 2")
        for key in ("lq_dropout", "class_dropout"):
            if not 0.0 <= training[key] <= 1.0:
                raise ConfigError(f"training.{key} must lie in [0, 1]")
        if not 0.0 <= self.values["data"]["second_pass_prob"] <= 1.0:
            raise ConfigError("data.second_pass_prob must lie in [0, 1]")

    def __getattr__(self, name: str) -> SimpleNamespace:
        values = self.__dict__.get("values")
        if values is not None and name in values:
            return SimpleNamespace(**values[name])
        raise AttributeError(name)

    @property
    def lq_weights(self):
        return parse_float_list(self.values["nets"]["lq_weights"])

    @property
    def self_attn_levels(self):
        return parse_int_list(self.values["nets"]["self_attn_levels"])

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        """Return a copy with ``section.key=value`` overrides applied."""
        values = copy.deepcopy(self.values)
        for override in overrides:
            section, key, value = self.parse_override(override)
            self._entry(section, key)
            values[section][key] = self._coerce(section, key, value)
        return RunConfig(values, source=self.source, logger=self.logger)

    def with_values(self, section: str, **entries) -> "RunConfig":
        """Return a copy with typed values replaced in one section."""
        values = copy.deepcopy(self.values)
        for key, value in entries.items():
            values[section][key] = self._coerce(section, key, value)
        return RunConfig(values, source=self.source, logger=self.logger)

    def to_ini(self) -> str:
        """Render the resolved configuration as INI text."""
        parser = configparser.ConfigParser(interpolation=None)
        for section, entries in self.values.items():
            parser[section] = {key: str(value).lower() if isinstance(value, bool) else str(value)
                               for key, value in entries.items()}
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every resolved value except paths."""
        hashed = {section: entries for section, entries in self.values.items() if section != "paths"}
        return hashlib.sha256(json.dumps(hashed, sort_keys=True).encode("utf-8")).hexdigest()

    def log_params(self):
        """Logs the resolved configuration in a structured format."""
        self.logger.log_block("Run Configuration", [
            f"Source (source): {self.source}",
            f"Config Hash (config_hash): {self.config_hash}",
        ], config_text=self.to_ini())
