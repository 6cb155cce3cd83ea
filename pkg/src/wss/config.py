"""Pipeline configuration and the flat `key = value` config file format."""

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CrfSettings:
    """Dense-CRF refinement knobs (mean-field iterations and kernel shapes)."""

    iterations: int = 10
    gaussian_weight: float = 3.0
    gaussian_sigma_xy: float = 3.0
    bilateral_weight: float = 5.0
    bilateral_sigma_xy: float = 50.0
    bilateral_sigma_rgb: float = 10.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("crf iterations must be >= 0")
        for name in ("gaussian_weight", "bilateral_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.gaussian_weight > 0 and self.gaussian_sigma_xy <= 0:
            raise ConfigError("gaussian_sigma_xy must be > 0 when its weight is > 0")
        if self.bilateral_weight > 0 and (
            self.bilateral_sigma_xy <= 0 or self.bilateral_sigma_rgb <= 0
        ):
            raise ConfigError("bilateral sigmas must be > 0 when its weight is > 0")


@dataclass(frozen=True)
class PipelineConfig:
    """All tunables of the two-stage pipeline, loadable from a flat config file."""

    lambda_balance: float = 1.0
    batch_size: int = 16
    crop_size: int = 320
    learning_rate: float = 16e-4
    weight_decay: float = 5e-4
    momentum: float = 0.9
    stage1_iters: int = 5000
    stage2_iters: int = 11000
    lr_drop_factor: float = 10.0
    inference_scales: tuple = (0.75, 1.0, 1.25)
    fg_min: float = 0.20
    fg_max: float = 0.80
    retrieved_max_dim: int = 340
    target_max_dim: int = 500
    crf_iterations: int = 10
    crf_gaussian_weight: float = 3.0
    crf_gaussian_sigma_xy: float = 3.0
    crf_bilateral_weight: float = 5.0
    crf_bilateral_sigma_xy: float = 50.0
    crf_bilateral_sigma_rgb: float = 10.0
    checkpoint_every: int = 1000
    hflip: bool = True
    genmask_crf: bool = False
    eval_crf: bool = True

    def __post_init__(self):
        if not 0 <= self.fg_min < self.fg_max <= 1:
            raise ConfigError("need 0 <= fg_min < fg_max <= 1")
        if any(s <= 0 for s in self.inference_scales) or not self.inference_scales:
            raise ConfigError("inference_scales must be nonempty and all > 0")
        if self.lambda_balance < 0:
            raise ConfigError("lambda_balance must be >= 0")
        for name in ("batch_size", "crop_size", "stage1_iters", "stage2_iters",
                     "checkpoint_every", "retrieved_max_dim", "target_max_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        self.crf()  # validate the CRF slice

    def crf(self) -> CrfSettings:
        return CrfSettings(
            iterations=self.crf_iterations,
            gaussian_weight=self.crf_gaussian_weight,
            gaussian_sigma_xy=self.crf_gaussian_sigma_xy,
            bilateral_weight=self.crf_bilateral_weight,
            bilateral_sigma_xy=self.crf_bilateral_sigma_xy,
            bilateral_sigma_rgb=self.crf_bilateral_sigma_rgb,
        )


def _parse_value(text, ftype, key, lineno):
    text = text.strip()
    try:
        if ftype is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if ftype is int:
            return int(text)
        if ftype is float:
            return float(text)
        if ftype is tuple:
            return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {text!r} for key {key!r}") from None
    raise ConfigError(f"line {lineno}: unsupported field type for key {key!r}")


def load_config(path) -> PipelineConfig:
    """Read a `key = value` file; keys must exactly match PipelineConfig fields."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    valid = {f.name for f in dataclasses.fields(PipelineConfig)}
    defaults = PipelineConfig()
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in valid:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _parse_value(value, type(getattr(defaults, key)), key, lineno)
    return PipelineConfig(**values)


def save_config(config: PipelineConfig, path):
    """Write all fields in the flat file format (round-trips with load_config)."""
    lines = []
    for f in dataclasses.fields(PipelineConfig):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
