"""Runtime configuration, loadable from a TOML key/value file."""
import sys
from dataclasses import dataclass, field, fields, replace

from .errors import InputError
from .feature_db import FEATURE_SLICES

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# (name, lower bound of height ratio), tallest first; the last band has no lower bound
DEFAULT_HEIGHT_BANDS = (
    ("tiptoe", 1.02),
    ("normal", 0.85),
    ("small_bend", 0.70),
    ("medium_bend", 0.55),
    ("crouch", float("-inf")),
)


@dataclass(frozen=True)
class RuntimeConfig:
    search_interval: int = 10
    blend_time: float = 0.25
    beta: float = 5.0
    smoother: str = "exponential"
    weights: dict = field(default_factory=dict)
    height_bands: tuple = DEFAULT_HEIGHT_BANDS
    band_hysteresis: float = 0.02
    alpha: float = 0.3
    drift_gain: float = 0.5
    foot_lock: bool = True
    unlock_distance: float = 0.2
    foot_lock_blend: float = 0.1
    arm_ik: bool = True
    head_center_offset: float = 0.09
    contact_threshold: float = 0.15
    leaf_size: int = 16
    group_size: int = 64
    accelerated_search: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.search_interval < 1:
            raise InputError("search_interval must be >= 1")
        if self.blend_time < 0 or self.foot_lock_blend < 0:
            raise InputError("blend times must be non-negative")
        if self.beta <= 0:
            raise InputError("beta must be positive")
        if self.smoother not in ("exponential", "spring"):
            raise InputError(f"unknown smoother {self.smoother!r}")
        if self.alpha <= 0 or self.unlock_distance <= 0:
            raise InputError("alpha and unlock_distance must be positive")
        if self.drift_gain < 0 or self.band_hysteresis < 0:
            raise InputError("drift_gain and band_hysteresis must be non-negative")
        if self.leaf_size < 1 or self.group_size % self.leaf_size:
            raise InputError("group_size must be a positive multiple of leaf_size")
        for k, v in self.weights.items():
            if k not in FEATURE_SLICES or v < 0:
                raise InputError(f"bad feature weight {k!r} = {v!r}")
        bounds = [b for _, b in self.height_bands]
        if any(a <= b for a, b in zip(bounds, bounds[1:])) or bounds[-1] != float("-inf"):
            raise InputError("height bands must have decreasing lower bounds ending with -inf")

    @property
    def band_names(self):
        return tuple(n for n, _ in self.height_bands)

    def with_overrides(self, **kw):
        return replace(self, **kw)


def config_from_mapping(data):
    data = dict(data)
    known = {f.name for f in fields(RuntimeConfig)}
    unknown = set(data) - known
    if unknown:
        raise InputError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    if "height_bands" in data:
        bands = data["height_bands"]
        if isinstance(bands, dict):
            bands = sorted(bands.items(), key=lambda kv: -kv[1])
        data["height_bands"] = tuple((str(n), float(b)) for n, b in bands) + (
            () if any(b == float("-inf") for _, b in bands) else (("crouch", float("-inf")),))
    if "weights" in data:
        data["weights"] = {str(k): float(v) for k, v in data["weights"].items()}
    try:
        return RuntimeConfig(**data)
    except TypeError as exc:
        raise InputError(str(exc)) from exc


def load_config(path=None):
    if path is None:
        return RuntimeConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(data)
