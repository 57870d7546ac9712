"""
Synthetic latent-variable systems.

A generator configuration describes one data-generating mechanism: latent
variables are drawn, propagated through a latent-to-observed weight matrix,
optionally squashed through a logistic link, and finally corrupted by
column-calibrated Gaussian measurement noise.

Distribution supports (none of which are pinned down by the method itself):

* zero-mean uniform values are U(-1, 1), positive-only uniform values U(0, 1)
* zero-mean Gaussian values are N(0, 1), positive-only Gaussian values |N(0, 1)|
* correlated latents multiply the raw draws by the Cholesky factor of the
  compound-symmetric correlation matrix, before positive-only folding
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy import special


class Distribution(str, enum.Enum):
    UNIFORM = "Uniform"
    GAUSSIAN = "Gaussian"


class Scale(str, enum.Enum):
    ZERO_MEAN = "ZeroMean"
    POSITIVE_ONLY = "PositiveOnly"


class Importance(str, enum.Enum):
    EQUAL = "Equal"
    MONOTONIC_DECREASING = "MonotonicDecreasing"


class Link(str, enum.Enum):
    LINEAR = "Linear"
    SIGMOID = "Sigmoid"


class Rotation(str, enum.Enum):
    NONE = "None"
    VARIMAX = "Varimax"
    PROMAX = "Promax"


class ConfigError(ValueError):
    """Invalid generator configuration; ``field`` names the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateColumnError(ValueError):
    """A noise-free observed column has zero variance."""

    def __init__(self, column: int):
        super().__init__(f"observed column {column} has zero variance before noise")
        self.column = column


_ENUM_FIELDS = {
    "latent_distribution": Distribution,
    "weight_distribution": Distribution,
    "latent_scale": Scale,
    "weight_scale": Scale,
    "importance": Importance,
    "link": Link,
    "rotation": Rotation,
}

_INT_FIELDS = ("n_participants", "n_latents", "n_observed", "seed")
_FLOAT_FIELDS = ("noise_sd_factor", "latent_correlation")


@dataclass(frozen=True)
class GeneratorConfig:
    """Full hyperparameter description of one data-generating mechanism."""

    n_participants: int = 1000
    n_latents: int = 2
    n_observed: int = 100
    latent_distribution: Distribution = Distribution.GAUSSIAN
    weight_distribution: Distribution = Distribution.GAUSSIAN
    latent_scale: Scale = Scale.ZERO_MEAN
    weight_scale: Scale = Scale.ZERO_MEAN
    noise_sd_factor: float = 0.0
    latent_correlation: float = 0.0
    importance: Importance = Importance.MONOTONIC_DECREASING
    link: Link = Link.LINEAR
    rotation: Rotation = Rotation.NONE
    seed: int = 0

    def __post_init__(self):
        # coerce plain strings / numbers so configs built from JSON or TOML
        # compare equal to ones built in code
        for name, cls in _ENUM_FIELDS.items():
            value = getattr(self, name)
            if not isinstance(value, cls):
                try:
                    object.__setattr__(self, name, cls(value))
                except ValueError:
                    levels = ", ".join(m.value for m in cls)
                    raise ConfigError(name, f"{value!r} is not one of {levels}") from None
        for name in _INT_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                if isinstance(value, (float, np.floating)) and float(value).is_integer():
                    value = int(value)
                else:
                    raise ConfigError(name, f"expected an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in _FLOAT_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
                raise ConfigError(name, f"expected a number, got {value!r}")
            object.__setattr__(self, name, float(value))
        self.validate()

    def validate(self) -> None:
        if self.n_participants < 3:
            raise ConfigError("n_participants", "must be >= 3")
        if self.n_latents < 1:
            raise ConfigError("n_latents", "must be >= 1")
        if self.n_observed < 1:
            raise ConfigError("n_observed", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        for name in _FLOAT_FIELDS:
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ConfigError(name, f"must lie in [0, 1], got {value}")

    def replace(self, **changes) -> "GeneratorConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.value if isinstance(value, enum.Enum) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        return cls.from_dict(json.loads(text))

    def sort_key(self) -> tuple:
        """Deterministic total order used to break ties."""
        return tuple(str(v) if isinstance(v, str) else v for v in self.to_dict().values())


def best_case_config(n_latents: int = 2, **overrides) -> GeneratorConfig:
    """Linear, orthogonal, zero-mean weights, monotonic importance, n = 1000, p = 100."""
    base = dict(
        n_participants=1000,
        n_latents=n_latents,
        n_observed=100,
        latent_distribution=Distribution.UNIFORM,
        weight_distribution=Distribution.GAUSSIAN,
        latent_scale=Scale.ZERO_MEAN,
        weight_scale=Scale.ZERO_MEAN,
        noise_sd_factor=0.0,
        latent_correlation=0.0,
        importance=Importance.MONOTONIC_DECREASING,
        link=Link.LINEAR,
        rotation=Rotation.NONE,
    )
    base.update(overrides)
    return GeneratorConfig(**base)


@dataclass
class SyntheticSystem:
    config: GeneratorConfig
    latents: np.ndarray
    weights: np.ndarray
    observed: np.ndarray
    observed_noise_free: np.ndarray


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def cs_cholesky(m: int, c: float) -> np.ndarray:
    """Lower Cholesky factor of the m x m compound-symmetric matrix (1 on the diagonal, c off it).

    At c = 1 the matrix is singular and every row is the first unit vector.
    """
    if c >= 1.0:
        out = np.zeros((m, m))
        out[:, 0] = 1.0
        return out
    return np.linalg.cholesky((1.0 - c) * np.eye(m) + c)


def _raw_draws(rng, n, m, distribution, scale):
    if distribution is Distribution.UNIFORM:
        low = 0.0 if scale is Scale.POSITIVE_ONLY else -1.0
        return rng.uniform(low, 1.0, size=(n, m))
    return rng.standard_normal((n, m))


def sample_latents(config: GeneratorConfig, rng) -> np.ndarray:
    """Draw the ``n_participants x n_latents`` matrix of true latent values.

    Correlation is imposed on the raw draws through the compound-symmetric
    Cholesky factor, before the half-normal fold of positive-only Gaussian
    latents. The fold shrinks the realised correlation (about .22 for a
    target of .5); uniform latents keep the target in expectation.
    """
    rng = _as_rng(rng)
    n, m = config.n_participants, config.n_latents
    dist, scale = config.latent_distribution, config.latent_scale
    raw = _raw_draws(rng, n, m, dist, scale)
    if m > 1 and config.latent_correlation > 0.0:
        raw = raw @ cs_cholesky(m, config.latent_correlation).T
    if dist is Distribution.GAUSSIAN and scale is Scale.POSITIVE_ONLY:
        return np.abs(raw)
    return raw


def sample_weights(config: GeneratorConfig, rng) -> np.ndarray:
    """Draw the ``n_latents x n_observed`` weight matrix, importance scaling applied."""
    rng = _as_rng(rng)
    shape = (config.n_latents, config.n_observed)
    if config.weight_distribution is Distribution.UNIFORM:
        low = 0.0 if config.weight_scale is Scale.POSITIVE_ONLY else -1.0
        w = rng.uniform(low, 1.0, size=shape)
    else:
        w = rng.standard_normal(shape)
        if config.weight_scale is Scale.POSITIVE_ONLY:
            w = np.abs(w)
    if config.importance is Importance.MONOTONIC_DECREASING:
        w = w / np.arange(1, config.n_latents + 1)[:, None]
    return w


def propagate(config: GeneratorConfig, latents: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Noise-free observed data: the link applied to ``latents @ weights``."""
    mixed = latents @ weights
    sd = mixed.std(axis=0)
    scale = np.abs(mixed).max(axis=0)
    bad = np.flatnonzero(sd <= 1e-12 * np.maximum(scale, 1e-300))
    if bad.size:
        raise DegenerateColumnError(int(bad[0]))
    if config.link is Link.SIGMOID:
        z = (mixed - mixed.mean(axis=0)) / sd
        return special.expit(z)
    return mixed


def add_noise(config: GeneratorConfig, noise_free: np.ndarray, rng) -> np.ndarray:
    rng = _as_rng(rng)
    if config.noise_sd_factor == 0.0:
        return noise_free.copy()
    sd = config.noise_sd_factor * noise_free.std(axis=0)
    return noise_free + rng.standard_normal(noise_free.shape) * sd


def generate(config: GeneratorConfig, rng=None, weights: np.ndarray | None = None) -> SyntheticSystem:
    """Produce one synthetic system.

    Parameters
    ----------
    config : GeneratorConfig
    rng : numpy Generator, seed, or None
        Random stream. ``None`` seeds from ``config.seed``.
    weights : ndarray, optional
        Reuse an existing weight matrix (paired-dataset mode); only latents
        and noise are redrawn.
    """
    rng = _as_rng(config.seed if rng is None else rng)
    if weights is None:
        weights = sample_weights(config, rng)
    elif weights.shape != (config.n_latents, config.n_observed):
        raise ValueError(f"weights shape {weights.shape} does not match config")
    latents = sample_latents(config, rng)
    noise_free = propagate(config, latents, weights)
    observed = add_noise(config, noise_free, rng)
    return SyntheticSystem(config, latents, weights, observed, noise_free)
