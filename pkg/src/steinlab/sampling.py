"""Ball geometry and simulation of Poisson random measures with Lebesgue intensity."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError

DEFAULT_CHUNK = 8192


def ball_volume(d: int, R: float = 1.0) -> float:
    """Lebesgue volume of the ball of radius R in R^d."""
    if d < 1 or R <= 0:
        raise ValueError("need d >= 1 and R > 0")
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * R**d


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} (= d * v_d)."""
    return d * ball_volume(d)


def derive_seed(master_seed: int, replication_index: int) -> int:
    """64-bit child seed for stream ``replication_index`` of ``master_seed``.

    Delegates the mixing to numpy's SeedSequence spawn keys, so children of one
    master are independent streams and every child is reachable directly.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replication_index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    # Philox is counter based: stream state depends only on the seed.
    return np.random.Generator(np.random.Philox(int(seed)))


def uniform_in_ball(rng: np.random.Generator, n: int, d: int, R: float) -> np.ndarray:
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0.0] = 1.0
    radii = R * rng.random(n) ** (1.0 / d)
    return g / norms[:, None] * radii[:, None]


@dataclass(frozen=True)
class SamplerSpec:
    dim: int
    radius: float
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError("dimension must be >= 2; d = 1 is not supported")
        if not self.radius > 0:
            raise ConfigError("radius must be positive")


@dataclass(frozen=True)
class Configuration:
    """A finite point set of a Poisson random measure restricted to B(radius)."""

    points: np.ndarray
    radius: float
    dim: int

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ConfigurationBatch:
    """Many configurations stored as one flat point array.

    ``owner[j]`` is the configuration index of ``points[j]``; points of one
    configuration are contiguous.
    """

    points: np.ndarray
    counts: np.ndarray
    radius: float
    dim: int
    owner: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    def per_config_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum point values (shape (P,) or (P, m)) within each configuration."""
        if values.ndim == 1:
            return np.bincount(self.owner, weights=values, minlength=self.size)
        return np.stack([self.per_config_sum(values[:, j]) for j in range(values.shape[1])], axis=1)

    def configuration(self, i: int) -> Configuration:
        start = int(self.counts[:i].sum())
        return Configuration(self.points[start:start + int(self.counts[i])], self.radius, self.dim)


def _draw(rng: np.random.Generator, dim: int, radius: float, n_configs: int) -> ConfigurationBatch:
    mass = ball_volume(dim, radius)
    counts = rng.poisson(mass, size=n_configs)
    pts = uniform_in_ball(rng, int(counts.sum()), dim, radius)
    owner = np.repeat(np.arange(n_configs), counts)
    return ConfigurationBatch(pts, counts, radius, dim, owner)


def sample_configuration(spec: SamplerSpec) -> Configuration:
    """One configuration: N ~ Poisson(v_d R^d) points, i.i.d. uniform on B(R)."""
    rng = make_rng(spec.seed)
    n = int(rng.poisson(ball_volume(spec.dim, spec.radius)))
    return Configuration(uniform_in_ball(rng, n, spec.dim, spec.radius), spec.radius, spec.dim)


def sample_batch(spec: SamplerSpec, n_configs: int) -> ConfigurationBatch:
    return _draw(make_rng(spec.seed), spec.dim, spec.radius, n_configs)


@dataclass(frozen=True)
class MCSettings:
    replications: int = 100_000
    master_seed: int = 20240601
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def run_replications(fn: Callable[[ConfigurationBatch], np.ndarray | tuple],
                     dim: int, radius: float, mc: MCSettings):
    """Apply ``fn`` to chunks of simulated configurations and concatenate.

    Chunk c uses ``derive_seed(master_seed, c)``. Chunking does not depend on
    the worker count and results are merged in chunk order, so the output is
    identical for any number of workers.
    """
    n_chunks = -(-mc.replications // mc.chunk_size)

    def one(c: int):
        size = min(mc.chunk_size, mc.replications - c * mc.chunk_size)
        batch = _draw(make_rng(derive_seed(mc.master_seed, c)), dim, radius, size)
        return fn(batch)

    if mc.workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=mc.workers) as pool:
            parts = list(pool.map(one, range(n_chunks)))
    else:
        parts = [one(c) for c in range(n_chunks)]
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)


def mean_and_se(values: np.ndarray) -> tuple[float, float]:
    """Sample mean (compensated summation) and its standard error."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = math.fsum(values) / n
    var = math.fsum((values - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return mean, math.sqrt(var / n)


def variance_and_se(values: np.ndarray) -> tuple[float, float]:
    """Unbiased sample variance and its asymptotic standard error."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = math.fsum(values) / n
    c = values - mean
    var = math.fsum(c * c) / (n - 1)
    m4 = math.fsum(c**4) / n
    return var, math.sqrt(max(m4 - var * var, 0.0) / n)
