"""Estimator sequences mapping a chain prefix to a measure on the parameter space.

Each estimator consumes the first ``m`` states of a :class:`ChainPath` and
returns a :class:`~mcbench.measures.WeightedSample`: the plain empirical
distribution, burn-in and thinning variants, importance weighting (raw or
self-normalized), and Rao-Blackwellization, which replaces each visited
point mass by fresh draws from the parameter-given-latent conditional.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measures import WeightedSample

__all__ = [
    "ChainPath",
    "EstimatorKind",
    "empirical",
    "burn_in",
    "thinning",
    "importance_weighted",
    "rao_blackwell",
    "make_estimator",
]


@dataclass
class ChainPath:
    """A realised chain: ``thetas`` has shape ``(length, p)``.

    ``latents`` optionally carries one opaque per-state payload (for a
    Gibbs chain, the latent block drawn on the way to each state); it is
    all-or-nothing across states.
    """

    thetas: np.ndarray
    latents: list | None = None

    def __post_init__(self) -> None:
        th = np.asarray(self.thetas, dtype=float)
        if th.ndim == 1:
            th = th.reshape(-1, 1)
        if th.ndim != 2 or th.shape[0] < 1:
            raise ValueError("thetas must be a nonempty (length, p) array")
        if not np.all(np.isfinite(th)):
            raise ValueError("chain states must be finite")
        if self.latents is not None and len(self.latents) != th.shape[0]:
            raise ValueError("latents must be present for all states or none")
        self.thetas = th

    def __len__(self) -> int:
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]


def _check_prefix(path: ChainPath, m: int, minimum: int = 1) -> None:
    if m < minimum:
        raise ValueError(f"m must be at least {minimum}, got {m}")
    if m > len(path):
        raise ValueError(f"m={m} exceeds chain length {len(path)}")


def empirical(path: ChainPath, m: int) -> WeightedSample:
    """Uniform weights 1/m on the first m states."""
    _check_prefix(path, m)
    return WeightedSample(path.thetas[:m], np.full(m, 1.0 / m))


def burn_in(path: ChainPath, m: int) -> WeightedSample:
    """Empirical distribution of states ``floor(m/2) .. m-1``."""
    _check_prefix(path, m)
    start = m // 2
    kept = m - start
    return WeightedSample(path.thetas[start:m], np.full(kept, 1.0 / kept))


def thinning(path: ChainPath, m: int) -> WeightedSample:
    """Empirical distribution of states ``0, 2, ..., 2*(floor(m/2)-1)``."""
    _check_prefix(path, m, minimum=2)
    kept = m // 2
    idx = 2 * np.arange(kept)
    return WeightedSample(path.thetas[idx], np.full(kept, 1.0 / kept))


def importance_weighted(
    path: ChainPath,
    m: int,
    ratio: Callable[[np.ndarray], np.ndarray],
    mode: str = "self_normalized",
) -> WeightedSample:
    """Importance-sampling estimator with density-ratio evaluator ``ratio``.

    ``raw`` keeps the defining weights ``ratio(theta_i) / m``; the result
    is generally not a probability measure (its mass fluctuates around 1)
    and is rejected by the distance routines until normalized.
    ``self_normalized`` divides by the summed ratios instead.
    """
    _check_prefix(path, m)
    if mode not in ("raw", "self_normalized"):
        raise ValueError(f"unknown importance mode {mode!r}")
    r = np.asarray(ratio(path.thetas[:m]), dtype=float).ravel()
    if r.shape != (m,):
        raise ValueError("ratio evaluator must return one value per state")
    if not np.all(np.isfinite(r)):
        raise ValueError("density ratios must be finite")
    if np.any(r < 0):
        raise ValueError("density ratios must be nonnegative")
    if mode == "raw":
        return WeightedSample(path.thetas[:m], r / m)
    total = r.sum()
    if total <= 0.0:
        raise ValueError("all density ratios are zero; cannot self-normalize")
    return WeightedSample(path.thetas[:m], r / total)


def rao_blackwell(
    path: ChainPath,
    m: int,
    model,
    x_data,
    draws_per_step: int,
    rng: np.random.Generator,
) -> WeightedSample:
    """Particle discretisation of ``(1/m) sum_i P(dtheta | x, y_i)``.

    For each of the first m states, draws ``draws_per_step`` fresh
    parameters from the model's parameter-given-latent conditional at that
    state's latent payload, all with uniform weights.
    """
    _check_prefix(path, m)
    if draws_per_step < 1:
        raise ValueError("draws_per_step must be at least 1")
    if path.latents is None:
        raise ValueError("Rao-Blackwellization needs a chain with latents")
    clouds = []
    for i in range(m):
        draws = model.sample_posterior_full(
            x_data, path.latents[i], rng, size=draws_per_step
        )
        clouds.append(np.atleast_2d(draws))
    pts = np.vstack(clouds)
    total = m * draws_per_step
    return WeightedSample(pts, np.full(total, 1.0 / total))


@dataclass
class EstimatorKind:
    """Named estimator choice as it appears in config files.

    ``variant`` is one of ``empirical | burn_in | thinning | importance |
    rao_blackwell``; ``draws_per_step`` applies to Rao-Blackwellization,
    ``is_mode`` and ``ratio`` to importance weighting.
    """

    variant: str
    draws_per_step: int = 1
    is_mode: str = "self_normalized"
    ratio: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, repr=False
    )

    _VARIANTS = ("empirical", "burn_in", "thinning", "importance", "rao_blackwell")

    def __post_init__(self) -> None:
        if self.variant not in self._VARIANTS:
            raise ValueError(f"unknown estimator {self.variant!r}")
        if self.variant == "rao_blackwell" and self.draws_per_step < 1:
            raise ValueError("rao_blackwell needs draws_per_step >= 1")
        if self.variant == "importance" and self.ratio is None:
            raise ValueError("importance estimator needs a ratio evaluator")


def make_estimator(kind: EstimatorKind, model=None, x_data=None):
    """Bind an :class:`EstimatorKind` to a callable ``(path, m, rng) -> sample``."""
    if kind.variant == "empirical":
        return lambda path, m, rng: empirical(path, m)
    if kind.variant == "burn_in":
        return lambda path, m, rng: burn_in(path, m)
    if kind.variant == "thinning":
        return lambda path, m, rng: thinning(path, m)
    if kind.variant == "importance":
        return lambda path, m, rng: importance_weighted(
            path, m, kind.ratio, kind.is_mode
        )
    if kind.variant == "rao_blackwell":
        if model is None or x_data is None:
            raise ValueError("rao_blackwell estimator needs model and data")
        return lambda path, m, rng: rao_blackwell(
            path, m, model, x_data, kind.draws_per_step, rng
        )
    raise AssertionError(kind.variant)
