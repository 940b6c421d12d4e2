"""Transition kernels and chain execution.

Kernels are immutable specs with a ``step(theta, rng) -> (theta_next, aux)``
method; :func:`run_chain` materialises a finite path.  The Metropolis-
Hastings kernel works on the collapsed parameter chain but records the
proposal and the uniform draw of every step, which is equivalent in law to
carrying the extended (proposal, uniform, state) chain.  The approximate
Gibbs kernel is the Gaussian AR(1) surrogate with autoregression matrix
``B = K_full^{-1} J`` and innovation covariance
``(K_full^{-1} + K_full^{-1} J K_full^{-1}) / n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .estimators import ChainPath
from .measures import GaussianMeasure

__all__ = [
    "MHStepRecord",
    "LocalizationMap",
    "IIDKernel",
    "MHKernel",
    "GibbsKernel",
    "ApproxGibbsKernel",
    "TransitionKernel",
    "mh_step",
    "gibbs_step",
    "approx_gibbs_step",
    "run_chain",
    "localize",
    "perturbed_start",
]


@dataclass(frozen=True)
class MHStepRecord:
    """One Metropolis-Hastings step: proposal, uniform draw, decision."""

    proposed: np.ndarray
    uniform_draw: float
    alpha: float
    accepted: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.uniform_draw <= 1.0:
            raise ValueError("uniform draw outside [0, 1]")
        if self.accepted != (self.uniform_draw <= self.alpha):
            raise ValueError("accepted flag inconsistent with u <= alpha")


def mh_step(
    log_target: Callable[[np.ndarray], float],
    proposal_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray],
    theta: np.ndarray,
    rng: np.random.Generator,
    proposal_logpdf: Callable[[np.ndarray, np.ndarray], float] | None = None,
) -> tuple[np.ndarray, MHStepRecord]:
    """One Metropolis-Hastings transition from ``theta``.

    ``proposal_logpdf(x, y)`` is the log density of proposing ``y`` from
    ``x``; pass ``None`` for symmetric proposals.  A proposal where the
    target is -inf gets acceptance probability 0; NaN anywhere is an error.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    lt_cur = float(log_target(theta))
    if not np.isfinite(lt_cur):
        raise ValueError("log target must be finite at the current state")
    proposed = np.atleast_1d(np.asarray(proposal_sampler(theta, rng), dtype=float))
    lt_prop = float(log_target(proposed))
    if np.isnan(lt_prop):
        raise ValueError("log target is NaN at the proposal")
    log_ratio = lt_prop - lt_cur
    if proposal_logpdf is not None:
        fwd = float(proposal_logpdf(theta, proposed))
        back = float(proposal_logpdf(proposed, theta))
        if np.isnan(fwd) or np.isnan(back):
            raise ValueError("proposal log density is NaN")
        log_ratio += back - fwd
    if np.isnan(log_ratio):
        raise ValueError("acceptance ratio is NaN")
    alpha = float(np.exp(min(0.0, log_ratio))) if log_ratio > -np.inf else 0.0
    u = float(rng.uniform())
    accepted = u <= alpha
    record = MHStepRecord(proposed, u, alpha, accepted)
    return (proposed if accepted else theta), record


def gibbs_step(model, x_data, theta, rng: np.random.Generator):
    """One two-block Gibbs transition: latents given theta, then theta given latents."""
    y = model.sample_latent(x_data, theta, rng)
    theta_next = model.sample_posterior_full(x_data, y, rng)
    return y, theta_next


@dataclass
class ApproxGibbsSpec:
    """Parameters of the Gaussian AR(1) surrogate for the Gibbs chain."""

    theta_hat: np.ndarray
    i_mat: np.ndarray
    j_mat: np.ndarray
    k_mat: np.ndarray
    n: int
    b_mat: np.ndarray = field(init=False, repr=False)
    _innov_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.theta_hat = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        p = self.theta_hat.size
        for name in ("i_mat", "j_mat", "k_mat"):
            mat = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if mat.shape != (p, p):
                raise ValueError(f"{name} must be {p}x{p}")
            if np.abs(mat - mat.T).max() > 1e-10 * max(1.0, np.abs(mat).max()):
                raise ValueError(f"{name} must be symmetric")
            setattr(self, name, mat)
        if self.n < 1:
            raise ValueError("n must be at least 1")
        k_inv = np.linalg.inv(self.k_mat)
        self.b_mat = k_inv @ self.j_mat
        innov = (k_inv + k_inv @ self.j_mat @ k_inv) / self.n
        innov = (innov + innov.T) / 2.0
        try:
            self._innov_chol = np.linalg.cholesky(innov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("surrogate innovation covariance not SPD") from exc

    def stationary_law(self) -> GaussianMeasure:
        """The invariant law ``N(theta_hat, (n I)^{-1})`` of the surrogate."""
        return GaussianMeasure(self.theta_hat, np.linalg.inv(self.i_mat) / self.n)

    def draws(self, theta, size: int, rng: np.random.Generator) -> np.ndarray:
        """``size`` independent one-step draws from a fixed ``theta``."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        mean = self.theta_hat + self.b_mat @ (theta - self.theta_hat)
        z = rng.standard_normal((size, self.theta_hat.size))
        return mean + z @ self._innov_chol.T


def approx_gibbs_step(
    spec: ApproxGibbsSpec, theta, rng: np.random.Generator
) -> np.ndarray:
    """One draw from ``N(theta_hat + B (theta - theta_hat), innovation)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    mean = spec.theta_hat + spec.b_mat @ (theta - spec.theta_hat)
    return mean + spec._innov_chol @ rng.standard_normal(spec.theta_hat.size)


@dataclass
class IIDKernel:
    """Independent draws from a fixed sampler (crude Monte Carlo)."""

    sampler: Callable[[np.random.Generator], np.ndarray]

    def step(self, theta, rng):
        return np.atleast_1d(np.asarray(self.sampler(rng), dtype=float)), None


@dataclass
class MHKernel:
    log_target: Callable[[np.ndarray], float]
    proposal_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    proposal_logpdf: Callable[[np.ndarray, np.ndarray], float] | None = None

    def step(self, theta, rng):
        theta_next, record = mh_step(
            self.log_target, self.proposal_sampler, theta, rng, self.proposal_logpdf
        )
        return theta_next, record


@dataclass
class GibbsKernel:
    model: object
    x_data: object

    def step(self, theta, rng):
        y, theta_next = gibbs_step(self.model, self.x_data, theta, rng)
        return theta_next, y

    def initial_latent(self, theta, rng):
        return self.model.sample_latent(self.x_data, theta, rng)


@dataclass
class ApproxGibbsKernel:
    spec: ApproxGibbsSpec

    def step(self, theta, rng):
        return approx_gibbs_step(self.spec, theta, rng), None


TransitionKernel = Union[IIDKernel, MHKernel, GibbsKernel, ApproxGibbsKernel]


def run_chain(
    kernel: TransitionKernel,
    initial: np.ndarray,
    m: int,
    rng: np.random.Generator,
) -> ChainPath:
    """Run ``m`` states starting from ``initial`` (which is state 0).

    Deterministic given the kernel, the initial state and the generator
    state.  Gibbs chains carry their latent blocks; state 0 gets a latent
    drawn at the initial parameter, matching the stationary joint start.
    MH chains carry per-step records (state 0 has ``None``).
    """
    if m < 1:
        raise ValueError("chain length must be at least 1")
    theta = np.atleast_1d(np.asarray(initial, dtype=float))
    thetas = np.empty((m, theta.size))
    thetas[0] = theta
    aux_list: list | None = None
    if isinstance(kernel, GibbsKernel):
        aux_list = [kernel.initial_latent(theta, rng)]
    elif isinstance(kernel, MHKernel):
        aux_list = [None]
    for i in range(1, m):
        theta, aux = kernel.step(theta, rng)
        thetas[i] = theta
        if aux_list is not None:
            aux_list.append(aux)
    return ChainPath(thetas, aux_list)


@dataclass(frozen=True)
class LocalizationMap:
    """Affine recentring ``theta -> (theta - theta_hat) / delta_n``."""

    theta_hat: np.ndarray
    delta_n: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "theta_hat", np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        )
        if not self.delta_n > 0:
            raise ValueError("delta_n must be positive")

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return (points - self.theta_hat) / self.delta_n

    def invert_points(self, points: np.ndarray) -> np.ndarray:
        return points * self.delta_n + self.theta_hat


def localize(sample, lmap: LocalizationMap):
    """Push a weighted sample through the localization map (weights kept)."""
    from .measures import WeightedSample

    if sample.dim != lmap.theta_hat.size:
        raise ValueError("localization map dimension mismatch")
    return WeightedSample(lmap.apply_points(sample.points), sample.weights)


def delocalize(sample, lmap: LocalizationMap):
    """Inverse of :func:`localize`."""
    from .measures import WeightedSample

    if sample.dim != lmap.theta_hat.size:
        raise ValueError("localization map dimension mismatch")
    return WeightedSample(lmap.invert_points(sample.points), sample.weights)


def perturbed_start(
    theta_tilde: np.ndarray,
    n: int,
    q_shape: GaussianMeasure,
    rng: np.random.Generator,
) -> np.ndarray:
    """Non-stationary start ``theta_tilde + n^{-1/2} * (draw from q_shape)``.

    With ``theta_tilde`` any root-n-consistent estimate, chains started
    here stay within the localization scale of the stationary start.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    theta_tilde = np.atleast_1d(np.asarray(theta_tilde, dtype=float))
    return theta_tilde + q_shape.sample(1, rng)[0] / np.sqrt(n)
