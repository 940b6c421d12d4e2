"""Concrete data-augmentation models and the two non-consistent scenario generators.

The workhorse is :class:`NormalAugmentationModel`: latent ``y ~ N(theta,
Sigma_y)`` observed through ``x | y ~ N(y, Sigma_x)``.  Everything the
asymptotic theory needs is available in closed form and doubles as a test
oracle: the marginal law ``x | theta = N(theta, Sigma_y + Sigma_x)``, all
conditionals (conjugate Gaussians), the score functions, and the
information triple

    I = (Sigma_y + Sigma_x)^{-1},  K_full = Sigma_y^{-1},  J = K_full - I.

The demo generators realise the two classic failure modes of naive Monte
Carlo at scale: importance sampling across many dimensions, and a
Metropolis chain whose proposal shrinks with the problem size.  Both come
with the analytic lower bounds on the achievable risk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from .kernels import MHKernel, run_chain
from .measures import DistanceEstimate, GaussianMeasure

__all__ = [
    "ModelSpec",
    "NormalAugmentationModel",
    "marginal_qmd_derivative",
    "HighDimISResult",
    "ShrinkingMHResult",
    "demo_high_dim_is",
    "demo_shrinking_mh",
    "clamp_witness_mean",
    "tail_witness_mean",
]

_NORM_PDF_0 = 1.0 / np.sqrt(2.0 * np.pi)


def _norm_pdf(x: float) -> float:
    return _NORM_PDF_0 * np.exp(-0.5 * x * x)


class ModelSpec(Protocol):
    """Capabilities a data-augmentation model must provide."""

    p: int

    def sample_data(self, theta, n, rng): ...
    def sample_latent(self, x_n, theta, rng): ...
    def sample_posterior_full(self, x_n, y_n, rng, size=None): ...
    def sample_posterior_marginal(self, x_n, rng, size=None): ...
    def score_joint(self, x, y, theta): ...
    def score_marginal(self, x, theta): ...
    def info_marginal(self, theta): ...
    def info_full(self, theta): ...
    def info_latent(self, theta): ...
    def point_estimate(self, x_n): ...


def _as_spd(name: str, mat, p: int) -> np.ndarray:
    m = np.asarray(mat, dtype=float)
    if m.ndim == 0:
        m = np.eye(p) * float(m)
    elif m.ndim == 1:
        m = np.diag(m)
    if m.shape != (p, p):
        raise ValueError(f"{name} must be {p}x{p}")
    if np.abs(m - m.T).max() > 1e-12 * max(1.0, np.abs(m).max()):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} must be positive definite") from exc
    return m


@dataclass
class NormalAugmentationModel:
    """Gaussian location model with a Gaussian latent layer.

    Scalars or diagonals are accepted for the covariance fields and are
    promoted to matrices.
    """

    p: int
    sigma_y: np.ndarray
    sigma_x: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError("dimension must be at least 1")
        self.sigma_y = _as_spd("sigma_y", self.sigma_y, self.p)
        self.sigma_x = _as_spd("sigma_x", self.sigma_x, self.p)
        self.prior_cov = _as_spd("prior_cov", self.prior_cov, self.p)
        pm = np.asarray(self.prior_mean, dtype=float)
        if pm.ndim == 0:
            pm = np.full(self.p, float(pm))
        if pm.shape != (self.p,):
            raise ValueError("prior_mean must be a p-vector")
        self.prior_mean = pm

        c = self._cache
        c["sy_inv"] = np.linalg.inv(self.sigma_y)
        c["sx_inv"] = np.linalg.inv(self.sigma_x)
        c["sm"] = self.sigma_y + self.sigma_x
        c["i_mat"] = np.linalg.inv(c["sm"])
        c["k_mat"] = c["sy_inv"]
        c["j_mat"] = c["k_mat"] - c["i_mat"]
        assert np.abs(c["j_mat"] - (c["k_mat"] - c["i_mat"])).max() <= 1e-12
        c["prior_prec"] = np.linalg.inv(self.prior_cov)
        c["v_latent"] = np.linalg.inv(c["sy_inv"] + c["sx_inv"])
        c["v_chol"] = np.linalg.cholesky(c["v_latent"])
        c["ly"] = np.linalg.cholesky(self.sigma_y)
        c["lx"] = np.linalg.cholesky(self.sigma_x)
        c["lm"] = np.linalg.cholesky(c["sm"])

    # --- information triple and scores -----------------------------------

    def info_marginal(self, theta=None) -> np.ndarray:
        return self._cache["i_mat"].copy()

    def info_full(self, theta=None) -> np.ndarray:
        return self._cache["k_mat"].copy()

    def info_latent(self, theta=None) -> np.ndarray:
        return self._cache["j_mat"].copy()

    def score_joint(self, x, y, theta) -> np.ndarray:
        """Score of the full-data law at theta; rows for batched (x, y)."""
        y = np.asarray(y, dtype=float)
        return (y - theta) @ self._cache["sy_inv"].T

    def score_marginal(self, x, theta) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - theta) @ self._cache["i_mat"].T

    def marginal_logpdf(self, x, theta) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x - theta
        sol = scipy.linalg.solve_triangular(self._cache["lm"], diff.T, lower=True)
        quad = np.einsum("ij,ij->j", sol, sol)
        logdet = 2.0 * np.log(np.diag(self._cache["lm"])).sum()
        return -0.5 * (quad + logdet + self.p * np.log(2.0 * np.pi))

    # --- sampling ---------------------------------------------------------

    def sample_data(self, theta, n, rng) -> tuple[np.ndarray, np.ndarray]:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        y = theta + rng.standard_normal((n, self.p)) @ self._cache["ly"].T
        x = y + rng.standard_normal((n, self.p)) @ self._cache["lx"].T
        return x, y

    def sample_latent(self, x_n, theta, rng, size=None) -> np.ndarray:
        """Draw the latent block given data and theta (independent rows).

        ``size`` draws ``size`` independent blocks at once, shape
        ``(size, n, p)``.
        """
        means, _ = self.latent_conditional(x_n, theta)
        shape = means.shape if size is None else (size, *means.shape)
        z = rng.standard_normal(shape)
        return means + z @ self._cache["v_chol"].T

    def sample_gibbs_transition(self, x_n, theta, size, rng, chunk=256) -> np.ndarray:
        """``size`` independent one-step Gibbs outputs from a fixed ``theta``.

        Vectorised composition of the two blocks (latent draw, then
        parameter draw); distributionally identical to repeated
        :func:`mcbench.kernels.gibbs_step` calls from the same state.
        """
        c = self._cache
        x_n = np.atleast_2d(np.asarray(x_n, dtype=float))
        n = x_n.shape[0]
        prec = c["prior_prec"] + n * c["sy_inv"]
        cov = np.linalg.inv(prec)
        cov_chol = np.linalg.cholesky((cov + cov.T) / 2.0)
        base = c["prior_prec"] @ self.prior_mean
        out = np.empty((size, self.p))
        done = 0
        while done < size:
            take = min(chunk, size - done)
            y = self.sample_latent(x_n, theta, rng, size=take)
            ysum = y.sum(axis=1)
            means = (base + ysum @ c["sy_inv"].T) @ cov.T
            out[done : done + take] = means + rng.standard_normal(
                (take, self.p)
            ) @ cov_chol.T
            done += take
        return out

    def sample_posterior_full(self, x_n, y_n, rng, size=None):
        g = self.posterior_full(x_n, y_n)
        draws = g.sample(1 if size is None else size, rng)
        return draws[0] if size is None else draws

    def sample_posterior_marginal(self, x_n, rng, size=None):
        g = self.posterior_marginal(x_n)
        draws = g.sample(1 if size is None else size, rng)
        return draws[0] if size is None else draws

    # --- closed-form conditionals ----------------------------------------

    def latent_conditional(self, x_n, theta) -> tuple[np.ndarray, np.ndarray]:
        """Per-record mean rows and shared covariance of ``y_i | x_i, theta``."""
        c = self._cache
        x_n = np.atleast_2d(np.asarray(x_n, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        means = (x_n @ c["sx_inv"].T + theta @ c["sy_inv"].T) @ c["v_latent"].T
        return means, c["v_latent"].copy()

    def posterior_full(self, x_n, y_n) -> GaussianMeasure:
        """Conjugate posterior of theta given the latent block (x drops out)."""
        c = self._cache
        y_n = np.atleast_2d(np.asarray(y_n, dtype=float))
        n = y_n.shape[0]
        prec = c["prior_prec"] + n * c["sy_inv"]
        cov = np.linalg.inv(prec)
        mean = cov @ (c["prior_prec"] @ self.prior_mean + c["sy_inv"] @ y_n.sum(axis=0))
        return GaussianMeasure(mean, cov)

    def posterior_marginal(self, x_n) -> GaussianMeasure:
        c = self._cache
        x_n = np.atleast_2d(np.asarray(x_n, dtype=float))
        n = x_n.shape[0]
        prec = c["prior_prec"] + n * c["i_mat"]
        cov = np.linalg.inv(prec)
        mean = cov @ (c["prior_prec"] @ self.prior_mean + c["i_mat"] @ x_n.sum(axis=0))
        return GaussianMeasure(mean, cov)

    # --- point estimates ---------------------------------------------------

    def point_estimate(self, x_n) -> np.ndarray:
        """Central value of the posterior; equals its mean for a Gaussian."""
        return self.posterior_marginal(x_n).mean.copy()

    def mle(self, x_n) -> np.ndarray:
        """Sample mean: the root-n-consistent plug-in start."""
        return np.atleast_2d(np.asarray(x_n, dtype=float)).mean(axis=0)

    def prior_measure(self) -> GaussianMeasure:
        return GaussianMeasure(self.prior_mean, self.prior_cov)


def marginal_qmd_derivative(
    model: NormalAugmentationModel,
    x,
    theta,
    method: str = "closed_form",
    draws: int = 10_000,
    rng: np.random.Generator | None = None,
):
    """Quadratic-mean derivative of the marginal law at one observation.

    ``closed_form`` uses the conjugate algebra; ``mc`` averages the joint
    score over fresh latent draws, ``eta(x) = sqrt(p(x)) * E[score_joint]/2``,
    and reports a per-coordinate standard error.  Returns ``(vector,
    stderr_or_None)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    logp = float(model.marginal_logpdf(x, theta)[0])
    if not np.isfinite(logp):
        raise ValueError("marginal density vanishes at x")
    root_p = np.exp(0.5 * logp)
    if method == "closed_form":
        return model.score_marginal(x, theta) * root_p / 2.0, None
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    if rng is None:
        raise ValueError("mc method needs a generator")
    y = model.sample_latent(np.tile(x, (draws, 1)), theta, rng)
    scores = model.score_joint(None, y, theta)
    est = scores.mean(axis=0) * root_p / 2.0
    stderr = scores.std(axis=0, ddof=1) / np.sqrt(draws) * root_p / 2.0
    return est, stderr


# ---------------------------------------------------------------------------
# Non-consistent demo scenarios
# ---------------------------------------------------------------------------


def clamp_witness_mean() -> float:
    """``E max(0, min(1, Z))`` for standard normal Z (closed form)."""
    return _norm_pdf(0.0) - _norm_pdf(1.0) + float(ndtr(-1.0))


def tail_witness_mean(n: float) -> float:
    """``E max(0, min(1, |Z|-1))`` under N(0,1) restricted to [-n, n]."""
    base = 2.0 * (
        (_norm_pdf(1.0) - _norm_pdf(2.0))
        - (float(ndtr(2.0)) - float(ndtr(1.0)))
        + float(ndtr(-2.0))
    )
    return base / (1.0 - 2.0 * float(ndtr(-n)))


@dataclass(frozen=True)
class HighDimISResult:
    simulated_risk: DistanceEstimate
    analytic_lower_bound: float
    witness_values: np.ndarray


def demo_high_dim_is(
    n: int, m: int, rng: np.random.Generator, replicates: int = 200
) -> HighDimISResult:
    """Crude Monte Carlo from a unit-shifted Gaussian in dimension ``n``.

    The sampler is ``N((1, 0, ..., 0), I_n)`` while the target is
    ``N(0, I_n)``; with only ``m`` draws, some coordinate has every draw
    negative with probability ``1 - (1 - 2^-m)^(n-1)``, and the clamp
    witness on that coordinate certifies a risk of at least the witness
    mean ``c``.  The reported statistic is the best per-coordinate witness
    gap, a valid lower bound on the transport distance in every replicate.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if m < 1 or replicates < 2:
        raise ValueError("m >= 1 and replicates >= 2 required")
    c = clamp_witness_mean()
    bound = (1.0 - (1.0 - 2.0**-m) ** (n - 1)) * c
    values = np.empty(replicates)
    for r in range(replicates):
        draws = rng.standard_normal((m, n))
        draws[:, 0] += 1.0
        clamped = np.clip(draws[:, 1:], 0.0, 1.0).mean(axis=0)
        values[r] = np.abs(clamped - c).max()
    est = DistanceEstimate(
        float(values.mean()), "sampled", float(values.std(ddof=1) / np.sqrt(replicates))
    )
    return HighDimISResult(est, float(bound), values)


@dataclass(frozen=True)
class ShrinkingMHResult:
    risk_lower_witness: DistanceEstimate
    analytic_floor: float
    witness_gaps: np.ndarray


def demo_shrinking_mh(
    n: float, m: int, rng: np.random.Generator, replicates: int = 200
) -> ShrinkingMHResult:
    """Metropolis chain with an independence proposal of scale ``n^{-1/2}``.

    Target: standard normal restricted to ``[-n, n]``; start at 0.  For
    large ``n`` the first ``m`` states all stay inside ``[-1, 1]``, so the
    tail witness ``max(0, min(1, |x| - 1))`` integrates to (almost) its
    full target mean: the witness gap certifies a risk floor that does not
    vanish as ``n`` grows.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if m < 1 or replicates < 2:
        raise ValueError("m >= 1 and replicates >= 2 required")
    floor = tail_witness_mean(n)
    scale = 1.0 / np.sqrt(n)
    log_norm = -0.5 * np.log(2.0 * np.pi * scale * scale)

    def log_target(x: np.ndarray) -> float:
        v = float(x[0])
        return -0.5 * v * v if abs(v) <= n else -np.inf

    def proposer(_theta, gen: np.random.Generator) -> np.ndarray:
        return np.array([gen.normal(0.0, scale)])

    def proposal_logpdf(_frm: np.ndarray, to: np.ndarray) -> float:
        v = float(to[0])
        return log_norm - 0.5 * (v / scale) ** 2

    kernel = MHKernel(log_target, proposer, proposal_logpdf)
    gaps = np.empty(replicates)
    for r in range(replicates):
        path = run_chain(kernel, np.zeros(1), m, rng)
        psi = np.clip(np.abs(path.thetas[:, 0]) - 1.0, 0.0, 1.0).mean()
        gaps[r] = abs(psi - floor)
    est = DistanceEstimate(
        float(gaps.mean()), "sampled", float(gaps.std(ddof=1) / np.sqrt(replicates))
    )
    return ShrinkingMHResult(est, float(floor), gaps)
