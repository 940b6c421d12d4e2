"""Finite representations of probability measures and distances between them.

The central object is :class:`WeightedSample`, a weighted particle cloud on
``R^p``.  Distances:

* :func:`w1_truncated` — optimal transport with ground cost
  ``min(||x - y||, truncation)``.  With truncation 1 this realises the
  bounded-Lipschitz metric (sup over Lipschitz-1 test functions under a
  metric capped at 1), which metrises weak convergence.  Exact in 1D for any
  support size, exact LP for p >= 2 up to a support cap.
* :func:`tv_gaussians` — total variation between Gaussians, exact in 1D via
  density crossing points, Monte Carlo with a standard error otherwise.
* :func:`central_value` — the coordinatewise root of
  ``sum_i w_i * arctan(x_i - c) = 0``, an always-existing, weakly-continuous
  centering statistic.

A subtlety worth knowing about: under a *truncated* ground cost the monotone
(quantile) coupling in 1D is not optimal in general — it can be cheaper to
pay the flat truncation cost for a small amount of mass than to shift a long
chain of particles.  The 1D path therefore solves the dual problem over
Lipschitz-1 potentials confined to a band of height ``truncation``, which is
a small banded LP, exact and fast.  The plain quantile formula is used only
when the support span does not exceed the truncation (where both agree).
"""

from __future__ import annotations

import heapq
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.optimize import brentq, linear_sum_assignment, linprog
from scipy.special import ndtr

__all__ = [
    "WeightedSample",
    "GaussianMeasure",
    "DistanceEstimate",
    "DimensionMismatchError",
    "UnnormalizedSampleError",
    "SupportCapError",
    "merge_duplicates",
    "w1_truncated",
    "w1_to_gaussian",
    "tv_gaussians",
    "central_value",
    "write_sample_csv",
    "read_sample_csv",
]

#: |total mass - 1| at or below this marks a sample as normalized.
NORMALIZED_ATOL = 1e-12
#: Distances require masses this close to 1 (looser than the flag).
MASS_INPUT_ATOL = 1e-9
#: Default combined-support cap for the p >= 2 exact LP path.
DEFAULT_LP_CAP = 4096

_EXACT_METHODS = frozenset({"exact-1d", "exact-lp"})
_METHODS = frozenset({"exact-1d", "exact-lp", "sampled"})


class DimensionMismatchError(ValueError):
    """Operands live on spaces of different dimension."""


class UnnormalizedSampleError(ValueError):
    """A probability-measure operation received mass != 1."""


class SupportCapError(ValueError):
    """Combined support exceeds the exact-LP cap; subsample first."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass
class WeightedSample:
    """Weighted particle cloud on ``R^p``.

    ``points`` has shape ``(size, dim)`` and ``weights`` shape ``(size,)``
    with nonnegative entries.  Mass need not be 1 (importance sampling in
    raw mode produces sub/super-probability clouds); ``normalized`` reports
    whether it is, to ``1e-12``.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:  # a flat vector is a 1D cloud
            pts = pts.reshape(-1, 1)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.ndim != 2:
            raise ValueError("points must be a (size, dim) array")
        if pts.shape[0] != w.shape[0]:
            raise ValueError(
                f"points ({pts.shape[0]}) and weights ({w.shape[0]}) differ in length"
            )
        if pts.shape[0] < 1:
            raise ValueError("a weighted sample needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        self.points = _readonly(pts)
        self.weights = _readonly(w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def normalized(self) -> bool:
        return abs(self.total_mass - 1.0) <= NORMALIZED_ATOL

    @classmethod
    def uniform(cls, points: np.ndarray) -> "WeightedSample":
        """Equal weights ``1/size`` on ``points`` (flat vectors are 1D clouds)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, point) -> "WeightedSample":
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(pt.reshape(1, -1), np.array([1.0]))


@dataclass
class GaussianMeasure:
    """Gaussian on ``R^p`` given by mean vector and SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be (p,), cov must be (p, p)")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ValueError("covariance is not symmetric to 1e-12")
        cov = (cov + cov.T) / 2.0
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        self.mean = _readonly(mean)
        self.cov = _readonly(cov)
        self._chol = _readonly(chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self._chol.T

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x - self.mean
        sol = scipy.linalg.solve_triangular(self._chol, diff.T, lower=True)
        quad = np.einsum("ij,ij->j", sol, sol)
        logdet = 2.0 * np.log(np.diag(self._chol)).sum()
        return -0.5 * (quad + logdet + self.dim * np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DistanceEstimate:
    """A distance value together with how it was obtained.

    ``method`` is one of ``exact-1d``, ``exact-lp`` (no standard error) or
    ``sampled`` (stderr from independent redraws mandatory).
    """

    value: float
    method: str
    stderr: float | None = None

    def __post_init__(self) -> None:
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.value < -1e-9:
            raise ValueError(f"distance is negative: {self.value}")
        object.__setattr__(self, "value", max(0.0, float(self.value)))
        if self.method in _EXACT_METHODS:
            if self.stderr is not None:
                raise ValueError("exact methods carry no stderr")
        else:
            if self.stderr is None or self.stderr < 0:
                raise ValueError("sampled distances need a nonnegative stderr")
            object.__setattr__(self, "stderr", float(self.stderr))


def merge_duplicates(sample: WeightedSample) -> WeightedSample:
    """Combine identical points, drop zero-weight points, sort the support.

    Merging first stabilises identity-of-indiscernibles: two clouds that
    describe the same measure with differently split atoms compare equal.
    """
    pts, inverse = np.unique(sample.points, axis=0, return_inverse=True)
    w = np.bincount(inverse.ravel(), weights=sample.weights, minlength=pts.shape[0])
    keep = w > 0.0
    if not keep.any():
        # all-zero weights: keep a single point so the invariants hold
        return WeightedSample(pts[:1], w[:1])
    return WeightedSample(pts[keep], w[keep])


def _require_mass_one(sample: WeightedSample, name: str) -> None:
    if abs(sample.total_mass - 1.0) > MASS_INPUT_ATOL:
        raise UnnormalizedSampleError(
            f"{name} has total mass {sample.total_mass!r}; distances need mass 1"
        )


# ---------------------------------------------------------------------------
# Truncated Wasserstein-1
# ---------------------------------------------------------------------------


def _w1_1d_quantile(t: np.ndarray, signed: np.ndarray) -> float:
    # integral of |F - G| over the support interval; exact when no pair of
    # support points is farther apart than the truncation
    h = np.cumsum(signed)[:-1]
    return float(np.abs(h) @ np.diff(t))


class _SlopeSegments:
    """Multiset of (slope, width) segments with consumption from both ends.

    Backs the concave piecewise-linear value function of the 1D dual:
    segments are kept ordered by slope through a pair of heaps over shared
    widths, with lazy deletion.
    """

    def __init__(self) -> None:
        self._width: dict[int, float] = {}
        self._slope: dict[int, float] = {}
        self._hi: list[tuple[float, int]] = []  # max-heap by slope (negated)
        self._lo: list[tuple[float, int]] = []  # min-heap by slope
        self._next = 0

    def insert(self, slope: float, width: float) -> None:
        if width <= 0.0:
            return
        ident = self._next
        self._next += 1
        self._width[ident] = width
        self._slope[ident] = slope
        heapq.heappush(self._hi, (-slope, ident))
        heapq.heappush(self._lo, (slope, ident))

    def _peek(self, heap: list[tuple[float, int]]) -> int | None:
        while heap:
            ident = heap[0][1]
            if self._width.get(ident, 0.0) > 0.0:
                return ident
            heapq.heappop(heap)
        return None

    def consume(self, need: float, from_high: bool) -> float:
        """Remove ``need`` total width from one slope end of the multiset.

        Returns the max-value correction: on a high-end cut only decreasing
        (negative-slope) pieces lower the maximum; on a low-end cut only
        increasing (positive-slope) pieces do.  Width can run out by float
        roundoff only, in which case the remainder is dropped.
        """
        heap = self._hi if from_high else self._lo
        correction = 0.0
        while need > 0.0:
            ident = self._peek(heap)
            if ident is None:
                break
            take = min(need, self._width[ident])
            slope = self._slope[ident]
            if from_high and slope < 0.0:
                correction += slope * take
            elif not from_high and slope > 0.0:
                correction -= slope * take
            left = self._width[ident] - take
            if left <= 0.0:
                del self._width[ident]
                del self._slope[ident]
            else:
                self._width[ident] = left
            need -= take
        return correction


def _w1_1d_truncated_exact(t: np.ndarray, signed: np.ndarray, truncation: float) -> float:
    """Exact 1D transport under cost min(|x - y|, truncation).

    Maximises ``sum_k psi_k (f_{k+1} - f_k)`` over potentials f that are
    1-Lipschitz between support points and confined to a band of height
    ``truncation``, where ``psi_k = -(F - G)`` on the k-th support gap.
    The concave value function over the current potential level is kept as
    slope segments; each gap sup-convolves a linear segment in, then the
    band restriction trims the extreme slopes off both ends.  Maintaining
    only the running maximum is enough to read off the distance.
    """
    gaps = np.diff(t)
    psi = -np.cumsum(signed)[:-1]
    segs = _SlopeSegments()
    segs.insert(0.0, truncation)
    maxval = 0.0
    for delta, slope in zip(gaps, psi):
        segs.insert(slope, 2.0 * delta)
        maxval += delta * abs(slope)
        maxval += segs.consume(delta, from_high=True)
        maxval += segs.consume(delta, from_high=False)
    return max(0.0, maxval)


def _w1_1d(a: WeightedSample, b: WeightedSample, truncation: float) -> float:
    xs = a.points.ravel()
    ys = b.points.ravel()
    t, inv = np.unique(np.concatenate([xs, ys]), return_inverse=True)
    signed = np.zeros(t.size)
    np.add.at(signed, inv[: xs.size], a.weights)
    np.add.at(signed, inv[xs.size :], -b.weights)
    if t.size == 1:
        return 0.0
    if t[-1] - t[0] <= truncation:
        return _w1_1d_quantile(t, signed)
    return _w1_1d_truncated_exact(t, signed, truncation)


def _w1_lp(
    a: WeightedSample, b: WeightedSample, truncation: float, lp_cap: int
) -> float:
    na, nb = a.size, b.size
    if na + nb > lp_cap:
        raise SupportCapError(
            f"combined support {na + nb} exceeds the exact-LP cap {lp_cap}; "
            "subsample before calling"
        )
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.minimum(cost, truncation, out=cost)

    uniform = (
        na == nb
        and np.all(a.weights == a.weights[0])
        and np.all(b.weights == b.weights[0])
        and abs(a.weights[0] - b.weights[0]) <= 1e-15
    )
    if uniform:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() * a.weights[0])

    # transportation LP on the full bipartite graph
    rows = np.repeat(np.arange(na), nb)
    cols = np.tile(np.arange(nb), na)
    var = np.arange(na * nb)
    a_eq = scipy.sparse.coo_matrix(
        (
            np.ones(2 * na * nb),
            (np.concatenate([rows, na + cols]), np.concatenate([var, var])),
        ),
        shape=(na + nb, na * nb),
    ).tocsr()
    b_eq = np.concatenate([a.weights / a.total_mass, b.weights / b.total_mass])
    res = linprog(
        cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0.0, None), method="highs"
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return max(0.0, float(res.fun))


def w1_truncated(
    a: WeightedSample,
    b: WeightedSample,
    truncation: float = 1.0,
    lp_cap: int = DEFAULT_LP_CAP,
) -> DistanceEstimate:
    """Exact optimal-transport distance with ground cost ``min(||x-y||, truncation)``.

    Both samples must be normalized (mass 1 within 1e-9) and share a
    dimension.  Duplicate points are merged first.  1D instances are exact
    at any support size; ``p >= 2`` uses an exact LP and raises
    :class:`SupportCapError` above ``lp_cap`` combined support points.
    With ``truncation=numpy.inf`` this is the plain Wasserstein-1 distance.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dim {a.dim} vs {b.dim}")
    if not (truncation > 0):
        raise ValueError("truncation must be positive (or numpy.inf)")
    _require_mass_one(a, "first sample")
    _require_mass_one(b, "second sample")
    a = merge_duplicates(a)
    b = merge_duplicates(b)
    if a.size == b.size and np.array_equal(a.points, b.points) and np.allclose(
        a.weights, b.weights, rtol=0.0, atol=NORMALIZED_ATOL
    ):
        method = "exact-1d" if a.dim == 1 else "exact-lp"
        return DistanceEstimate(0.0, method)
    if a.dim == 1:
        return DistanceEstimate(_w1_1d(a, b, truncation), "exact-1d")
    return DistanceEstimate(_w1_lp(a, b, truncation, lp_cap), "exact-lp")


def w1_to_gaussian(
    a: WeightedSample,
    g: GaussianMeasure,
    ref_size: int,
    truncation: float,
    rng: np.random.Generator,
    redraws: int = 4,
    lp_cap: int = DEFAULT_LP_CAP,
) -> DistanceEstimate:
    """Distance from ``a`` to a Gaussian, via sampled reference clouds.

    Draws ``redraws`` independent reference samples of size ``ref_size``
    from ``g`` and reports the mean transport distance with the standard
    error across redraws.  Never pretends to be exact: the reference
    discretisation is the dominant bias, so the result is ``sampled``.
    """
    if ref_size < 1000:
        raise ValueError("ref_size must be at least 1000")
    if redraws < 2:
        raise ValueError("at least 2 reference redraws are needed for a stderr")
    if a.dim != g.dim:
        raise DimensionMismatchError(f"dim {a.dim} vs {g.dim}")
    values = np.empty(redraws)
    for r in range(redraws):
        ref = WeightedSample.uniform(g.sample(ref_size, rng))
        values[r] = w1_truncated(a, ref, truncation, lp_cap).value
    stderr = float(values.std(ddof=1) / np.sqrt(redraws))
    return DistanceEstimate(float(values.mean()), "sampled", stderr)


# ---------------------------------------------------------------------------
# Total variation between Gaussians
# ---------------------------------------------------------------------------


def _tv_gaussians_1d(m1: float, v1: float, m2: float, v2: float) -> float:
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    if abs(v1 - v2) <= 1e-15 * max(v1, v2):
        if m1 == m2:
            return 0.0
        d = abs(m1 - m2) / (2.0 * s1)
        return float(ndtr(d) - ndtr(-d))
    # crossing points of the two densities solve a quadratic in x
    aa = 0.5 * (1.0 / v2 - 1.0 / v1)
    bb = m1 / v1 - m2 / v2
    cc = 0.5 * (m2**2 / v2 - m1**2 / v1) + np.log(s2 / s1)
    disc = max(bb * bb - 4.0 * aa * cc, 0.0)
    r1 = (-bb - np.sqrt(disc)) / (2.0 * aa)
    r2 = (-bb + np.sqrt(disc)) / (2.0 * aa)
    lo, hi = min(r1, r2), max(r1, r2)
    p1 = ndtr((hi - m1) / s1) - ndtr((lo - m1) / s1)
    p2 = ndtr((hi - m2) / s2) - ndtr((lo - m2) / s2)
    return float(abs(p1 - p2))


def tv_gaussians(
    g1: GaussianMeasure,
    g2: GaussianMeasure,
    mc_size: int = 200_000,
    rng: np.random.Generator | None = None,
) -> DistanceEstimate:
    """Total variation distance between two Gaussians.

    Exact for ``p = 1`` (crossing-point integration of the densities).
    For ``p >= 2`` estimates ``(1/2) E_x~g1 |1 - dg2/dg1(x)|`` by Monte
    Carlo with ``mc_size`` draws, so a generator is required.
    """
    if g1.dim != g2.dim:
        raise DimensionMismatchError(f"dim {g1.dim} vs {g2.dim}")
    if g1.dim == 1:
        return DistanceEstimate(
            _tv_gaussians_1d(
                float(g1.mean[0]), float(g1.cov[0, 0]),
                float(g2.mean[0]), float(g2.cov[0, 0]),
            ),
            "exact-1d",
        )
    if rng is None:
        raise ValueError("p >= 2 total variation is Monte Carlo: pass rng")
    x = g1.sample(mc_size, rng)
    ratio = np.exp(g2.logpdf(x) - g1.logpdf(x))
    vals = 0.5 * np.abs(1.0 - ratio)
    return DistanceEstimate(
        float(vals.mean()), "sampled", float(vals.std(ddof=1) / np.sqrt(mc_size))
    )


# ---------------------------------------------------------------------------
# Central value
# ---------------------------------------------------------------------------


def central_value(a: WeightedSample) -> np.ndarray:
    """Coordinatewise root of ``sum_i w_i arctan(x_i^j - c) = 0``.

    The map is continuous and strictly decreasing in ``c``, so the root
    exists, is unique, and bracketed by the support range.  Residual is
    driven below 1e-10.
    """
    _require_mass_one(a, "sample")
    w = a.weights / a.total_mass
    out = np.empty(a.dim)
    for j in range(a.dim):
        col = a.points[:, j]
        lo, hi = float(col.min()) - 1.0, float(col.max()) + 1.0

        def g(c: float, col=col) -> float:
            return float(w @ np.arctan(col - c))

        if lo + 1.0 >= hi - 1.0:  # point mass in this coordinate
            out[j] = col[0]
            continue
        root = brentq(g, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200)
        if abs(g(root)) > 1e-10:
            raise RuntimeError(f"central value residual too large in coord {j}")
        out[j] = root
    return out


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------


def _sample_to_csv_text(sample: WeightedSample) -> str:
    buf = io.StringIO()
    buf.write(f"dim,{sample.dim}\n")
    for w, row in zip(sample.weights, sample.points):
        cells = ",".join(f"{v:.17g}" for v in row)
        buf.write(f"{w:.17g},{cells}\n")
    return buf.getvalue()


def write_sample_csv(sample: WeightedSample, path) -> None:
    """Write ``header 'dim,p'`` then one ``w,x1,...,xp`` row per point.

    Values use 17 significant digits, so finite doubles round-trip exactly.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_sample_to_csv_text(sample))


def read_sample_csv(path) -> WeightedSample:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 2 or header[0] != "dim":
            raise ValueError(f"bad weighted-sample header: {header!r}")
        dim = int(header[1])
        weights = []
        points = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != dim + 1:
                raise ValueError(f"line {lineno}: expected {dim + 1} cells")
            weights.append(float(cells[0]))
            points.append([float(v) for v in cells[1:]])
    return WeightedSample(np.asarray(points), np.asarray(weights))
