"""Interaction potentials G(x, y) = exp(a(x, y)) and their regularity data.

The contraction estimates consume four numbers about a potential on a
domain E: its infimum eps(G), its supremum, and Lipschitz seminorms in the
first argument (lip_left, sup over the second argument), in the second
argument (lip_right), and jointly on E x E (lip_joint). The canonical
ground metric is l1 on R^d throughout; l2-derived constants are converted
using ||u||_2 <= ||u||_1 and the conversion is recorded in the field's
provenance.

Analytic values are produced whenever the similarity is bilinear on a box
(corner extrema) or Gaussian (closed forms). Everything else is sampled;
sampled sups are lower bounds and sampled infs are upper bounds, and the
provenance says so.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DimMismatch,
    InvalidInput,
    PotentialOverflow,
    UnboundedDomainUnsupported,
)
from .measures import DomainBox

MAX_EXP_ARG = 709.0

# sup over t >= 0 of 2 t exp(-t^2), attained at t = 1/sqrt(2): the l2 norm
# of the Gaussian potential's gradient in one argument never exceeds this,
# and since ||.||_2 <= ||.||_1 it is also a valid l1 Lipschitz constant.
GAUSSIAN_LIP = math.sqrt(2.0 / math.e)

# analytic corner enumeration is limited to 2^d <= this many corners
_MAX_CORNERS = 256


class Potential:
    """Base interaction potential; subclasses define the similarity a(x, y)."""

    dim: int
    kind: str = "custom"

    def similarity(self, x: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def similarity_matrix(self, queries: np.ndarray, keys: np.ndarray) -> np.ndarray:
        """a(q_i, k_j) for all pairs; shape (n_queries, n_keys)."""
        out = np.empty((queries.shape[0], keys.shape[0]))
        for i, q in enumerate(queries):
            for j, k in enumerate(keys):
                out[i, j] = self.similarity(q, k)
        return out

    def similarity_pairs(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """a(x_i, y_i) row-wise; shape (n,)."""
        return np.array([self.similarity(x, y) for x, y in zip(xs, ys)])

    def _check_dims(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if x.shape != (self.dim,) or y.shape != (self.dim,):
            raise DimMismatch(
                f"{self.kind} potential of dim {self.dim} got shapes {x.shape}, {y.shape}"
            )
        return x, y


@dataclass(frozen=True)
class DotProduct(Potential):
    """a(x, y) = scale * <x, y>."""

    scale: float
    dim: int
    kind: str = field(default="dot_product", init=False)

    def similarity(self, x, y):
        x, y = self._check_dims(x, y)
        return float(self.scale * np.dot(x, y))

    def similarity_matrix(self, queries, keys):
        return self.scale * (queries @ keys.T)

    def similarity_pairs(self, xs, ys):
        return self.scale * np.sum(xs * ys, axis=1)

    @property
    def bilinear_matrix(self) -> np.ndarray:
        return self.scale * np.eye(self.dim)


@dataclass(frozen=True)
class ScaledDotProduct(Potential):
    """a(x, y) = scale * <W_Q x, W_K y>, the learned-projection similarity."""

    w_q: np.ndarray
    w_k: np.ndarray
    scale: float
    kind: str = field(default="scaled_dot_product", init=False)

    def __post_init__(self):
        wq = np.asarray(self.w_q, dtype=np.float64)
        wk = np.asarray(self.w_k, dtype=np.float64)
        if wq.ndim != 2 or wk.ndim != 2 or wq.shape != wk.shape:
            raise DimMismatch(
                f"W_Q and W_K must be matrices of one shape, got {wq.shape}, {wk.shape}"
            )
        object.__setattr__(self, "w_q", wq)
        object.__setattr__(self, "w_k", wk)

    @property
    def dim(self) -> int:
        return self.w_q.shape[1]

    def similarity(self, x, y):
        x, y = self._check_dims(x, y)
        return float(self.scale * np.dot(self.w_q @ x, self.w_k @ y))

    def similarity_matrix(self, queries, keys):
        return self.scale * ((queries @ self.w_q.T) @ (keys @ self.w_k.T).T)

    def similarity_pairs(self, xs, ys):
        return self.scale * np.sum((xs @ self.w_q.T) * (ys @ self.w_k.T), axis=1)

    @property
    def bilinear_matrix(self) -> np.ndarray:
        return self.scale * (self.w_q.T @ self.w_k)


@dataclass(frozen=True)
class Gaussian(Potential):
    """a(x, y) = -||x - y||_2^2, so G(x, y) = exp(-||x - y||_2^2) exactly."""

    dim: int
    kind: str = field(default="gaussian", init=False)

    def similarity(self, x, y):
        x, y = self._check_dims(x, y)
        d = x - y
        return float(-np.dot(d, d))

    def similarity_matrix(self, queries, keys):
        diff = queries[:, None, :] - keys[None, :, :]
        return -np.sum(diff * diff, axis=2)

    def similarity_pairs(self, xs, ys):
        d = xs - ys
        return -np.sum(d * d, axis=1)


@dataclass(frozen=True)
class CustomPotential(Potential):
    """User-supplied similarity; optionally a vectorized matrix form."""

    fn: Callable[[np.ndarray, np.ndarray], float]
    dim: int
    matrix_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    kind: str = field(default="custom", init=False)

    def similarity(self, x, y):
        x, y = self._check_dims(x, y)
        return float(self.fn(x, y))

    def similarity_matrix(self, queries, keys):
        if self.matrix_fn is not None:
            return np.asarray(self.matrix_fn(queries, keys), dtype=np.float64)
        return super().similarity_matrix(queries, keys)


def evaluate(potential: Potential, x, y) -> float:
    """G(x, y) = exp(a(x, y)); always strictly positive.

    Raises PotentialOverflow when the similarity exceeds the float64 exp
    range (a > 709). The softmatch kernel never hits this because it shifts
    by the max similarity; the raw primitive reports the overflow honestly.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInput("potential arguments must be finite")
    a = potential.similarity(x, y)
    if not math.isfinite(a):
        raise InvalidInput(f"similarity returned non-finite value {a!r}")
    if a > MAX_EXP_ARG:
        raise PotentialOverflow(a, x, y)
    return math.exp(a)


# ---------------------------------------------------------------------------
# Regularity statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Provenance:
    """How a statistic was obtained.

    kind is "analytic" or "sampled". Sampled sups are lower bounds of the
    true value and sampled infs are upper bounds; analytic seminorms may be
    conservative upper bounds, in which case the note says so.
    """

    kind: str
    n_samples: int | None = None
    seed: int | None = None
    note: str | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.n_samples is not None:
            d["n_samples"] = self.n_samples
        if self.seed is not None:
            d["seed"] = self.seed
        if self.note is not None:
            d["note"] = self.note
        return d


@dataclass(frozen=True)
class SamplingConfig:
    """Latin-hypercube pair sampling plus coordinate finite differences."""

    n_pairs: int = 100_000
    seed: int = 0
    fd_step: float = 1e-4


@dataclass(frozen=True)
class RegularityStats:
    """eps(G), sup(G) and the three Lipschitz seminorms of G on E x E."""

    eps_g: float
    sup_g: float
    lip_left: float
    lip_right: float
    lip_joint: float
    provenance: dict

    def __post_init__(self):
        if self.eps_g < 0 or self.sup_g < 0:
            raise InvalidInput("potential bounds must be nonnegative")
        if self.eps_g > self.sup_g + 1e-12:
            raise InvalidInput("eps(G) cannot exceed sup(G)")
        for name in ("lip_left", "lip_right", "lip_joint"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "eps_g": self.eps_g,
            "sup_g": self.sup_g,
            "lip_left": self.lip_left,
            "lip_right": self.lip_right,
            "lip_joint": self.lip_joint,
            "provenance": {k: v.to_dict() for k, v in self.provenance.items()},
        }


def _bilinear_extrema(m: np.ndarray, box: DomainBox) -> tuple[float, float]:
    """Exact min and max of x^T M y over box x box.

    For fixed x the form is linear in y and vice versa, so both extrema are
    attained at corner pairs. Diagonal M separates per coordinate (O(d));
    otherwise all corner pairs are enumerated (requires 2^d <= _MAX_CORNERS).
    """
    lo, hi = box.lower, box.upper
    d = lo.shape[0]
    off_diag = m - np.diag(np.diag(m))
    if not np.any(off_diag):
        diag = np.diag(m)
        cand = np.stack(
            [diag * lo * lo, diag * lo * hi, diag * hi * lo, diag * hi * hi]
        )
        return float(cand.min(axis=0).sum()), float(cand.max(axis=0).sum())
    if 2 ** d > _MAX_CORNERS:
        raise UnboundedDomainUnsupported(
            f"corner enumeration infeasible for d={d}; supply a SamplingConfig"
        )
    corners = box.corners()
    vals = corners @ m @ corners.T
    return float(vals.min()), float(vals.max())


def _max_linf_image(m: np.ndarray, box: DomainBox) -> float:
    """max over y in box of ||M y||_inf (convex, so attained at a corner)."""
    lo, hi = box.lower, box.upper
    # per output row: maximize |sum_j m_kj y_j| coordinate-wise
    pos = np.where(m > 0, m, 0.0)
    neg = np.where(m < 0, m, 0.0)
    upper = pos @ hi + neg @ lo
    lower = pos @ lo + neg @ hi
    return float(np.maximum(np.abs(upper), np.abs(lower)).max())


def _require_bounded(box: DomainBox, potential: Potential) -> None:
    if not box.is_bounded:
        raise UnboundedDomainUnsupported(
            f"{potential.kind} potential needs a bounded domain for regularity stats"
        )


def _sampled_stats(
    potential: Potential, box: DomainBox, sampling: SamplingConfig
) -> RegularityStats:
    from scipy.stats import qmc

    _require_bounded(box, potential)
    d = box.dim
    rng_seed = sampling.seed
    n = max(16, sampling.n_pairs)
    sampler = qmc.LatinHypercube(d=2 * d, seed=rng_seed)
    u = sampler.random(n)
    span = box.upper - box.lower
    xs = box.lower + u[:, :d] * span
    ys = box.lower + u[:, d:] * span

    a_vals = potential.similarity_pairs(xs, ys)
    if np.any(a_vals > MAX_EXP_ARG):
        i = int(np.argmax(a_vals))
        raise PotentialOverflow(float(a_vals[i]), xs[i], ys[i])
    g_vals = np.exp(a_vals)
    eps_hat = float(g_vals.min())
    sup_hat = float(g_vals.max())

    # local coordinate finite differences refine the seminorm estimates;
    # steps stay inside the box by flipping direction at the upper face
    m = min(n, 4096)
    h = sampling.fd_step * float(span.min() if span.min() > 0 else 1.0)
    lip_l = 0.0
    lip_r = 0.0
    for axis in range(d):
        step = np.zeros(d)
        step[axis] = h
        for base_x, base_y, left in ((xs[:m], ys[:m], True), (xs[:m], ys[:m], False)):
            moved = (base_x if left else base_y) + step
            flip = moved[:, axis] > box.upper[axis]
            moved[flip] = moved[flip] - 2 * step[axis] * np.eye(d)[axis]
            if left:
                a2 = potential.similarity_pairs(moved, base_y)
                num = np.abs(np.exp(a2) - g_vals[:m])
                lip_l = max(lip_l, float(num.max()) / h)
            else:
                a2 = potential.similarity_pairs(base_x, moved)
                num = np.abs(np.exp(a2) - g_vals[:m])
                lip_r = max(lip_r, float(num.max()) / h)

    # far-pair ratios (l1 ground metric) can only raise the estimates
    k = min(n - 1, 4096)
    a_shift = potential.similarity_pairs(xs[1 : k + 1], ys[:k])
    g_shift = np.exp(a_shift)
    dx = np.abs(xs[1 : k + 1] - xs[:k]).sum(axis=1)
    ratio_l = np.abs(g_shift - g_vals[:k]) / np.where(dx > 1e-12, dx, np.inf)
    lip_l = max(lip_l, float(ratio_l.max()))
    a_shift = potential.similarity_pairs(xs[:k], ys[1 : k + 1])
    g_shift = np.exp(a_shift)
    dy = np.abs(ys[1 : k + 1] - ys[:k]).sum(axis=1)
    ratio_r = np.abs(g_shift - g_vals[:k]) / np.where(dy > 1e-12, dy, np.inf)
    lip_r = max(lip_r, float(ratio_r.max()))

    lip_j = max(lip_l, lip_r)
    prov_inf = Provenance("sampled", n, rng_seed, "upper bound of the true inf")
    prov_sup = Provenance("sampled", n, rng_seed, "lower bound of the true sup")
    prov_lip = Provenance("sampled", n, rng_seed, "lower bound of the true seminorm")
    return RegularityStats(
        eps_g=eps_hat,
        sup_g=sup_hat,
        lip_left=lip_l,
        lip_right=lip_r,
        lip_joint=lip_j,
        provenance={
            "eps_g": prov_inf,
            "sup_g": prov_sup,
            "lip_left": prov_lip,
            "lip_right": prov_lip,
            "lip_joint": prov_lip,
        },
    )


def regularity_stats(
    potential: Potential,
    box: DomainBox,
    sampling: SamplingConfig | None = None,
) -> RegularityStats:
    """Regularity statistics of G on box x box.

    Gaussian: all fields analytic, bounded or not (eps(G) is 0 on the
    unbounded domain). Dot-product kinds: bounded box required; extrema
    from corner enumeration, seminorms as conservative analytic upper
    bounds of the form sup||grad a||_inf * sup G. Custom potentials are
    sampled (flagged).
    """
    if isinstance(potential, Gaussian):
        analytic = Provenance("analytic")
        conv = Provenance(
            "analytic",
            note="l2 gradient bound sqrt(2/e); valid in l1 since ||.||_2 <= ||.||_1",
        )
        if box.is_bounded:
            span = box.upper - box.lower
            eps = math.exp(-float(np.dot(span, span)))
        else:
            eps = 0.0
        return RegularityStats(
            eps_g=eps,
            sup_g=1.0,
            lip_left=GAUSSIAN_LIP,
            lip_right=GAUSSIAN_LIP,
            lip_joint=GAUSSIAN_LIP,
            provenance={
                "eps_g": analytic,
                "sup_g": analytic,
                "lip_left": conv,
                "lip_right": conv,
                "lip_joint": conv,
            },
        )

    if isinstance(potential, (DotProduct, ScaledDotProduct)):
        _require_bounded(box, potential)
        if box.dim != potential.dim:
            raise DimMismatch(
                f"box dim {box.dim} does not match potential dim {potential.dim}"
            )
        m = potential.bilinear_matrix
        try:
            a_min, a_max = _bilinear_extrema(m, box)
        except UnboundedDomainUnsupported:
            if sampling is None:
                sampling = SamplingConfig()
            return _sampled_stats(potential, box, sampling)
        if a_max > MAX_EXP_ARG:
            raise PotentialOverflow(a_max, None, None)
        eps = math.exp(a_min)
        sup = math.exp(a_max)
        grad_x = _max_linf_image(m, box)        # sup_y ||M y||_inf
        grad_y = _max_linf_image(m.T, box)      # sup_x ||M^T x||_inf
        lip_l = grad_x * sup
        lip_r = grad_y * sup
        lip_j = max(grad_x, grad_y) * sup
        analytic = Provenance("analytic", note="corner extrema of the bilinear form")
        upper = Provenance(
            "analytic", note="upper bound: sup||grad a||_inf * sup G, factorized"
        )
        return RegularityStats(
            eps_g=eps,
            sup_g=sup,
            lip_left=lip_l,
            lip_right=lip_r,
            lip_joint=lip_j,
            provenance={
                "eps_g": analytic,
                "sup_g": analytic,
                "lip_left": upper,
                "lip_right": upper,
                "lip_joint": upper,
            },
        )

    if sampling is None:
        sampling = SamplingConfig()
    return _sampled_stats(potential, box, sampling)


def query_lipschitz(potential: Potential, q: np.ndarray, box: DomainBox) -> float:
    """Analytic l1 Lipschitz seminorm of y -> G(q, y) over the box.

    Gaussian: the global constant sqrt(2/e). Dot-product kinds: the
    gradient in y is constant (M^T q), so the seminorm over the box equals
    ||M^T q||_inf * sup_y G(q, y) with the sup at a corner.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if isinstance(potential, Gaussian):
        return GAUSSIAN_LIP
    if isinstance(potential, (DotProduct, ScaledDotProduct)):
        _require_bounded(box, potential)
        m = potential.bilinear_matrix
        grad = m.T @ q
        pos = np.where(grad > 0, grad, 0.0)
        neg = np.where(grad < 0, grad, 0.0)
        a_max = float(pos @ box.upper + neg @ box.lower)
        if a_max > MAX_EXP_ARG:
            raise PotentialOverflow(a_max, q, None)
        return float(np.abs(grad).max()) * math.exp(a_max)
    raise InvalidInput(
        f"no analytic per-query seminorm for potential kind {potential.kind!r}"
    )


def eps_on_data(potential: Potential, points: np.ndarray) -> float:
    """min over all data pairs of G; flagged data-empirical by callers."""
    pts = np.asarray(points, dtype=np.float64)
    a = potential.similarity_matrix(pts, pts)
    a_min = float(a.min())
    if a_min < -MAX_EXP_ARG:
        return 0.0
    return math.exp(a_min)


def regularity_stats_on_data(
    potential: Potential,
    points: np.ndarray,
    sampling: SamplingConfig | None = None,
) -> tuple[RegularityStats, DomainBox]:
    """Stats anchored to a data set instead of a user box.

    The domain is the data's bounding box; eps(G) is replaced by the min
    over all data pairs (never smaller than the box infimum) and flagged
    data-empirical. Bounds built from these stats apply to measures
    supported on the data, with the bounding box standing in for E.
    """
    pts = np.asarray(points, dtype=np.float64)
    box = DomainBox.bounding(pts)
    stats = regularity_stats(potential, box, sampling)
    eps_data = max(stats.eps_g, eps_on_data(potential, pts))
    prov = dict(stats.provenance)
    prov["eps_g"] = Provenance(
        "analytic",
        n_samples=pts.shape[0],
        note="data-empirical: min of G over all data pairs; applicability "
        "refers to the data bounding box",
    )
    data_stats = RegularityStats(
        eps_g=eps_data,
        sup_g=max(stats.sup_g, eps_data),
        lip_left=stats.lip_left,
        lip_right=stats.lip_right,
        lip_joint=stats.lip_joint,
        provenance=prov,
    )
    return data_stats, box
