"""Attention as measure transport: softmatch, lookup, projection, and the
composed attention / multi-head / feed-forward kernels.

The pipeline view of one attention evaluation at query q against measure mu:

    reweight mu by G(q, .), normalized        (softmatch, the measure softmax)
    push the support through the lookup map   (key -> value correspondence)
    project to the Dirac at the barycenter    (value averaging)

`reference_attention` computes the familiar matrix formula directly with
max-shifted exponentials and is kept independent of the pipeline code so
the two can be compared as an equivalence test.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimMismatch, InvalidInput, KeyValueMismatch
from .measures import (
    EmpiricalMeasure,
    PointCloud,
    barycenter,
    canonical_order,
    empirical,
)
from .potentials import Potential


def induced_l1_norm(w: np.ndarray) -> float:
    """Operator norm of x -> W x between l1 spaces: max column abs sum."""
    w = np.asarray(w, dtype=np.float64)
    return float(np.abs(w).sum(axis=0).max())


# ---------------------------------------------------------------------------
# Lookup kernels (deterministic key -> value maps)
# ---------------------------------------------------------------------------

class Lookup:
    """Deterministic lookup map ell; the kernel is the Dirac at ell(k)."""

    in_dim: int
    out_dim: int

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def lip(self) -> float:
        """l1 Lipschitz constant of ell (exact for identity and linear)."""
        raise NotImplementedError


@dataclass(frozen=True)
class IdentityLookup(Lookup):
    dim: int

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.dim

    def apply_points(self, pts):
        return np.asarray(pts, dtype=np.float64)

    def lip(self):
        return 1.0


@dataclass(frozen=True)
class LinearLookup(Lookup):
    """ell(k) = W_V k with W_V of shape (d_v, d_k)."""

    w_v: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w_v, dtype=np.float64)
        if w.ndim != 2:
            raise DimMismatch(f"W_V must be a matrix, got shape {w.shape}")
        object.__setattr__(self, "w_v", w)

    @property
    def in_dim(self):
        return self.w_v.shape[1]

    @property
    def out_dim(self):
        return self.w_v.shape[0]

    def apply_points(self, pts):
        return np.asarray(pts, dtype=np.float64) @ self.w_v.T

    def lip(self):
        return induced_l1_norm(self.w_v)


@dataclass(frozen=True)
class FunctionLookup(Lookup):
    """Arbitrary deterministic lookup; lip_ell is user-supplied."""

    fn: Callable[[np.ndarray], np.ndarray]
    in_dim: int
    out_dim: int
    lip_ell: float | None = None

    def apply_points(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        out = np.stack([np.asarray(self.fn(p), dtype=np.float64) for p in pts])
        if out.shape != (pts.shape[0], self.out_dim):
            raise DimMismatch(
                f"lookup fn produced shape {out.shape}, expected (*, {self.out_dim})"
            )
        return out

    def lip(self):
        if self.lip_ell is None:
            raise InvalidInput("FunctionLookup has no stored Lipschitz constant")
        return float(self.lip_ell)


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttentionConfig:
    """One attention head: an interaction potential plus a lookup."""

    potential: Potential
    lookup: Lookup

    def __post_init__(self):
        if self.potential.dim != self.lookup.in_dim:
            raise DimMismatch(
                f"potential dim {self.potential.dim} != lookup input dim "
                f"{self.lookup.in_dim}"
            )

    @property
    def dim(self) -> int:
        return self.potential.dim

    @property
    def out_dim(self) -> int:
        return self.lookup.out_dim


@dataclass(frozen=True)
class Head:
    """An attention head with its output projection W_O of shape (d_h, d)."""

    attention: AttentionConfig
    w_o: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w_o, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != self.attention.out_dim:
            raise DimMismatch(
                f"W_O shape {w.shape} does not accept head output dim "
                f"{self.attention.out_dim}"
            )
        object.__setattr__(self, "w_o", w)


@dataclass(frozen=True)
class MultiHeadConfig:
    heads: tuple

    def __init__(self, heads):
        heads = tuple(heads)
        if not heads:
            raise InvalidInput("need at least one head")
        d = heads[0].attention.dim
        d_out = heads[0].w_o.shape[1]
        for h in heads:
            if h.attention.dim != d or h.w_o.shape[1] != d_out:
                raise DimMismatch("all heads must share input and output dims")
        if d != d_out:
            raise DimMismatch(
                f"multi-head input dim {d} must equal output dim {d_out}"
            )
        object.__setattr__(self, "heads", heads)

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def dim(self) -> int:
        return self.heads[0].attention.dim


_ACTIVATIONS = {
    "identity": lambda h: h,
    "relu": lambda h: np.maximum(h, 0.0),
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class FfnConfig:
    """Feed-forward map f: R^d -> R^d, affine layers with an elementwise
    nonlinearity between them (none after the last layer)."""

    layers: tuple
    activation: str = "identity"

    def __init__(self, layers, activation="identity"):
        if activation not in _ACTIVATIONS:
            raise InvalidInput(f"unknown activation {activation!r}")
        norm = []
        for w, b in layers:
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64).reshape(-1)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimMismatch(f"bad affine layer shapes {w.shape}, {b.shape}")
            norm.append((w, b))
        if not norm:
            raise InvalidInput("need at least one affine layer")
        for (w1, _), (w2, _) in zip(norm, norm[1:]):
            if w2.shape[1] != w1.shape[0]:
                raise DimMismatch("consecutive layers do not compose")
        if norm[0][0].shape[1] != norm[-1][0].shape[0]:
            raise DimMismatch("FFN must map R^d to R^d")
        object.__setattr__(self, "layers", tuple(norm))
        object.__setattr__(self, "activation", activation)

    @property
    def dim(self) -> int:
        return self.layers[0][0].shape[1]

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        h = np.asarray(pts, dtype=np.float64)
        act = _ACTIVATIONS[self.activation]
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.T + b
            if i < len(self.layers) - 1:
                h = act(h)
        return h

    def lip(self) -> float:
        """Upper bound: product of per-layer induced l1 norms (the
        nonlinearities are 1-Lipschitz)."""
        out = 1.0
        for w, _ in self.layers:
            out *= induced_l1_norm(w)
        return out


# ---------------------------------------------------------------------------
# Softmatch
# ---------------------------------------------------------------------------

def _ordered_scalar_sum(values: np.ndarray, order: np.ndarray) -> float:
    acc = 0.0
    for i in order:
        acc += values[i]
    return acc


def softmatch_weights(
    potential: Potential, q: np.ndarray, nu: EmpiricalMeasure
) -> np.ndarray:
    """Boltzmann-Gibbs weights nu_i G(q, k_i) / sum_j nu_j G(q, k_j).

    Exponentials are shifted by the max similarity over the support (taken
    over points of positive weight), so the computation never overflows.
    The normalizer is accumulated in canonical support order, which keeps
    the weights exactly invariant under joint permutations of nu.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(q)):
        raise InvalidInput("query must be finite")
    if q.shape != (nu.dim,):
        raise DimMismatch(f"query shape {q.shape} vs measure dim {nu.dim}")
    logits = potential.similarity_matrix(q[None, :], nu.support.points)[0]
    if not np.all(np.isfinite(logits)):
        raise InvalidInput("similarity produced non-finite values")
    positive = nu.weights > 0
    shift = float(logits[positive].max())
    num = nu.weights * np.exp(logits - shift)
    order = canonical_order(nu.support.points, nu.weights)
    den = _ordered_scalar_sum(num, order)
    return num / den


def softmatch_measure(
    potential: Potential, q: np.ndarray, nu: EmpiricalMeasure
) -> EmpiricalMeasure:
    """The softmatch output: same support as nu, reweighted by G(q, .)."""
    return EmpiricalMeasure(nu.support, softmatch_weights(potential, q, nu))


def apply_lookup(lookup: Lookup, mu: EmpiricalMeasure) -> EmpiricalMeasure:
    """Pushforward of mu through the lookup map; weights unchanged."""
    if lookup.in_dim != mu.dim:
        raise DimMismatch(
            f"lookup input dim {lookup.in_dim} vs measure dim {mu.dim}"
        )
    # weights pass through bitwise (no renormalization pass)
    return EmpiricalMeasure._trusted(
        PointCloud(lookup.apply_points(mu.support.points)), mu.weights
    )


# ---------------------------------------------------------------------------
# Attention kernels
# ---------------------------------------------------------------------------

def attention_kernel(
    cfg: AttentionConfig, q: np.ndarray, mu: EmpiricalMeasure
) -> np.ndarray:
    """Location of the output Dirac: barycenter(lookup(softmatch(mu, q)))."""
    reweighted = softmatch_measure(cfg.potential, q, mu)
    return barycenter(apply_lookup(cfg.lookup, reweighted))


def attention_pushforward(
    cfg: AttentionConfig, mu: EmpiricalMeasure
) -> EmpiricalMeasure:
    """The full output measure of self-attention: every support point of mu
    is mapped through the attention kernel (interacting with mu itself),
    keeping its weight."""
    outs = np.stack([attention_kernel(cfg, x, mu) for x in mu.support.points])
    return EmpiricalMeasure._trusted(PointCloud(outs), mu.weights)


def self_attention(cfg: AttentionConfig, cloud: PointCloud) -> PointCloud:
    """Apply the attention kernel with mu = m(X) to every point of X."""
    mu = empirical(cloud)
    outs = np.stack([attention_kernel(cfg, x, mu) for x in cloud.points])
    return PointCloud(outs)


def multi_head(cfg: MultiHeadConfig, cloud: PointCloud) -> PointCloud:
    """Multi-head attention through the mixture-of-kernels algebra.

    Per point, each head's output y_h is pushed through delta_{y_h W_O_h H},
    the H Diracs are mixed with weights 1/H, and the mixture is projected to
    its barycenter, reproducing sum_h y_h W_O_h (the concat-matmul identity).
    """
    mu = empirical(cloud)
    h_count = cfg.n_heads
    rows = []
    for x in cloud.points:
        locs = np.stack(
            [
                (attention_kernel(h.attention, x, mu) @ h.w_o) * h_count
                for h in cfg.heads
            ]
        )
        mixture = EmpiricalMeasure(PointCloud(locs), np.full(h_count, 1.0 / h_count))
        rows.append(barycenter(mixture))
    return PointCloud(np.stack(rows))


def transformer_layer(
    mh: MultiHeadConfig, ffn: FfnConfig, cloud: PointCloud
) -> PointCloud:
    """FFN applied pointwise to the multi-head output."""
    if ffn.dim != mh.dim:
        raise DimMismatch(f"FFN dim {ffn.dim} vs attention dim {mh.dim}")
    attended = multi_head(mh, cloud)
    return PointCloud(ffn.apply_points(attended.points))


# ---------------------------------------------------------------------------
# Reference (matrix form) oracles, independent of the measure pipeline
# ---------------------------------------------------------------------------

def _as_similarity(a) -> Callable[[np.ndarray, np.ndarray], float]:
    if isinstance(a, Potential):
        return a.similarity
    return a


def reference_attention(a, q, keys: PointCloud, values: PointCloud) -> np.ndarray:
    """The textbook formula sum_i softmax(a(q, k_.))_i v_i.

    Direct exponentials with a max shift; no measure machinery.
    """
    if keys.n != values.n:
        raise KeyValueMismatch(f"{keys.n} keys vs {values.n} values")
    sim = _as_similarity(a)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    logits = np.array([sim(q, k) for k in keys.points])
    e = np.exp(logits - logits.max())
    p = e / e.sum()
    return p @ values.points


def reference_self_attention(cfg: AttentionConfig, cloud: PointCloud) -> np.ndarray:
    """Row-wise matrix attention with values = lookup(X); shape (N, d_out)."""
    logits = cfg.potential.similarity_matrix(cloud.points, cloud.points)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    return p @ cfg.lookup.apply_points(cloud.points)


def reference_multi_head(cfg: MultiHeadConfig, cloud: PointCloud) -> np.ndarray:
    """Concat-and-matmul multi-head attention, computed head by head in
    matrix form: sum_h SelfAttention_h(X) W_O_h."""
    out = np.zeros((cloud.n, cfg.heads[0].w_o.shape[1]))
    for h in cfg.heads:
        out = out + reference_self_attention(h.attention, cloud) @ h.w_o
    return out


def reference_transformer_layer(
    mh: MultiHeadConfig, ffn: FfnConfig, cloud: PointCloud
) -> np.ndarray:
    return ffn.apply_points(reference_multi_head(mh, cloud))
