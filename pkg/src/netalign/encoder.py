"""
Shared residual MLP encoder, embedding-derived costs and the exact gradient
of the unified objective with respect to the encoder weights.

Forward:  h = relu(F W1 + b1);  E = h + relu(h W2 + b2)
Costs:    M = exp(-clip(E1 E2^T)),  C_i = exp(-clip(E_i E_i^T)) on edges of G_i
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

from .errors import NonFiniteError, ShapeError
from .graph import Graph
from .ot import CostSet, SamplingShift, TransportPlan, gw_linearization
from .rwr import FeatureMatrix

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2")
DEFAULT_HIDDEN = 128
DEFAULT_LR = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CLAMP = 50.0
_CHUNK = 1 << 15

Grads = dict[str, np.ndarray]


@dataclass(frozen=True, eq=False)
class EncoderParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    m: Grads = field(default_factory=dict, repr=False)
    v: Grads = field(default_factory=dict, repr=False)
    step: int = 0
    # shift the final training plan was solved with; None before training
    lam: float | None = None

    def __post_init__(self) -> None:
        hidden = self.W1.shape[1]
        if self.W2.shape != (hidden, hidden):
            raise ShapeError(f"W2 must be {hidden}x{hidden} for the residual path")
        if self.b1.shape != (hidden,) or self.b2.shape != (hidden,):
            raise ShapeError("bias widths must equal the hidden width")
        zeros = {k: np.zeros_like(t) for k, t in self.tensors().items()}
        if not self.m:
            object.__setattr__(self, "m", zeros)
        if not self.v:
            object.__setattr__(self, "v", {k: z.copy() for k, z in zeros.items()})

    @property
    def in_dim(self) -> int:
        return int(self.W1.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.W2.shape[1])

    def tensors(self) -> Grads:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors().values())


@dataclass(frozen=True, eq=False)
class EmbeddingPair:
    E1: np.ndarray
    E2: np.ndarray


def init_encoder(
    in_dim: int, hidden: int = DEFAULT_HIDDEN, out: int = DEFAULT_HIDDEN, seed: int = 0
) -> EncoderParams:
    if in_dim < 1:
        raise ValueError(f"in_dim must be >= 1, got {in_dim}")
    if hidden != out:
        raise ValueError("hidden and output widths must match for the residual connection")
    rng = np.random.default_rng(seed)
    s1 = 1.0 / np.sqrt(in_dim)
    s2 = 1.0 / np.sqrt(hidden)
    return EncoderParams(
        W1=rng.uniform(-s1, s1, size=(in_dim, hidden)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-s2, s2, size=(hidden, out)),
        b2=np.zeros(out),
    )


def _values(F: FeatureMatrix | np.ndarray) -> np.ndarray:
    return F.values if isinstance(F, FeatureMatrix) else np.asarray(F, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class _Cache:
    X: np.ndarray
    z1: np.ndarray
    h: np.ndarray
    z2: np.ndarray
    E: np.ndarray


def _forward(params: EncoderParams, F: FeatureMatrix | np.ndarray) -> _Cache:
    X = _values(F)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise ShapeError(f"feature width {X.shape[-1]} != encoder in_dim {params.in_dim}")
    z1 = X @ params.W1 + params.b1
    h = np.maximum(z1, 0.0)
    z2 = h @ params.W2 + params.b2
    return _Cache(X, z1, h, z2, h + np.maximum(z2, 0.0))


def _backward(params: EncoderParams, cache: _Cache, dE: np.ndarray) -> Grads:
    g2 = dE * (cache.z2 > 0)
    dh = dE + g2 @ params.W2.T
    g1 = dh * (cache.z1 > 0)
    return {
        "W1": cache.X.T @ g1,
        "b1": g1.sum(axis=0),
        "W2": cache.h.T @ g2,
        "b2": g2.sum(axis=0),
    }


def encode(params: EncoderParams, F: FeatureMatrix | np.ndarray) -> np.ndarray:
    return _forward(params, F).E


def _rowwise_dot(A: np.ndarray, B: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """out[k] = <A[rows[k]], B[cols[k]]>, chunked to bound memory."""
    out = np.empty(rows.size)
    for lo in range(0, rows.size, _CHUNK):
        hi = lo + _CHUNK
        out[lo:hi] = np.einsum("ij,ij->i", A[rows[lo:hi]], B[cols[lo:hi]])
    return out


@dataclass(frozen=True, eq=False)
class _EdgeCost:
    C: sp.csr_array
    rows: np.ndarray
    cols: np.ndarray
    inside: np.ndarray

    @property
    def vals(self) -> np.ndarray:
        return self.C.data


def _edge_cost(E: np.ndarray, g: Graph, clamp: float) -> _EdgeCost:
    a = g.adjacency
    rows = np.repeat(np.arange(g.n), np.diff(a.indptr))
    cols = a.indices.astype(np.int64)
    z = _rowwise_dot(E, E, rows, cols)
    vals = np.exp(-np.clip(z, -clamp, clamp))
    c = sp.csr_array((vals, a.indices.copy(), a.indptr.copy()), a.shape)
    return _EdgeCost(c, rows, cols, (z > -clamp) & (z < clamp))


def cost_matrices(E: EmbeddingPair, g1: Graph, g2: Graph, clamp: float = CLAMP) -> CostSet:
    if E.E1.shape[1] != E.E2.shape[1]:
        raise ShapeError("embedding widths differ")
    if E.E1.shape[0] != g1.n or E.E2.shape[0] != g2.n:
        raise ShapeError("embedding rows do not match graph sizes")
    M = np.exp(-np.clip(E.E1 @ E.E2.T, -clamp, clamp))
    return CostSet(M, _edge_cost(E.E1, g1, clamp).C, _edge_cost(E.E2, g2, clamp).C)


def loss_and_grad(
    params: EncoderParams,
    F1: FeatureMatrix | np.ndarray,
    F2: FeatureMatrix | np.ndarray,
    g1: Graph,
    g2: Graph,
    S: TransportPlan,
    shift: SamplingShift,
    alpha: float,
    clamp: float = CLAMP,
) -> tuple[float, Grads]:
    """Objective J(theta; S, lam) and its exact gradient.

    dJ/dC1(a,b) = 2 C1(a,b) p1(a) p1(b) - 2 (S_n C2 S_n^T)(a,b) on stored edges,
    with p1 / p2 the row / column sums of S_n; C2 is symmetric in form.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    c1 = _forward(params, F1)
    c2 = _forward(params, F2)
    E1, E2 = c1.E, c2.E
    S_n = S.values - shift.lam

    Z = E1 @ E2.T
    M = np.exp(-np.clip(Z, -clamp, clamp))
    loss = (1.0 - alpha) * float((M * S_n).sum())
    dZ = -(1.0 - alpha) * S_n * M * ((Z > -clamp) & (Z < clamp))
    dE1 = dZ @ E2
    dE2 = dZ.T @ E1

    if alpha > 0.0:
        e1 = _edge_cost(E1, g1, clamp)
        e2 = _edge_cost(E2, g2, clamp)
        loss += alpha * float((gw_linearization(e1.C, e2.C, S_n) * S_n).sum())
        p1 = S_n.sum(axis=1)
        p2 = S_n.sum(axis=0)
        S_nT = np.ascontiguousarray(S_n.T)
        q1 = _rowwise_dot((e2.C.T @ S_nT).T, S_n, e1.rows, e1.cols)
        q2 = _rowwise_dot((e1.C.T @ S_n).T, S_nT, e2.rows, e2.cols)
        dC1 = 2.0 * alpha * (e1.vals * p1[e1.rows] * p1[e1.cols] - q1)
        dC2 = 2.0 * alpha * (e2.vals * p2[e2.rows] * p2[e2.cols] - q2)
        dE1 += _edge_backward(e1, dC1, E1)
        dE2 += _edge_backward(e2, dC2, E2)

    if not np.isfinite(loss):
        raise NonFiniteError(f"objective is not finite: {loss}")
    ga = _backward(params, c1, dE1)
    gb = _backward(params, c2, dE2)
    return loss, {k: ga[k] + gb[k] for k in PARAM_NAMES}


def _edge_backward(e: _EdgeCost, dC: np.ndarray, E: np.ndarray) -> np.ndarray:
    dz = -e.vals * dC * e.inside
    G = sp.csr_array((dz, e.C.indices, e.C.indptr), e.C.shape)
    return G @ E + G.T @ E


def adam_step(
    params: EncoderParams,
    grads: Grads,
    lr: float = DEFAULT_LR,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> EncoderParams:
    if not all(np.isfinite(grads[k]).all() for k in PARAM_NAMES):
        raise NonFiniteError("gradient has non-finite entries")
    step = params.step + 1
    bias1 = 1.0 - beta1**step
    bias2 = 1.0 - beta2**step
    new: Grads = {}
    m: Grads = {}
    v: Grads = {}
    for k, t in params.tensors().items():
        g = grads[k]
        m[k] = beta1 * params.m[k] + (1.0 - beta1) * g
        v[k] = beta2 * params.v[k] + (1.0 - beta2) * g * g
        new[k] = t - lr * (m[k] / bias1) / (np.sqrt(v[k] / bias2) + eps)
    return replace(params, **new, m=m, v=v, step=step)


def embed_pair(
    params: EncoderParams, F1: FeatureMatrix | np.ndarray, F2: FeatureMatrix | np.ndarray
) -> EmbeddingPair:
    return EmbeddingPair(encode(params, F1), encode(params, F2))


def mean_pairwise_distance(E: EmbeddingPair, max_rows: int = 1000) -> float:
    """Mean Euclidean distance over pooled embeddings of both graphs (strided subsample)."""
    pooled = np.vstack([E.E1, E.E2])
    if pooled.shape[0] < 2:
        return 0.0
    stride = max(1, pooled.shape[0] // max_rows)
    return float(pdist(pooled[::stride]).mean())


def export_embeddings(E: EmbeddingPair, path1: str | Path, path2: str | Path) -> None:
    np.savetxt(path1, E.E1, delimiter=",", fmt="%.17g")
    np.savetxt(path2, E.E2, delimiter=",", fmt="%.17g")
