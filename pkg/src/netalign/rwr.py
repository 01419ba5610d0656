"""
Random walk with restart features for anchor pairs.

Column k of both feature matrices belongs to train anchor pair k, so the
two graphs share one positional coordinate system.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DataError, ShapeError
from .graph import AnchorSet, Graph, WalkMatrix, walk_matrix
from .log import log_event, ms_since

logger = logging.getLogger(__name__)

DEFAULT_BETA = 0.15
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 1000


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """[R || X]: n_rwr RWR columns followed by raw attributes."""

    values: np.ndarray
    n_rwr: int

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


def rwr_vector(
    W: WalkMatrix,
    anchor: int,
    beta: float = DEFAULT_BETA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Fixed point of r = (1-beta) W r + beta e_anchor, iterated from e_anchor.

    The returned r has L1 residual <= tol: the last step's change bounds it
    because W never expands the L1 norm.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if not 0 <= anchor < W.n:
        raise DataError(f"anchor {anchor} outside [0, {W.n})")
    restart = np.zeros(W.n)
    restart[anchor] = beta
    r = np.zeros(W.n)
    r[anchor] = 1.0
    change = float("inf")
    for _ in range(max_iter):
        nxt = (1.0 - beta) * (W.matrix @ r) + restart
        change = float(np.abs(nxt - r).sum())
        r = nxt
        if change <= tol:
            return r
    raise ConvergenceError(f"RWR from anchor {anchor} did not converge", change, max_iter)


def _rwr_block(
    W: WalkMatrix, anchors: np.ndarray, beta: float, tol: float, max_iter: int, threads: int
) -> np.ndarray:
    out = np.empty((W.n, anchors.size))

    def _fill(k: int) -> None:
        out[:, k] = rwr_vector(W, int(anchors[k]), beta, tol, max_iter)

    if threads > 1 and anchors.size > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            # list() re-raises the first worker error
            list(pool.map(_fill, range(anchors.size)))
    else:
        for k in range(anchors.size):
            _fill(k)
    return out


def build_features(
    g1: Graph,
    g2: Graph,
    train_anchors: AnchorSet,
    beta: float = DEFAULT_BETA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    threads: int = 1,
) -> tuple[FeatureMatrix, FeatureMatrix]:
    train_anchors.check_range(g1.n, g2.n)
    if (g1.attributes is None) != (g2.attributes is None):
        raise ShapeError("only one of the two graphs carries attributes")
    if g1.d != g2.d:
        raise ShapeError(f"attribute widths differ: {g1.d} vs {g2.d}")
    t0 = time.perf_counter()
    r1 = _rwr_block(walk_matrix(g1), train_anchors.sources, beta, tol, max_iter, threads)
    r2 = _rwr_block(walk_matrix(g2), train_anchors.targets, beta, tol, max_iter, threads)
    if g1.attributes is not None and g2.attributes is not None:
        f1 = np.hstack([r1, g1.attributes])
        f2 = np.hstack([r2, g2.attributes])
    else:
        f1, f2 = r1, r2
    if f1.shape[1] == 0:
        raise DataError("no train anchors and no attributes: feature width is zero")
    log_event(
        logger,
        "features_built",
        anchors=len(train_anchors),
        width=int(f1.shape[1]),
        beta=beta,
        ms=ms_since(t0),
    )
    return FeatureMatrix(f1, len(train_anchors)), FeatureMatrix(f2, len(train_anchors))


def export_features(features: FeatureMatrix, path: str | Path) -> None:
    np.savetxt(path, features.values, delimiter=",", fmt="%.17g")
