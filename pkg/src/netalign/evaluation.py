"""
Ranking metrics for a G1 -> G2 alignment plan (or any score matrix).

rank(x, y) = 1 + #{y' : S(x, y') > S(x, y)}  (competition ranking, ties are free)
pessimistic rank = #{y' : S(x, y') >= S(x, y)}  (ties count against the pair)
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .encoder import EmbeddingPair
from .errors import ShapeError
from .graph import AnchorSet
from .ot import TransportPlan

DEFAULT_KS = (1, 10)
_ROW_CHUNK = 1024


@dataclass(frozen=True)
class RankRecord:
    source: int
    target: int
    rank: int

    @property
    def pair(self) -> tuple[int, int]:
        return self.source, self.target


def compute_ranks(
    S: TransportPlan | np.ndarray, test: AnchorSet, pessimistic: bool = False
) -> list[RankRecord]:
    values = S.values if isinstance(S, TransportPlan) else np.asarray(S)
    n1, n2 = values.shape
    test.check_range(n1, n2)
    src, tgt = test.sources, test.targets
    ranks = np.empty(len(test), dtype=np.int64)
    for lo in range(0, len(test), _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, len(test))
        rows = values[src[lo:hi]]
        truth = rows[np.arange(hi - lo), tgt[lo:hi]][:, None]
        if pessimistic:
            ranks[lo:hi] = (rows >= truth).sum(axis=1)
        else:
            ranks[lo:hi] = 1 + (rows > truth).sum(axis=1)
    return [
        RankRecord(int(x), int(y), int(r)) for x, y, r in zip(src, tgt, ranks, strict=True)
    ]


def embedding_scores(emb: EmbeddingPair) -> np.ndarray:
    """E1 E2^T, the similarity the cross cost M = exp(-E1 E2^T) is built from.

    Ranking these scores instead of a plan reads the alignment off the encoder alone.
    """
    if emb.E1.shape[1] != emb.E2.shape[1]:
        raise ShapeError(f"embedding widths differ: {emb.E1.shape[1]} vs {emb.E2.shape[1]}")
    return emb.E1 @ emb.E2.T


@dataclass(frozen=True)
class AlignmentMetrics:
    hits: dict[int, float]
    mrr: float
    count: int

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {f"hits@{k}": v for k, v in sorted(self.hits.items())}
        out["mrr"] = self.mrr
        out["count"] = self.count
        return out

    def to_text(self, prefix: str = "") -> str:
        lines = [f"{prefix}Hits@{k}\t{v:.6f}" for k, v in sorted(self.hits.items())]
        lines.append(f"{prefix}MRR\t{self.mrr:.6f}")
        return "\n".join(lines) + "\n"


def alignment_metrics(
    ranks: Sequence[RankRecord], ks: Iterable[int] = DEFAULT_KS
) -> AlignmentMetrics:
    if not ranks:
        raise ValueError("cannot score an empty rank list")
    r = np.fromiter((rec.rank for rec in ranks), dtype=np.int64, count=len(ranks))
    hits = {int(k): float((r <= k).mean()) for k in ks}
    return AlignmentMetrics(hits=hits, mrr=float((1.0 / r).mean()), count=len(ranks))


def write_metrics(
    metrics: AlignmentMetrics,
    text_path: str | Path,
    json_path: str | Path | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    Path(text_path).write_text(metrics.to_text(), encoding="utf-8")
    if json_path is not None:
        payload = metrics.to_dict() | (extra or {})
        Path(json_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
