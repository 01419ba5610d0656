"""
Graph data model, dataset loading, anchors, walk matrices and noise injection.

Node ids are dense 0-based integers. Every graph is undirected and
unweighted: adjacency is a symmetric binary CSR matrix with zero diagonal.
"""

from __future__ import annotations

import csv
import logging
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ParseError, RangeError, ShapeError
from .log import log_event, ms_since

logger = logging.getLogger(__name__)

NoiseKind = Literal["structural", "attribute"]
AnchorRole = Literal["all", "train", "test"]


@dataclass(frozen=True, eq=False)
class Graph:
    adjacency: sp.csr_array
    attributes: np.ndarray | None = None

    def __post_init__(self) -> None:
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError(f"adjacency must be square, got {a.shape}")
        if a.diagonal().any():
            raise DataError("adjacency has self-loops")
        if (a != a.T).nnz:
            raise DataError("adjacency is not symmetric")
        if self.attributes is not None:
            x = self.attributes
            if x.ndim != 2 or x.shape[0] != a.shape[0]:
                raise ShapeError(
                    f"attribute matrix has {x.shape[0]} rows, graph has {a.shape[0]} nodes"
                )
            frozen = np.array(x, dtype=np.float64)
            frozen.setflags(write=False)
            object.__setattr__(self, "attributes", frozen)

    @property
    def n(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def m(self) -> int:
        """Undirected edge count."""
        return int(self.adjacency.nnz // 2)

    @property
    def d(self) -> int:
        return 0 if self.attributes is None else int(self.attributes.shape[1])

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def upper_edges(self) -> tuple[np.ndarray, np.ndarray]:
        coo = sp.triu(self.adjacency, k=1, format="coo")
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64)

    @classmethod
    def from_edges(
        cls,
        n: int,
        rows: Iterable[int] | np.ndarray,
        cols: Iterable[int] | np.ndarray,
        attributes: np.ndarray | None = None,
    ) -> Graph:
        """Build a symmetric binary graph; duplicates collapse, self-loops are dropped."""
        r = np.asarray(list(rows) if not isinstance(rows, np.ndarray) else rows, dtype=np.int64)
        c = np.asarray(list(cols) if not isinstance(cols, np.ndarray) else cols, dtype=np.int64)
        if r.size and (min(r.min(), c.min()) < 0 or max(r.max(), c.max()) >= n):
            raise RangeError(f"edge endpoint outside [0, {n})")
        keep = r != c
        r, c = r[keep], c[keep]
        data = np.ones(2 * r.size, dtype=np.float64)
        coo = sp.coo_array(
            (data, (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(n, n)
        )
        a = sp.csr_array(coo)
        a.sum_duplicates()
        a.data[:] = 1.0
        a.sort_indices()
        return cls(a, attributes)


@dataclass(frozen=True)
class AnchorSet:
    pairs: tuple[tuple[int, int], ...]
    role: AnchorRole = "all"
    _sources: np.ndarray = field(init=False, repr=False, compare=False)
    _targets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        src = np.array([p[0] for p in self.pairs], dtype=np.int64)
        dst = np.array([p[1] for p in self.pairs], dtype=np.int64)
        if np.unique(src).size != src.size:
            raise DataError("anchor set repeats a node id on the first side")
        if np.unique(dst).size != dst.size:
            raise DataError("anchor set repeats a node id on the second side")
        object.__setattr__(self, "_sources", src)
        object.__setattr__(self, "_targets", dst)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> np.ndarray:
        return self._sources

    @property
    def targets(self) -> np.ndarray:
        return self._targets

    def check_range(self, n1: int, n2: int) -> None:
        if len(self) == 0:
            return
        if self._sources.min() < 0 or self._sources.max() >= n1:
            raise RangeError(f"anchor id outside first graph [0, {n1})")
        if self._targets.min() < 0 or self._targets.max() >= n2:
            raise RangeError(f"anchor id outside second graph [0, {n2})")

    def disjoint_from(self, other: AnchorSet) -> bool:
        return not set(self.pairs) & set(other.pairs)

    @classmethod
    def of(cls, pairs: Sequence[tuple[int, int]], role: AnchorRole = "all") -> AnchorSet:
        return cls(tuple((int(x), int(y)) for x, y in pairs), role)


@dataclass(frozen=True, eq=False)
class WalkMatrix:
    """W = (D^-1 A)^T; columns of isolated nodes are all zero."""

    matrix: sp.csr_array

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])


# ---------- Readers / writers ----------


def _data_lines(path: Path) -> Iterable[tuple[int, str]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _parse_pair(line: str, path: Path, lineno: int) -> tuple[int, int]:
    parts = line.split()
    if len(parts) != 2:
        raise ParseError(f"expected two ids, got {len(parts)} fields", str(path), lineno)
    try:
        a, b = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"non-integer id in {line!r}", str(path), lineno) from None
    if a < 0 or b < 0:
        raise RangeError(f"{path}:{lineno}: negative node id")
    return a, b


def read_edge_list(path: str | Path, n: int | None = None) -> tuple[int, np.ndarray, np.ndarray]:
    """Return (n, rows, cols). When n is given, ids >= n raise RangeError."""
    p = Path(path)
    rows: list[int] = []
    cols: list[int] = []
    for lineno, line in _data_lines(p):
        a, b = _parse_pair(line, p, lineno)
        if n is not None and max(a, b) >= n:
            raise RangeError(f"{p}:{lineno}: node id {max(a, b)} >= declared n={n}")
        rows.append(a)
        cols.append(b)
    inferred = (max(max(rows), max(cols)) + 1) if rows else 0
    return (n if n is not None else inferred), np.array(rows, np.int64), np.array(cols, np.int64)


def read_attributes(path: str | Path) -> np.ndarray:
    p = Path(path)
    out: list[list[float]] = []
    width: int | None = None
    with p.open("r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"row width {len(row)} != {width}", str(p), lineno)
            try:
                out.append([float(v) for v in row])
            except ValueError:
                raise ParseError("non-numeric attribute value", str(p), lineno) from None
    return np.array(out, dtype=np.float64).reshape(len(out), width or 0)


def read_anchors(path: str | Path, role: AnchorRole = "all") -> AnchorSet:
    p = Path(path)
    pairs = [_parse_pair(line, p, lineno) for lineno, line in _data_lines(p)]
    return AnchorSet(tuple(pairs), role)


def load_graph(
    edges_path: str | Path, attrs_path: str | Path | None = None, n: int | None = None
) -> Graph:
    attrs = read_attributes(attrs_path) if attrs_path else None
    if attrs is not None and n is not None and attrs.shape[0] != n:
        raise ShapeError(f"{attrs_path}: {attrs.shape[0]} attribute rows, declared n={n}")
    declared = n if n is not None else (attrs.shape[0] if attrs is not None else None)
    size, rows, cols = read_edge_list(edges_path, declared)
    return Graph.from_edges(size, rows, cols, attrs)


def load_dataset(
    edges1: str | Path,
    edges2: str | Path,
    anchors: str | Path,
    attrs1: str | Path | None = None,
    attrs2: str | Path | None = None,
    n1: int | None = None,
    n2: int | None = None,
) -> tuple[Graph, Graph, AnchorSet]:
    t0 = time.perf_counter()
    g1 = load_graph(edges1, attrs1, n1)
    g2 = load_graph(edges2, attrs2, n2)
    gt = read_anchors(anchors)
    try:
        gt.check_range(g1.n, g2.n)
    except RangeError as e:
        if n1 is not None and n2 is not None:
            raise
        # an isolated highest id never shows up in an edge list
        raise RangeError(
            f"{e}; node counts were inferred from the edge lists, "
            "set n1 / n2 when the highest node ids have no edges"
        ) from e
    log_event(
        logger,
        "dataset_loaded",
        n1=g1.n,
        m1=g1.m,
        n2=g2.n,
        m2=g2.m,
        d1=g1.d,
        d2=g2.d,
        anchors=len(gt),
        ms=ms_since(t0),
    )
    return g1, g2, gt


def write_edge_list(g: Graph, path: str | Path) -> None:
    rows, cols = g.upper_edges()
    with Path(path).open("w", encoding="utf-8") as fh:
        for a, b in zip(rows.tolist(), cols.tolist(), strict=True):
            fh.write(f"{a}\t{b}\n")


def write_attributes(g: Graph, path: str | Path) -> None:
    if g.attributes is None:
        raise DataError("graph has no attributes to write")
    np.savetxt(path, g.attributes, delimiter=",", fmt="%.17g")


def write_anchors(anchors: AnchorSet, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for x, y in anchors.pairs:
            fh.write(f"{x}\t{y}\n")


# ---------- Anchors ----------


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_anchors(anchors: AnchorSet, train_ratio: float, seed: int) -> tuple[AnchorSet, AnchorSet]:
    """Seeded split; both halves keep the original file order."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError(f"train_ratio must lie in (0, 1), got {train_ratio}")
    if len(anchors) == 0:
        raise DataError("cannot split an empty anchor list")
    k = _round_half_up(train_ratio * len(anchors))
    perm = np.random.default_rng(seed).permutation(len(anchors))
    chosen = np.zeros(len(anchors), dtype=bool)
    chosen[perm[:k]] = True
    train = tuple(p for p, c in zip(anchors.pairs, chosen, strict=True) if c)
    test = tuple(p for p, c in zip(anchors.pairs, chosen, strict=True) if not c)
    log_event(logger, "anchors_split", train=len(train), test=len(test), seed=seed)
    return AnchorSet(train, "train"), AnchorSet(test, "test")


# ---------- Walk matrix ----------


def walk_matrix(g: Graph) -> WalkMatrix:
    deg = g.degrees()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    w = sp.csr_array((sp.diags_array(inv) @ g.adjacency).T)
    w.sort_indices()
    return WalkMatrix(w)


# ---------- Noise ----------


def _triu_offsets(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.int64)
    return i * (n - 1) - i * (i - 1) // 2


def _triu_to_linear(rows: np.ndarray, cols: np.ndarray, n: int) -> np.ndarray:
    return _triu_offsets(n)[rows] + (cols - rows - 1)


def _linear_to_triu(lin: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    offsets = _triu_offsets(n)
    rows = np.searchsorted(offsets, lin, side="right") - 1
    cols = lin - offsets[rows] + rows + 1
    return rows.astype(np.int64), cols.astype(np.int64)


def inject_noise(g: Graph, kind: NoiseKind, p: float, seed: int) -> Graph:
    """Flip p% of adjacency (upper triangle, n^2/2 reading) or attribute entries."""
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"noise percentage must lie in [0, 100], got {p}")
    rng = np.random.default_rng(seed)
    n = g.n
    if kind == "structural":
        total = n * (n - 1) // 2
        k = min(_round_half_up(p / 100.0 * n * n / 2.0), total)
        if k == 0:
            return g
        flips = rng.choice(total, size=k, replace=False).astype(np.int64)
        rows, cols = g.upper_edges()
        current = _triu_to_linear(rows, cols, n)
        new_r, new_c = _linear_to_triu(np.setxor1d(current, flips), n)
        out = Graph.from_edges(n, new_r, new_c, g.attributes)
        log_event(logger, "noise_injected", kind=kind, p=p, flipped=k, m_before=g.m, m_after=out.m)
        return out
    if kind == "attribute":
        x = g.attributes
        if x is None:
            raise DataError("attribute noise requested on a graph without attributes")
        if not np.isin(x, (0.0, 1.0)).all():
            raise DataError("attribute noise requires binary attributes")
        k = _round_half_up(p / 100.0 * x.size)
        if k == 0:
            return g
        idx = rng.choice(x.size, size=k, replace=False)
        flipped = x.copy()
        flat = flipped.reshape(-1)
        flat[idx] = 1.0 - flat[idx]
        log_event(logger, "noise_injected", kind=kind, p=p, flipped=k)
        return Graph(g.adjacency, flipped)
    raise ValueError(f"unknown noise kind: {kind!r}")


def synthesize_pair(
    g: Graph, insert_ratio: float = 0.10, delete_ratio: float = 0.15, seed: int = 0
) -> tuple[Graph, Graph, AnchorSet]:
    """Two noisy copies of g: one gains edges, the other loses edges and is permuted.

    Ground truth pairs every node x with perm[x].
    """
    if insert_ratio < 0 or not 0 <= delete_ratio <= 1:
        raise ValueError("insert_ratio must be >= 0 and delete_ratio in [0, 1]")
    rng = np.random.default_rng(seed)
    n = g.n
    rows, cols = g.upper_edges()
    existing = _triu_to_linear(rows, cols, n)
    total = n * (n - 1) // 2

    n_add = min(_round_half_up(insert_ratio * g.m), total - existing.size)
    added = np.empty(0, dtype=np.int64)
    while added.size < n_add:
        draw = rng.integers(0, total, size=2 * (n_add - added.size) + 8)
        fresh = np.setdiff1d(draw, existing)
        added = np.union1d(added, fresh)
    if added.size > n_add:
        added = rng.choice(added, size=n_add, replace=False)
    r1, c1 = _linear_to_triu(np.union1d(existing, added), n)
    g1 = Graph.from_edges(n, r1, c1, g.attributes)

    n_del = _round_half_up(delete_ratio * g.m)
    keep = np.ones(existing.size, dtype=bool)
    keep[rng.choice(existing.size, size=n_del, replace=False)] = False
    perm = rng.permutation(n)
    attrs2 = None
    if g.attributes is not None:
        attrs2 = np.empty_like(g.attributes)
        attrs2[perm] = g.attributes
    g2 = Graph.from_edges(n, perm[rows[keep]], perm[cols[keep]], attrs2)

    truth = AnchorSet(tuple((x, int(perm[x])) for x in range(n)))
    log_event(logger, "pair_synthesized", n=n, m1=g1.m, m2=g2.m, added=n_add, deleted=n_del)
    return g1, g2, truth
