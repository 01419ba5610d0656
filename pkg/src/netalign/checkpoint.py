"""
Flat binary checkpoints for transport plans and encoder parameters.

Layout (little endian):
  8 bytes  magic            b"NAPLAN\\x00\\x01" (plan) or b"NAPARM\\x00\\x01" (params)
  uint32   array count
  per array: uint32 rows, uint32 cols, rows*cols float64 in row-major order

A JSON sidecar with the same stem and a `.json` suffix carries metadata.
Both files are written to a temporary name first and moved into place.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np

from .encoder import PARAM_NAMES, EncoderParams
from .errors import CheckpointError, ShapeError
from .log import log_event
from .ot import TransportPlan

logger = logging.getLogger(__name__)

PLAN_MAGIC = b"NAPLAN\x00\x01"
PARAMS_MAGIC = b"NAPARM\x00\x01"
_COUNT = struct.Struct("<I")
_DIMS = struct.Struct("<II")


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    p = Path(path)
    tmp = p.with_name(p.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, p)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _as_2d(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype="<f8")
    return a.reshape(1, -1) if a.ndim == 1 else a


def _encode(magic: bytes, arrays: list[np.ndarray]) -> bytes:
    parts = [magic, _COUNT.pack(len(arrays))]
    for a in arrays:
        a2 = np.ascontiguousarray(_as_2d(a))
        parts.append(_DIMS.pack(*a2.shape))
        parts.append(a2.tobytes(order="C"))
    return b"".join(parts)


def _decode(data: bytes, magic: bytes, path: Path) -> list[np.ndarray]:
    if len(data) < len(magic) + _COUNT.size or data[: len(magic)] != magic:
        raise CheckpointError(f"{path}: bad magic bytes")
    (count,) = _COUNT.unpack_from(data, len(magic))
    pos = len(magic) + _COUNT.size
    arrays: list[np.ndarray] = []
    for i in range(count):
        if pos + _DIMS.size > len(data):
            raise CheckpointError(f"{path}: truncated header of array {i}")
        rows, cols = _DIMS.unpack_from(data, pos)
        pos += _DIMS.size
        nbytes = rows * cols * 8
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: array {i} declares {rows}x{cols} but file is short")
        arrays.append(
            np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos)
            .reshape(rows, cols)
            .astype(np.float64)
        )
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return arrays


def _read(path: str | Path, magic: bytes) -> list[np.ndarray]:
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {p}: {e}") from e
    return _decode(data, magic, p)


def _write_sidecar(path: Path, kind: str, meta: dict[str, Any] | None) -> None:
    record = {"kind": kind, "created": datetime.now(UTC).isoformat(), **(meta or {})}
    atomic_write_text(sidecar_path(path), json.dumps(record, indent=2, default=str) + "\n")


def read_sidecar(path: str | Path) -> dict[str, Any]:
    p = sidecar_path(path)
    try:
        return dict(json.loads(p.read_text(encoding="utf-8")))
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read sidecar {p}: {e}") from e


def save_plan(plan: TransportPlan, path: str | Path, meta: dict[str, Any] | None = None) -> None:
    p = Path(path)
    atomic_write_bytes(p, _encode(PLAN_MAGIC, [plan.values, plan.mu1, plan.mu2]))
    n1, n2 = plan.shape
    _write_sidecar(p, "plan", {"n1": n1, "n2": n2, **(meta or {})})
    log_event(logger, "plan_saved", path=str(p), n1=n1, n2=n2)


def load_plan(path: str | Path) -> TransportPlan:
    arrays = _read(path, PLAN_MAGIC)
    if len(arrays) != 3:
        raise CheckpointError(f"{path}: plan checkpoint holds {len(arrays)} arrays, expected 3")
    values, mu1, mu2 = arrays
    n1, n2 = values.shape
    if mu1.shape != (1, n1) or mu2.shape != (1, n2):
        raise CheckpointError(f"{path}: marginal dims do not match a {n1}x{n2} plan")
    return TransportPlan(values, mu1.ravel(), mu2.ravel())


def save_params(
    params: EncoderParams, path: str | Path, meta: dict[str, Any] | None = None
) -> None:
    p = Path(path)
    arrays = [params.tensors()[k] for k in PARAM_NAMES]
    arrays += [params.m[k] for k in PARAM_NAMES]
    arrays += [params.v[k] for k in PARAM_NAMES]
    arrays.append(np.array([[float(params.step)]]))
    atomic_write_bytes(p, _encode(PARAMS_MAGIC, arrays))
    _write_sidecar(
        p,
        "params",
        {
            "in_dim": params.in_dim,
            "hidden": params.out_dim,
            "step": params.step,
            "lam": params.lam,
            **(meta or {}),
        },
    )


def load_params(path: str | Path) -> EncoderParams:
    arrays = _read(path, PARAMS_MAGIC)
    k = len(PARAM_NAMES)
    if len(arrays) != 3 * k + 1:
        raise CheckpointError(f"{path}: params checkpoint holds {len(arrays)} arrays")

    def _unpack(block: list[np.ndarray]) -> dict[str, np.ndarray]:
        # biases were stored as 1 x h rows
        return {
            name: a.ravel() if name.startswith("b") else a
            for name, a in zip(PARAM_NAMES, block, strict=True)
        }

    tensors = _unpack(arrays[:k])
    # the shift lives in the sidecar; params saved without one load with lam=None
    lam: float | None = None
    if sidecar_path(path).exists():
        stored = read_sidecar(path).get("lam")
        lam = None if stored is None else float(stored)
    try:
        return EncoderParams(
            **tensors,
            m=_unpack(arrays[k : 2 * k]),
            v=_unpack(arrays[2 * k : 3 * k]),
            step=int(arrays[-1][0, 0]),
            lam=lam,
        )
    except ShapeError as e:
        raise CheckpointError(f"{path}: inconsistent parameter shapes: {e}") from e
