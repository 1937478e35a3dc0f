"""Bit-exact file formats.

Depth maps (``DMAP1``) and normal maps (``NMAP1``) are tiny binary files:

    line 1:  magic ("DMAP1" / "NMAP1")
    line 2:  "<width> <height>"
    then width * height (* 3 for normals) little-endian IEEE-754 float32
    values, row-major, top row first.

Undefined normals are encoded as (0, 0, 0).  Annotation records travel as
JSON lines, one complete object per line, with a ``kind`` discriminator;
unknown fields survive a read/write round trip.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .annotations import AnnotationTask, WorkerResponse
from .geometry import DepthMap, NormalMap
from .losses import NormalAnnotation, RelativeDepthAnnotation

DEPTH_MAGIC = b"DMAP1"
NORMAL_MAGIC = b"NMAP1"

RECORD_KINDS = ("normal", "ordinal", "response", "task")
# Additional kinds used by the annotation service log and exports.
SERVICE_RECORD_KINDS = ("served", "aggregate")


class FormatError(ValueError):
    """Malformed file; carries the byte offset or line number when known."""

    def __init__(self, message: str, *, byte_offset: int | None = None, line: int | None = None):
        loc = ""
        if byte_offset is not None:
            loc = f" (byte offset {byte_offset})"
        elif line is not None:
            loc = f" (line {line})"
        super().__init__(message + loc)
        self.byte_offset = byte_offset
        self.line = line


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory plus rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Binary grids
# ---------------------------------------------------------------------------

def write_depth_map(path: str | Path, z: DepthMap) -> None:
    header = DEPTH_MAGIC + b"\n" + f"{z.width} {z.height}\n".encode("ascii")
    payload = z.values.astype("<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_depth_map(path: str | Path) -> DepthMap:
    data = Path(path).read_bytes()
    w, h, offset = _parse_grid_header(data, DEPTH_MAGIC)
    arr = _parse_payload(data, offset, w * h, channels=1)
    bad = ~np.isfinite(arr)
    if np.any(bad):
        first = int(np.flatnonzero(bad)[0])
        raise FormatError("non-finite depth value", byte_offset=offset + 4 * first)
    return DepthMap(arr.reshape(h, w).astype(np.float64))


def write_normal_map(path: str | Path, nm: NormalMap) -> None:
    header = NORMAL_MAGIC + b"\n" + f"{nm.width} {nm.height}\n".encode("ascii")
    payload = nm.vectors.astype("<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_normal_map(path: str | Path) -> NormalMap:
    data = Path(path).read_bytes()
    w, h, offset = _parse_grid_header(data, NORMAL_MAGIC)
    arr = _parse_payload(data, offset, w * h * 3, channels=3)
    bad = ~np.isfinite(arr)
    if np.any(bad):
        first = int(np.flatnonzero(bad)[0])
        raise FormatError("non-finite normal component", byte_offset=offset + 4 * first)
    vec = arr.reshape(h, w, 3).astype(np.float64)
    defined = np.any(vec != 0.0, axis=-1)
    norms = np.linalg.norm(vec[defined], axis=-1)
    if norms.size and np.max(np.abs(norms - 1.0)) > 1e-6:
        bad_idx = int(np.flatnonzero(np.abs(norms - 1.0) > 1e-6)[0])
        flat = np.flatnonzero(defined.ravel())[bad_idx]
        raise FormatError("defined normal is not unit length", byte_offset=offset + 12 * int(flat))
    # Scrub the float32 quantization so angle computations see exact units.
    vec[defined] /= norms[:, None]
    return NormalMap(vectors=vec, defined=defined)


def _parse_grid_header(data: bytes, magic: bytes) -> tuple[int, int, int]:
    first_nl = data.find(b"\n")
    if first_nl < 0 or data[:first_nl] != magic:
        raise FormatError(f"bad magic, expected {magic.decode()}", byte_offset=0)
    second_nl = data.find(b"\n", first_nl + 1)
    if second_nl < 0:
        raise FormatError("missing dimension line", byte_offset=len(data))
    dims = data[first_nl + 1 : second_nl].split()
    try:
        w, h = int(dims[0]), int(dims[1])
    except (IndexError, ValueError):
        raise FormatError("dimension line must be '<width> <height>'", byte_offset=first_nl + 1)
    if w < 1 or h < 1 or len(dims) != 2:
        raise FormatError(f"bad dimensions {w}x{h}", byte_offset=first_nl + 1)
    return w, h, second_nl + 1


def _parse_payload(data: bytes, offset: int, count: int, channels: int) -> np.ndarray:
    expected = 4 * count
    actual = len(data) - offset
    if actual < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {actual}",
            byte_offset=len(data),
        )
    if actual > expected:
        raise FormatError("trailing bytes after payload", byte_offset=offset + expected)
    return np.frombuffer(data, dtype="<f4", count=count, offset=offset)


# ---------------------------------------------------------------------------
# JSON-lines records
# ---------------------------------------------------------------------------

def dump_record(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


def read_records(path: str | Path, allow_service_kinds: bool = False) -> list[dict]:
    """Parse and validate a JSONL annotation file.

    Unknown fields are preserved; unknown kinds are rejected unless
    ``allow_service_kinds`` admits the service-log extensions.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"invalid JSON: {e.msg}", line=line_no) from e
            if not isinstance(rec, dict):
                raise FormatError("record is not a JSON object", line=line_no)
            try:
                validate_record(rec, allow_service_kinds=allow_service_kinds)
            except ValueError as e:
                raise FormatError(str(e), line=line_no) from e
            out.append(rec)
    return out


def write_records(path: str | Path, records: list[dict]) -> None:
    body = "".join(dump_record(r) + "\n" for r in records)
    atomic_write_bytes(path, body.encode("utf-8"))


def validate_record(rec: dict, allow_service_kinds: bool = False) -> None:
    kind = rec.get("kind")
    kinds = RECORD_KINDS + (SERVICE_RECORD_KINDS if allow_service_kinds else ())
    if kind not in kinds:
        raise ValueError(f"unknown record kind {kind!r}")
    if kind == "normal":
        record_to_normal_annotation(rec)
    elif kind == "ordinal":
        record_to_ordinal_annotation(rec)
    elif kind == "task":
        record_to_task(rec)
    elif kind == "response":
        record_to_response(rec)
    elif kind == "served":
        for key in ("task_id", "worker_id"):
            if not isinstance(rec.get(key), str) or not rec[key]:
                raise ValueError(f"served record needs a nonempty {key}")


# -- typed conversions -------------------------------------------------------

def normal_annotation_to_record(a: NormalAnnotation) -> dict:
    return {
        "kind": "normal",
        "p": [int(a.p[0]), int(a.p[1])],
        "n": [float(c) for c in a.n],
        "scale_level": int(a.scale_level),
    }


def record_to_normal_annotation(rec: dict) -> NormalAnnotation:
    return NormalAnnotation(
        p=_pixel(rec, "p"),
        n=np.asarray(rec["n"], dtype=np.float64),
        scale_level=int(rec.get("scale_level", 0)),
    )


def ordinal_annotation_to_record(a: RelativeDepthAnnotation) -> dict:
    return {
        "kind": "ordinal",
        "i": [int(a.i[0]), int(a.i[1])],
        "j": [int(a.j[0]), int(a.j[1])],
        "r": a.r,
        "weight": float(a.weight),
    }


def record_to_ordinal_annotation(rec: dict) -> RelativeDepthAnnotation:
    return RelativeDepthAnnotation(
        i=_pixel(rec, "i"),
        j=_pixel(rec, "j"),
        r=rec["r"],
        weight=float(rec.get("weight", 1.0)),
    )


def task_to_record(t: AnnotationTask, include_gold: bool = True) -> dict:
    rec = {
        "kind": "task",
        "task_id": t.task_id,
        "image_id": t.image_id,
        "keypoint": [int(t.keypoint[0]), int(t.keypoint[1])],
        "focal_length_px": float(t.focal_length_px),
    }
    if include_gold and t.gold is not None:
        rec["gold"] = [float(c) for c in t.gold]
    return rec


def record_to_task(rec: dict) -> AnnotationTask:
    gold = rec.get("gold")
    return AnnotationTask(
        task_id=str(rec["task_id"]),
        image_id=str(rec.get("image_id", "")),
        keypoint=_pixel(rec, "keypoint"),
        focal_length_px=float(rec["focal_length_px"]),
        gold=None if gold is None else np.asarray(gold, dtype=np.float64),
    )


def response_to_record(r: WorkerResponse) -> dict:
    rec = {
        "kind": "response",
        "task_id": r.task_id,
        "worker_id": r.worker_id,
        "normal": None if r.normal is None else [float(c) for c in r.normal],
        "hard_to_tell": bool(r.hard_to_tell),
        "elapsed_s": float(r.elapsed_s),
    }
    if r.response_id is not None:
        rec["response_id"] = r.response_id
    return rec


def record_to_response(rec: dict) -> WorkerResponse:
    normal = rec.get("normal")
    rid = rec.get("response_id")
    return WorkerResponse(
        task_id=str(rec["task_id"]),
        worker_id=str(rec["worker_id"]),
        normal=None if normal is None else np.asarray(normal, dtype=np.float64),
        hard_to_tell=bool(rec.get("hard_to_tell", False)),
        elapsed_s=float(rec.get("elapsed_s", 0.0)),
        response_id=None if rid is None else str(rid),
    )


def _pixel(rec: dict, key: str) -> tuple[int, int]:
    val = rec[key]
    if not isinstance(val, (list, tuple)) or len(val) != 2:
        raise ValueError(f"{key} must be an [x, y] pixel pair")
    return (int(val[0]), int(val[1]))


def load_annotations(path: str | Path) -> tuple[list[RelativeDepthAnnotation], list[NormalAnnotation]]:
    """Split a JSONL file into ordinal and normal annotations, file order kept."""
    ordinal: list[RelativeDepthAnnotation] = []
    normals: list[NormalAnnotation] = []
    for rec in read_records(path):
        if rec["kind"] == "ordinal":
            ordinal.append(record_to_ordinal_annotation(rec))
        elif rec["kind"] == "normal":
            normals.append(record_to_normal_annotation(rec))
    return ordinal, normals
