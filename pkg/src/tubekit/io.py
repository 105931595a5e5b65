"""On-disk formats: the MOCT tensor container and the annotation JSON.

Tensor container layout (all integers little-endian uint32)::

    offset 0   4 bytes   magic b"MOCT"
    offset 4   uint32    version (currently 1)
    offset 8   uint32    rank (3 for a map, 4 for a clip tensor)
    offset 12  uint32*   one size per dimension
    ...        float32*  payload, little-endian, row-major (C order)

A rank-3 file holds one ``(Hg, Wg, channels)`` map; a rank-4 file holds
``(K, Hg, Wg, channels)``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, List

import numpy as np

from .core import Instance, Tube, Tubelet, Video

MAGIC = b"MOCT"
VERSION = 1
_U32 = struct.Struct("<I")


class FormatError(ValueError):
    """Raised for malformed tensor or annotation files."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim not in (3, 4):
        raise FormatError(f"tensor rank must be 3 or 4, got {arr.ndim}")
    if not np.isfinite(arr).all():
        raise FormatError("tensor contains non-finite values")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    if not np.array_equal(payload, arr):
        raise FormatError("tensor values are not representable as float32")
    header = MAGIC + _U32.pack(VERSION) + _U32.pack(arr.ndim)
    header += b"".join(_U32.pack(d) for d in arr.shape)
    return header + payload.tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError("bad magic: not a MOCT tensor file")
    version = _U32.unpack_from(data, 4)[0]
    if version != VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    rank = _U32.unpack_from(data, 8)[0]
    if rank not in (3, 4):
        raise FormatError(f"unsupported tensor rank {rank}")
    head = 12 + 4 * rank
    if len(data) < head:
        raise FormatError("truncated header")
    dims = tuple(_U32.unpack_from(data, 12 + 4 * i)[0] for i in range(rank))
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    if len(data) - head != expected:
        raise FormatError(
            f"payload length {len(data) - head} bytes does not match dims {dims} "
            f"({expected} bytes expected)")
    arr = np.frombuffer(data, dtype="<f4", offset=head).reshape(dims)
    if not np.isfinite(arr).all():
        raise FormatError("tensor contains non-finite values")
    return arr.astype(np.float32)


def write_tensor(arr, path) -> None:
    atomic_write_bytes(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def video_to_dict(video: Video) -> dict:
    return {"video_id": video.video_id, "num_frames": int(video.num_frames),
            "W": int(video.W), "H": int(video.H),
            "instances": [inst.to_dict() for inst in video.instances]}


def video_from_dict(d: dict) -> Video:
    try:
        instances = [Instance(int(i["class_id"]), int(i["start_frame"]), i["boxes"])
                     for i in d["instances"]]
        return Video(str(d["video_id"]), int(d["num_frames"]), int(d["W"]),
                     int(d["H"]), instances)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed annotation document: {exc}") from exc


def write_annotations(video: Video, path) -> None:
    atomic_write_text(path, dumps(video_to_dict(video)))


def read_annotations(path) -> Video:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return video_from_dict(doc)


def dumps(obj) -> str:
    """Canonical JSON used for every artifact so reruns compare byte-for-byte."""
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_tubelets(tubelets: Iterable[Tubelet], path) -> None:
    lines = [json.dumps(t.to_dict(), sort_keys=True) for t in tubelets]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_tubelets(path) -> List[Tubelet]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(Tubelet.from_dict(json.loads(line)))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{n}: bad tubelet record: {exc}") from exc
    return out


def write_tubes(tubes_by_video: dict, path) -> None:
    doc = {vid: [t.to_dict() for t in tubes] for vid, tubes in tubes_by_video.items()}
    atomic_write_text(path, dumps(doc))


def read_tubes(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
        return {vid: [Tube.from_dict(t) for t in tubes] for vid, tubes in doc.items()}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"{path}: bad tube document: {exc}") from exc
