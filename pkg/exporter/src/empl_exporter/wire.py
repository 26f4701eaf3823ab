"""Binary embedding-dump writer.

Little-endian throughout.  Layout: a 32-byte header (magic, version, dim,
record count, class count, flags, token dim), a dense class table in id
order (id, name length, utf-8 name, optional float32 word vector), then one
record per item (modality byte, class id, float32 vector, optional
reference prediction).  Flag bits: 1 word vectors, 2 reference predictions,
4 unit-normalized vectors.
"""

from __future__ import annotations

import os
import struct
import tempfile
from collections.abc import Sequence

import numpy as np

MAGIC = b"EMPD"
VERSION = 1
FLAG_WORD_VECS = 1
FLAG_REF_PRED = 2
FLAG_NORMALIZED = 4
MODALITY_IMAGE = 0
MODALITY_TEXT = 1

_HEADER = struct.Struct("<4sIIQIII")
_MAX_NAME = 1 << 20


class WireError(ValueError):
    """The given arrays cannot form a valid dump."""


def dump_bytes(
    class_names: Sequence[str],
    vectors: np.ndarray,
    class_id: Sequence[int],
    *,
    word_vecs: np.ndarray | None = None,
    ref_pred: Sequence[int] | None = None,
    modality: Sequence[int] | None = None,
    normalized: bool = False,
) -> bytes:
    """Serialize one dump.  Vectors are rounded to float32, as on the wire."""
    names = tuple(str(n) for n in class_names)
    if not names:
        raise WireError("at least one class is required")
    if len(set(names)) != len(names) or any(not n for n in names):
        raise WireError("class names must be unique and non-empty")
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[1] < 1:
        raise WireError(f"vectors must be (n, dim >= 1), got {vectors.shape}")
    if not np.all(np.isfinite(vectors)):
        raise WireError("vectors contain non-finite values")
    n, dim = vectors.shape
    class_id = np.asarray(class_id, dtype=np.int64)
    if class_id.shape != (n,):
        raise WireError("class_id must align with vectors")
    if n and (class_id.min() < 0 or class_id.max() >= len(names)):
        raise WireError("class_id outside the class table")
    if modality is None:
        modality = np.zeros(n, dtype=np.int64)
    else:
        modality = np.asarray(modality, dtype=np.int64)
    if modality.shape != (n,):
        raise WireError("modality must align with vectors")
    if n and not np.all((modality == MODALITY_IMAGE) | (modality == MODALITY_TEXT)):
        raise WireError("modality must be 0 (image) or 1 (text)")
    if word_vecs is not None:
        word_vecs = np.ascontiguousarray(word_vecs, dtype="<f4")
        if word_vecs.ndim != 2 or word_vecs.shape[0] != len(names) or word_vecs.shape[1] < 1:
            raise WireError(f"word_vecs must be ({len(names)}, d_tok >= 1), got {word_vecs.shape}")
        if not np.all(np.isfinite(word_vecs)):
            raise WireError("word_vecs contain non-finite values")
    if ref_pred is not None:
        ref_pred = np.asarray(ref_pred, dtype=np.int64)
        if ref_pred.shape != (n,):
            raise WireError("ref_pred must align with vectors")
        if n and (ref_pred.min() < 0 or ref_pred.max() >= len(names)):
            raise WireError("ref_pred outside the class table")
    if normalized and n:
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise WireError("normalized flag set but vectors are not unit length")

    flags = 0
    if word_vecs is not None:
        flags |= FLAG_WORD_VECS
    if ref_pred is not None:
        flags |= FLAG_REF_PRED
    if normalized:
        flags |= FLAG_NORMALIZED
    d_tok = 0 if word_vecs is None else int(word_vecs.shape[1])

    parts = [_HEADER.pack(MAGIC, VERSION, dim, n, len(names), flags, d_tok)]
    for cid, name in enumerate(names):
        raw = name.encode("utf-8")
        if len(raw) >= _MAX_NAME:
            raise WireError(f"class name too long ({len(raw)} bytes)")
        parts.append(struct.pack("<II", cid, len(raw)))
        parts.append(raw)
        if word_vecs is not None:
            parts.append(word_vecs[cid].tobytes())
    rec_head = struct.Struct("<BI")
    for i in range(n):
        parts.append(rec_head.pack(int(modality[i]), int(class_id[i])))
        parts.append(vectors[i].tobytes())
        if ref_pred is not None:
            parts.append(struct.pack("<I", int(ref_pred[i])))
    return b"".join(parts)


def write_dump(
    path: str,
    class_names: Sequence[str],
    vectors: np.ndarray,
    class_id: Sequence[int],
    *,
    word_vecs: np.ndarray | None = None,
    ref_pred: Sequence[int] | None = None,
    modality: Sequence[int] | None = None,
    normalized: bool = False,
) -> None:
    """dump_bytes to disk, atomically: the target never holds a partial file."""
    blob = dump_bytes(
        class_names,
        vectors,
        class_id,
        word_vecs=word_vecs,
        ref_pred=ref_pred,
        modality=modality,
        normalized=normalized,
    )
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
