"""Corpus to dump: embed every image and class name, then serialize."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .backends import DEFAULT_CLIP, get_backend, unit_rows
from .wire import write_dump


@dataclass(frozen=True)
class ExportSummary:
    path: str
    records: int
    classes: int
    dim: int
    backend: str


def export_dump(
    image_paths: Sequence[str],
    labels: Sequence[int],
    class_names: Sequence[str],
    out_path: str,
    backend: str = "toy",
    dim: int = 32,
    seed: int = 0,
    model: str = DEFAULT_CLIP,
) -> ExportSummary:
    """Embed a labeled image corpus and write it as one dump file.

    Image vectors become the records (modality 0), class-name vectors the
    word-vector table.  Each record carries this exporter's own prediction:
    the cosine argmax of its vector against the class table, computed from
    the float32 values a reader will see.  All vectors are unit length and
    the dump says so.  With backend "hf" the model's projection width
    overrides dim.
    """
    labels = [int(l) for l in labels]
    if len(labels) != len(image_paths):
        raise ValueError("labels must align with image_paths")
    if not image_paths:
        raise ValueError("nothing to export: no images given")
    if not all(0 <= l < len(class_names) for l in labels):
        raise ValueError("labels must index into class_names")

    enc = get_backend(backend, dim=dim, seed=seed, model=model)
    img32 = enc.image_vectors(image_paths).astype("<f4")
    txt32 = enc.text_vectors(class_names).astype("<f4")

    # Predictions from the rounded values, renormalized in float64, so any
    # reader recomputing cosines from the file reproduces the argmax.
    scores = unit_rows(img32.astype(np.float64)) @ unit_rows(txt32.astype(np.float64)).T
    ref = np.argmax(scores, axis=1)

    write_dump(
        out_path,
        class_names,
        img32,
        labels,
        word_vecs=txt32,
        ref_pred=ref,
        normalized=True,
    )
    return ExportSummary(
        path=out_path,
        records=int(img32.shape[0]),
        classes=len(tuple(class_names)),
        dim=int(img32.shape[1]),
        backend=backend,
    )
