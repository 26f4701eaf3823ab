"""Shape-corpus rendering and embedding-dump export for the empl engine.

Standalone producer side of the dump format: renders labeled PNG corpora,
embeds them with a deterministic toy backend (or CLIP, when installed), and
serializes vectors, word vectors, and reference predictions into files the
engine consumes.  Does not import empl.
"""

from .backends import (
    DEFAULT_CLIP,
    BackendUnavailable,
    ClipBackend,
    ToyBackend,
    get_backend,
    unit_rows,
)
from .export import ExportSummary, export_dump
from .render import SHAPES, Corpus, load_corpus, render_corpus
from .wire import (
    FLAG_NORMALIZED,
    FLAG_REF_PRED,
    FLAG_WORD_VECS,
    MAGIC,
    MODALITY_IMAGE,
    MODALITY_TEXT,
    VERSION,
    WireError,
    dump_bytes,
    write_dump,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CLIP",
    "BackendUnavailable",
    "ClipBackend",
    "Corpus",
    "ExportSummary",
    "FLAG_NORMALIZED",
    "FLAG_REF_PRED",
    "FLAG_WORD_VECS",
    "MAGIC",
    "MODALITY_IMAGE",
    "MODALITY_TEXT",
    "SHAPES",
    "ToyBackend",
    "VERSION",
    "WireError",
    "dump_bytes",
    "export_dump",
    "get_backend",
    "load_corpus",
    "render_corpus",
    "unit_rows",
    "write_dump",
]
