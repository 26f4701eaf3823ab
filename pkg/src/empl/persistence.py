"""On-disk artifacts and the single source of default settings.

Four artifact kinds live here: the embedding dump (binary, little-endian,
magic EMPD), the parameter checkpoint (binary, magic EMPC), the experiment
config (strict JSON, unknown keys rejected), and the run report (canonical
JSON, key-sorted, newline-terminated).  All writes go through a temp file
and os.replace, so readers never observe a half-written artifact.

Every configurable default is defined once in DEFAULTS; the factory
functions and the config loader both read from it.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .contrastive import SimConfig
from .encoders import ModelParams, Vocabulary
from .energy import SGLD_MODES, SgldConfig
from .errors import ConfigError, FormatError, NumericalError, ShapeError, UnknownClassError
from .meta import CE_PROMPT_MODES, LabeledSet, TrainConfig
from .numeric import AGGREGATES, METRICS

DEFAULTS: dict[str, dict[str, Any]] = {
    "sim": {"metric": "cosine", "aggregate": "mean", "temperature": 0.07},
    "sgld": {
        "alpha": 0.01,
        "steps": 20,
        "init_noise_std": 0.01,
        "mode": "joint",
        "persistent": False,
    },
    "train": {
        "lambda": 0.1,
        "lr": 0.01,
        "momentum": 0.0,
        "batch_size": 16,
        "epochs": 1,
        "tasks_per_epoch": 600,
        "task_classes": 4,
        "task_unseen": 2,
        "prompts_per_class": 8,
        "ce_prompts": "sampled",
    },
    "model": {
        "embed_dim": 8,
        "context_tokens": 4,
        "init_scale": 1.0,
        "learn_word_vecs": True,
    },
    "eval": {"n_prompts": 8, "seed": 1},
}

SCHEMA_VERSION = 1


def default_sim_config() -> SimConfig:
    d = DEFAULTS["sim"]
    return SimConfig(metric=d["metric"], aggregate=d["aggregate"], temperature=d["temperature"])


def default_sgld_config() -> SgldConfig:
    d = DEFAULTS["sgld"]
    return SgldConfig(
        alpha=d["alpha"],
        steps=d["steps"],
        init_noise_std=d["init_noise_std"],
        mode=d["mode"],
        persistent=d["persistent"],
    )


def default_train_config(seed: int = 0) -> TrainConfig:
    d = DEFAULTS["train"]
    return TrainConfig(
        energy_weight=d["lambda"],
        lr=d["lr"],
        momentum=d["momentum"],
        batch_size=d["batch_size"],
        epochs=d["epochs"],
        tasks_per_epoch=d["tasks_per_epoch"],
        task_classes=d["task_classes"],
        task_unseen=d["task_unseen"],
        prompts_per_class=d["prompts_per_class"],
        ce_prompts=d["ce_prompts"],
        sim=default_sim_config(),
        sgld=default_sgld_config(),
        seed=seed,
    )


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write payload to path through a same-directory temp file."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# Embedding dump wire format ------------------------------------------------

DUMP_MAGIC = b"EMPD"
DUMP_VERSION = 1
FLAG_WORD_VECS = 1
FLAG_REF_PRED = 2
FLAG_NORMALIZED = 4
MODALITY_IMAGE = 0
MODALITY_TEXT = 1

_HEADER = struct.Struct("<4sIIQII I".replace(" ", ""))
_MAX_NAME = 1 << 20


@dataclass(frozen=True)
class EmbeddingDump:
    """Columnar view of one dump: class table plus typed embedding records.

    Vectors are stored and compared as float32, exactly as on the wire.
    ref_pred, when present, is each record's reference prediction as a class
    id.  normalized asserts unit-length vectors.
    """

    class_names: tuple[str, ...]
    word_vecs: np.ndarray | None  # (n_classes, d_tok) float32
    vectors: np.ndarray  # (n_records, dim) float32
    modality: np.ndarray  # (n_records,) uint8
    class_id: np.ndarray  # (n_records,) uint32
    ref_pred: np.ndarray | None  # (n_records,) uint32
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
        object.__setattr__(self, "vectors", np.ascontiguousarray(self.vectors, dtype="<f4"))
        object.__setattr__(self, "modality", np.ascontiguousarray(self.modality, dtype=np.uint8))
        object.__setattr__(self, "class_id", np.ascontiguousarray(self.class_id, dtype=np.uint32))
        if self.word_vecs is not None:
            object.__setattr__(
                self, "word_vecs", np.ascontiguousarray(self.word_vecs, dtype="<f4")
            )
        if self.ref_pred is not None:
            object.__setattr__(
                self, "ref_pred", np.ascontiguousarray(self.ref_pred, dtype=np.uint32)
            )
        self.validate()

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_records(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def token_dim(self) -> int:
        return 0 if self.word_vecs is None else int(self.word_vecs.shape[1])

    @property
    def flags(self) -> int:
        flags = 0
        if self.word_vecs is not None:
            flags |= FLAG_WORD_VECS
        if self.ref_pred is not None:
            flags |= FLAG_REF_PRED
        if self.normalized:
            flags |= FLAG_NORMALIZED
        return flags

    def validate(self) -> None:
        if self.n_classes < 1:
            raise ShapeError("dump needs at least one class")
        if len(set(self.class_names)) != self.n_classes:
            raise ShapeError("class names must be unique")
        if any(not n for n in self.class_names):
            raise ShapeError("class names must be non-empty")
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise ShapeError(f"vectors must be (n, dim >= 1), got {self.vectors.shape}")
        n = self.n_records
        if self.modality.shape != (n,) or self.class_id.shape != (n,):
            raise ShapeError("modality and class_id must align with vectors")
        if self.ref_pred is not None and self.ref_pred.shape != (n,):
            raise ShapeError("ref_pred must align with vectors")
        if self.word_vecs is not None and (
            self.word_vecs.ndim != 2
            or self.word_vecs.shape[0] != self.n_classes
            or self.word_vecs.shape[1] < 1
        ):
            raise ShapeError(f"word_vecs must be (n_classes, d_tok >= 1), got {self.word_vecs.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise NumericalError("dump vectors contain non-finite values")
        if self.word_vecs is not None and not np.all(np.isfinite(self.word_vecs)):
            raise NumericalError("dump word vectors contain non-finite values")
        if n and not np.all((self.modality == MODALITY_IMAGE) | (self.modality == MODALITY_TEXT)):
            raise ShapeError("modality must be 0 (image) or 1 (text)")
        if n and int(self.class_id.max(initial=0)) >= self.n_classes:
            raise UnknownClassError("record class_id outside the class table")
        if self.ref_pred is not None and n and int(self.ref_pred.max(initial=0)) >= self.n_classes:
            raise UnknownClassError("ref_pred outside the class table")
        if self.normalized and n:
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > 2e-3):
                raise NumericalError("normalized flag set but vectors are not unit length")

    def to_vocabulary(self) -> Vocabulary:
        if self.word_vecs is None:
            raise FormatError("dump carries no word vectors, cannot build a vocabulary")
        return Vocabulary(names=self.class_names, word_vecs=self.word_vecs.astype(np.float64))

    def image_records(self) -> tuple[np.ndarray, np.ndarray]:
        """(features, labels) of the image-modality records, as float64."""
        mask = self.modality == MODALITY_IMAGE
        return self.vectors[mask].astype(np.float64), self.class_id[mask].astype(np.int64)

    def to_labeled_set(self, observed: Sequence[int]) -> LabeledSet:
        feats, labels = self.image_records()
        return LabeledSet(inputs=feats, labels=labels, observed=tuple(observed))


def dump_to_bytes(dump: EmbeddingDump) -> bytes:
    dump.validate()
    parts = [
        _HEADER.pack(
            DUMP_MAGIC,
            DUMP_VERSION,
            dump.dim,
            dump.n_records,
            dump.n_classes,
            dump.flags,
            dump.token_dim,
        )
    ]
    for cid, name in enumerate(dump.class_names):
        raw = name.encode("utf-8")
        if len(raw) >= _MAX_NAME:
            raise ShapeError(f"class name too long ({len(raw)} bytes)")
        parts.append(struct.pack("<II", cid, len(raw)))
        parts.append(raw)
        if dump.word_vecs is not None:
            parts.append(dump.word_vecs[cid].tobytes())
    rec_head = struct.Struct("<BI")
    for i in range(dump.n_records):
        parts.append(rec_head.pack(int(dump.modality[i]), int(dump.class_id[i])))
        parts.append(dump.vectors[i].tobytes())
        if dump.ref_pred is not None:
            parts.append(struct.pack("<I", int(dump.ref_pred[i])))
    return b"".join(parts)


def write_dump(path: str, dump: EmbeddingDump) -> None:
    atomic_write_bytes(path, dump_to_bytes(dump))


class _Cursor:
    """Byte reader that reports the failure offset on truncation."""

    def __init__(self, payload: bytes):
        self.payload = payload
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.payload):
            raise FormatError(f"truncated while reading {what}", offset=self.pos)
        out = self.payload[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct, what: str) -> tuple:
        return st.unpack(self.take(st.size, what))


def dump_from_bytes(payload: bytes) -> EmbeddingDump:
    cur = _Cursor(payload)
    magic, version, dim, n_records, n_classes, flags, d_tok = cur.unpack(_HEADER, "header")
    if magic != DUMP_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DUMP_MAGIC!r}", offset=0)
    if version != DUMP_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    if dim < 1:
        raise FormatError("dim must be at least 1", offset=8)
    if n_classes < 1:
        raise FormatError("n_classes must be at least 1", offset=20)
    if flags & ~(FLAG_WORD_VECS | FLAG_REF_PRED | FLAG_NORMALIZED):
        raise FormatError(f"unknown flag bits in {flags:#x}", offset=24)
    has_words = bool(flags & FLAG_WORD_VECS)
    if has_words and d_tok < 1:
        raise FormatError("word vector flag set but d_tok is 0", offset=28)
    if not has_words and d_tok != 0:
        raise FormatError("d_tok must be 0 without word vectors", offset=28)

    names: list[str] = []
    word_rows: list[np.ndarray] = []
    entry = struct.Struct("<II")
    for expect in range(n_classes):
        at = cur.pos
        cid, name_len = cur.unpack(entry, f"class entry {expect}")
        if cid != expect:
            raise FormatError(
                f"class table must be dense and ordered, got id {cid} at position {expect}",
                offset=at,
            )
        if name_len >= _MAX_NAME:
            raise FormatError(f"class name length {name_len} not plausible", offset=at + 4)
        raw = cur.take(name_len, f"class {cid} name")
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"class {cid} name is not valid utf-8", offset=at + 8) from exc
        if has_words:
            word_rows.append(
                np.frombuffer(cur.take(4 * d_tok, f"class {cid} word vector"), dtype="<f4")
            )

    has_ref = bool(flags & FLAG_REF_PRED)
    rec_head = struct.Struct("<BI")
    modality = np.empty(n_records, dtype=np.uint8)
    class_id = np.empty(n_records, dtype=np.uint32)
    vectors = np.empty((n_records, dim), dtype="<f4")
    ref_pred = np.empty(n_records, dtype=np.uint32) if has_ref else None
    for i in range(n_records):
        at = cur.pos
        mod, cid = cur.unpack(rec_head, f"record {i} header")
        if mod not in (MODALITY_IMAGE, MODALITY_TEXT):
            raise FormatError(f"record {i} has unknown modality {mod}", offset=at)
        modality[i] = mod
        class_id[i] = cid
        vectors[i] = np.frombuffer(cur.take(4 * dim, f"record {i} vector"), dtype="<f4")
        if has_ref:
            (ref_pred[i],) = struct.unpack("<I", cur.take(4, f"record {i} ref_pred"))
    if cur.pos != len(payload):
        raise FormatError(
            f"{len(payload) - cur.pos} trailing bytes after the last record", offset=cur.pos
        )

    try:
        return EmbeddingDump(
            class_names=tuple(names),
            word_vecs=np.vstack(word_rows) if has_words else None,
            vectors=vectors,
            modality=modality,
            class_id=class_id,
            ref_pred=ref_pred,
            normalized=bool(flags & FLAG_NORMALIZED),
        )
    except (ShapeError, NumericalError, UnknownClassError) as exc:
        raise FormatError(f"dump content invalid: {exc}") from exc


def read_dump(path: str) -> EmbeddingDump:
    with open(path, "rb") as fh:
        return dump_from_bytes(fh.read())


# Parameter checkpoint ------------------------------------------------------

CKPT_MAGIC = b"EMPC"
CKPT_VERSION = 1
_CKPT_FIELDS = ("image_w", "image_b", "pool_w", "pool_b", "contexts", "word_vecs")


def checkpoint_to_bytes(params: ModelParams, vocab: Vocabulary) -> bytes:
    parts = [struct.pack("<4sI", CKPT_MAGIC, CKPT_VERSION)]
    names_blob = json.dumps(list(vocab.names), ensure_ascii=False).encode("utf-8")
    parts.append(struct.pack("<I", len(names_blob)))
    parts.append(names_blob)
    arrays: list[tuple[str, np.ndarray | None]] = [("vocab_word_vecs", vocab.word_vecs)]
    arrays += [(name, getattr(params, name)) for name in _CKPT_FIELDS]
    present = [(name, arr) for name, arr in arrays if arr is not None]
    parts.append(struct.pack("<I", len(present)))
    for name, arr in present:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path: str, params: ModelParams, vocab: Vocabulary) -> None:
    atomic_write_bytes(path, checkpoint_to_bytes(params, vocab))


def checkpoint_from_bytes(payload: bytes) -> tuple[ModelParams, Vocabulary]:
    cur = _Cursor(payload)
    magic, version = cur.unpack(struct.Struct("<4sI"), "header")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}", offset=0)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    (names_len,) = cur.unpack(struct.Struct("<I"), "vocabulary names length")
    at = cur.pos
    try:
        names = json.loads(cur.take(names_len, "vocabulary names").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("vocabulary names block is not valid json", offset=at) from exc
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise FormatError("vocabulary names block must be a list of strings", offset=at)
    (n_arrays,) = cur.unpack(struct.Struct("<I"), "array count")
    arrays: dict[str, np.ndarray] = {}
    for i in range(n_arrays):
        at = cur.pos
        (name_len,) = cur.unpack(struct.Struct("<I"), f"array {i} name length")
        try:
            name = cur.take(name_len, f"array {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"array {i} name is not valid utf-8", offset=at) from exc
        (ndim,) = cur.unpack(struct.Struct("<I"), f"array {name} rank")
        if ndim > 4:
            raise FormatError(f"array {name} rank {ndim} not plausible", offset=cur.pos - 4)
        shape = cur.unpack(struct.Struct(f"<{ndim}Q"), f"array {name} shape")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(cur.take(8 * count, f"array {name} data"), dtype="<f8")
        arrays[name] = data.reshape(shape).copy()
    if cur.pos != len(payload):
        raise FormatError("trailing bytes after checkpoint arrays", offset=cur.pos)
    try:
        vocab = Vocabulary(names=tuple(names), word_vecs=arrays.pop("vocab_word_vecs"))
        params = ModelParams(
            image_w=arrays.pop("image_w"),
            image_b=arrays.pop("image_b"),
            pool_w=arrays.pop("pool_w"),
            pool_b=arrays.pop("pool_b"),
            contexts=arrays.pop("contexts"),
            word_vecs=arrays.pop("word_vecs", None),
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing array {exc.args[0]}") from exc
    if arrays:
        raise FormatError(f"checkpoint carries unknown arrays {sorted(arrays)}")
    return params, vocab


def load_checkpoint(path: str) -> tuple[ModelParams, Vocabulary]:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


# Experiment config ---------------------------------------------------------

_REQUIRED = object()

_CONFIG_SCHEMA: dict[str, dict[str, tuple]] = {
    "data": {
        "train_dump": (str, None, None),
        "eval_dump": (str, None, None),
        "grid": (str, None, None),
        "observed_classes": (list, None, None),
    },
    "model": {
        "embed_dim": (int, "model", lambda v: v >= 1),
        "context_tokens": (int, "model", lambda v: v >= 0),
        "init_scale": (float, "model", lambda v: v > 0),
        "learn_word_vecs": (bool, "model", None),
    },
    "sim": {
        "metric": (str, "sim", lambda v: v in METRICS),
        "aggregate": (str, "sim", lambda v: v in AGGREGATES),
        "temperature": (float, "sim", lambda v: v > 0),
    },
    "sgld": {
        "alpha": (float, "sgld", lambda v: v > 0),
        "steps": (int, "sgld", lambda v: v >= 0),
        "init_noise_std": (float, "sgld", lambda v: v >= 0),
        "mode": (str, "sgld", lambda v: v in SGLD_MODES),
        "persistent": (bool, "sgld", None),
    },
    "train": {
        "lambda": (float, "train", lambda v: v >= 0),
        "lr": (float, "train", lambda v: v > 0),
        "momentum": (float, "train", lambda v: 0 <= v < 1),
        "batch_size": (int, "train", lambda v: v >= 1),
        "epochs": (int, "train", lambda v: v >= 0),
        "tasks_per_epoch": (int, "train", lambda v: v >= 1),
        "task_classes": (int, "train", lambda v: v >= 2),
        "task_unseen": (int, "train", lambda v: v >= 1),
        "prompts_per_class": (int, "train", lambda v: v >= 1),
        "ce_prompts": (str, "train", lambda v: v in CE_PROMPT_MODES),
    },
    "eval": {
        "n_prompts": (int, "eval", lambda v: v >= 1),
        "seed": (int, "eval", lambda v: v >= 0),
        "class_list": (list, None, None),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A full run description with every default resolved."""

    seed: int
    data: dict[str, Any]
    model: dict[str, Any]
    sim: SimConfig
    sgld: SgldConfig
    train: dict[str, Any]
    eval: dict[str, Any]

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            energy_weight=t["lambda"],
            lr=t["lr"],
            momentum=t["momentum"],
            batch_size=t["batch_size"],
            epochs=t["epochs"],
            tasks_per_epoch=t["tasks_per_epoch"],
            task_classes=t["task_classes"],
            task_unseen=t["task_unseen"],
            prompts_per_class=t["prompts_per_class"],
            ce_prompts=t["ce_prompts"],
            sim=self.sim,
            sgld=self.sgld,
            seed=self.seed,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "data": dict(self.data),
            "model": dict(self.model),
            "sim": {
                "metric": self.sim.metric,
                "aggregate": self.sim.aggregate,
                "temperature": self.sim.temperature,
            },
            "sgld": {
                "alpha": self.sgld.alpha,
                "steps": self.sgld.steps,
                "init_noise_std": self.sgld.init_noise_std,
                "mode": self.sgld.mode,
                "persistent": self.sgld.persistent,
            },
            "train": dict(self.train),
            "eval": dict(self.eval),
        }


def _coerce(value, want, key: str):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=key)
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key=key)
        return int(value)
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", key=key)
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=key)
        return value
    if want is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key=key)
        return list(value)
    raise ConfigError(f"unhandled schema type {want}", key=key)


def parse_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a config mapping, apply defaults, and reject unknown keys."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be an object")
    known_top = {"schema_version", "seed"} | set(_CONFIG_SCHEMA)
    for key in raw:
        if key not in known_top:
            raise ConfigError("unknown key", key=str(key))
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version!r}, this build reads {SCHEMA_VERSION}",
            key="schema_version",
        )
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"expected a non-negative integer, got {seed!r}", key="seed")

    sections: dict[str, dict[str, Any]] = {}
    for section, fields in _CONFIG_SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, Mapping):
            raise ConfigError("expected an object", key=section)
        for key in given:
            if key not in fields:
                raise ConfigError("unknown key", key=f"{section}.{key}")
        out: dict[str, Any] = {}
        for key, (want, default_src, check) in fields.items():
            dotted = f"{section}.{key}"
            if key in given:
                value = given[key]
                if value is not None:
                    value = _coerce(value, want, dotted)
            elif default_src is not None:
                value = DEFAULTS[default_src][key]
            else:
                value = None
            if value is not None and check is not None and not check(value):
                raise ConfigError(f"value {value!r} out of range", key=dotted)
            out[key] = value
        sections[section] = out

    observed = sections["data"]["observed_classes"]
    if observed is not None:
        if not all(isinstance(c, int) and not isinstance(c, bool) and c >= 0 for c in observed):
            raise ConfigError(
                "expected a list of non-negative integers", key="data.observed_classes"
            )
    class_list = sections["eval"]["class_list"]
    if class_list is not None:
        if not all(isinstance(c, int) and not isinstance(c, bool) and c >= 0 for c in class_list):
            raise ConfigError("expected a list of non-negative integers", key="eval.class_list")
    t = sections["train"]
    if t["task_unseen"] >= t["task_classes"]:
        raise ConfigError(
            f"task_unseen {t['task_unseen']} must be below task_classes {t['task_classes']}",
            key="train.task_unseen",
        )

    cfg = ExperimentConfig(
        seed=seed,
        data=sections["data"],
        model=sections["model"],
        sim=SimConfig(**sections["sim"]),
        sgld=SgldConfig(**sections["sgld"]),
        train=t,
        eval=sections["eval"],
    )
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid json: {exc}") from exc
    return parse_config(raw)


def save_config(path: str, cfg: ExperimentConfig) -> None:
    atomic_write_text(path, canonical_json(cfg.to_dict()))


# Reports and grids ---------------------------------------------------------


def canonical_json(obj: Any) -> str:
    """Key-sorted, newline-terminated JSON; equal objects give equal bytes."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_report(path: str, report: Mapping[str, Any]) -> None:
    atomic_write_text(path, canonical_json(dict(report)))


def load_report(path: str) -> dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_grid(path: str, points: np.ndarray, density: np.ndarray | None = None) -> None:
    """Tab-separated grid: one point per row, optional trailing density column."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ShapeError(f"points must be (n, d), got {pts.shape}")
    cols = [f"x{j}" for j in range(pts.shape[1])]
    if density is not None:
        density = np.asarray(density, dtype=np.float64)
        if density.shape != (pts.shape[0],):
            raise ShapeError("density must give one value per point")
        cols.append("density")
    lines = ["\t".join(cols)]
    for i in range(pts.shape[0]):
        row = [repr(float(v)) for v in pts[i]]
        if density is not None:
            row.append(repr(float(density[i])))
        lines.append("\t".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_grid(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise FormatError("grid file is empty")
    header = lines[0].split("\t")
    has_density = header and header[-1] == "density"
    n_coords = len(header) - (1 if has_density else 0)
    if n_coords < 1 or header[:n_coords] != [f"x{j}" for j in range(n_coords)]:
        raise FormatError(f"grid header {header!r} not understood")
    pts = np.empty((len(lines) - 1, n_coords))
    dens = np.empty(len(lines) - 1) if has_density else None
    for i, line in enumerate(lines[1:]):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise FormatError(f"grid row {i + 1} has {len(cells)} cells, expected {len(header)}")
        try:
            values = [float(c) for c in cells]
        except ValueError as exc:
            raise FormatError(f"grid row {i + 1} holds a non-number: {exc}") from exc
        pts[i] = values[:n_coords]
        if dens is not None:
            dens[i] = values[-1]
    return pts, dens
