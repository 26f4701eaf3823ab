"""Wire formats, checkpoints, config parsing, reports, grids."""

import json
import os
import struct

import numpy as np
import pytest

from empl.contrastive import SimConfig
from empl.encoders import Vocabulary, init_params
from empl.energy import SgldConfig
from empl.errors import ConfigError, FormatError, NumericalError, ShapeError
from empl.persistence import (
    DEFAULTS,
    EmbeddingDump,
    atomic_write_bytes,
    canonical_json,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    default_sgld_config,
    default_sim_config,
    default_train_config,
    dump_from_bytes,
    dump_to_bytes,
    load_checkpoint,
    load_config,
    load_report,
    parse_config,
    read_dump,
    read_grid,
    save_checkpoint,
    save_config,
    write_dump,
    write_grid,
    write_report,
)


def make_dump(word_vecs=True, ref_pred=True, normalized=False, n=5, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(n, dim)).astype(np.float32)
    if normalized:
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return EmbeddingDump(
        class_names=("cat", "dog"),
        word_vecs=rng.normal(size=(2, 2)).astype(np.float32) if word_vecs else None,
        vectors=vectors,
        modality=rng.integers(0, 2, size=n).astype(np.uint8),
        class_id=rng.integers(0, 2, size=n).astype(np.uint32),
        ref_pred=rng.integers(0, 2, size=n).astype(np.uint32) if ref_pred else None,
        normalized=normalized,
    )


def test_defaults_table_values():
    sim = default_sim_config()
    assert (sim.metric, sim.aggregate, sim.temperature) == ("cosine", "mean", 0.07)
    sgld = default_sgld_config()
    assert (sgld.alpha, sgld.steps, sgld.init_noise_std) == (0.01, 20, 0.01)
    assert (sgld.mode, sgld.persistent) == ("joint", False)
    train = default_train_config(seed=7)
    assert train.energy_weight == 0.1
    assert train.lr == 0.01
    assert train.batch_size == 16
    assert train.prompts_per_class == 8
    assert train.task_classes == 4 and train.task_unseen == 2
    assert train.seed == 7
    assert DEFAULTS["eval"]["n_prompts"] == 8


@pytest.mark.parametrize("words", [False, True])
@pytest.mark.parametrize("refs", [False, True])
@pytest.mark.parametrize("normed", [False, True])
def test_dump_round_trip_bitwise(words, refs, normed):
    dump = make_dump(word_vecs=words, ref_pred=refs, normalized=normed)
    payload = dump_to_bytes(dump)
    back = dump_from_bytes(payload)
    assert back.class_names == dump.class_names
    assert np.array_equal(back.vectors, dump.vectors)
    assert np.array_equal(back.modality, dump.modality)
    assert np.array_equal(back.class_id, dump.class_id)
    if words:
        assert np.array_equal(back.word_vecs, dump.word_vecs)
    else:
        assert back.word_vecs is None
    if refs:
        assert np.array_equal(back.ref_pred, dump.ref_pred)
    else:
        assert back.ref_pred is None
    assert back.normalized == normed
    assert dump_to_bytes(back) == payload


def test_dump_file_round_trip(tmp_path):
    dump = make_dump()
    path = str(tmp_path / "x.empd")
    write_dump(path, dump)
    back = read_dump(path)
    assert dump_to_bytes(back) == dump_to_bytes(dump)


def test_dump_matches_handmade_bytes():
    word_vecs = np.array([[0.5, -1.0], [2.0, 0.25]], dtype=np.float32)
    vectors = np.array([[1.0, 0.0, 2.0], [0.5, 0.5, 0.5]], dtype=np.float32)
    payload = struct.pack("<4sIIQIII", b"EMPD", 1, 3, 2, 2, 3, 2)
    for cid, name in enumerate((b"cat", b"dog")):
        payload += struct.pack("<II", cid, len(name)) + name + word_vecs[cid].tobytes()
    payload += struct.pack("<BI", 0, 1) + vectors[0].tobytes() + struct.pack("<I", 1)
    payload += struct.pack("<BI", 1, 0) + vectors[1].tobytes() + struct.pack("<I", 0)

    dump = dump_from_bytes(payload)
    assert dump.class_names == ("cat", "dog")
    assert np.array_equal(dump.word_vecs, word_vecs)
    assert np.array_equal(dump.vectors, vectors)
    assert list(dump.modality) == [0, 1]
    assert list(dump.class_id) == [1, 0]
    assert list(dump.ref_pred) == [1, 0]
    assert not dump.normalized

    built = EmbeddingDump(
        class_names=("cat", "dog"),
        word_vecs=word_vecs,
        vectors=vectors,
        modality=np.array([0, 1]),
        class_id=np.array([1, 0]),
        ref_pred=np.array([1, 0]),
    )
    assert dump_to_bytes(built) == payload


def offset_of(err: FormatError) -> int:
    return err.offset


def test_dump_error_offsets():
    good = dump_to_bytes(make_dump())

    with pytest.raises(FormatError) as err:
        dump_from_bytes(b"JUNK" + good[4:])
    assert offset_of(err.value) == 0

    with pytest.raises(FormatError) as err:
        dump_from_bytes(good[:4] + struct.pack("<I", 9) + good[8:])
    assert offset_of(err.value) == 4

    with pytest.raises(FormatError) as err:
        dump_from_bytes(good[:8] + struct.pack("<I", 0) + good[12:])
    assert offset_of(err.value) == 8

    with pytest.raises(FormatError) as err:
        dump_from_bytes(good[:20] + struct.pack("<I", 0) + good[24:])
    assert offset_of(err.value) == 20

    with pytest.raises(FormatError) as err:
        dump_from_bytes(good[:24] + struct.pack("<I", 0xFF) + good[28:])
    assert offset_of(err.value) == 24

    no_words = dump_to_bytes(make_dump(word_vecs=False))
    with pytest.raises(FormatError) as err:
        dump_from_bytes(no_words[:28] + struct.pack("<I", 2) + no_words[32:])
    assert offset_of(err.value) == 28

    with pytest.raises(FormatError) as err:
        dump_from_bytes(good[:32] + struct.pack("<I", 5) + good[36:])
    assert offset_of(err.value) == 32  # first class entry must carry id 0

    with pytest.raises(FormatError) as err:
        dump_from_bytes(good[:40])
    assert offset_of(err.value) <= 40

    with pytest.raises(FormatError) as err:
        dump_from_bytes(good + b"\x00")
    assert offset_of(err.value) == len(good)
    assert "trailing" in str(err.value)


def test_dump_rejects_bad_name_and_modality():
    head = struct.pack("<4sIIQIII", b"EMPD", 1, 2, 1, 1, 0, 0)
    bad_name = head + struct.pack("<II", 0, 2) + b"\xff\xfe"
    bad_name += struct.pack("<BI", 0, 0) + np.zeros(2, dtype="<f4").tobytes()
    with pytest.raises(FormatError) as err:
        dump_from_bytes(bad_name)
    assert offset_of(err.value) == 40  # name bytes start after the 8-byte entry
    assert "utf-8" in str(err.value)

    ok_table = head + struct.pack("<II", 0, 1) + b"a"
    bad_mod = ok_table + struct.pack("<BI", 7, 0) + np.zeros(2, dtype="<f4").tobytes()
    with pytest.raises(FormatError) as err:
        dump_from_bytes(bad_mod)
    assert offset_of(err.value) == len(ok_table)
    assert "modality" in str(err.value)


def test_dump_content_validation():
    with pytest.raises(ShapeError):
        make_dump().__class__(
            class_names=("a", "a"),
            word_vecs=None,
            vectors=np.zeros((1, 2), dtype=np.float32),
            modality=np.zeros(1),
            class_id=np.zeros(1),
            ref_pred=None,
        )
    with pytest.raises(NumericalError):
        EmbeddingDump(
            class_names=("a",),
            word_vecs=None,
            vectors=np.array([[np.nan, 0.0]], dtype=np.float32),
            modality=np.zeros(1),
            class_id=np.zeros(1),
            ref_pred=None,
        )
    with pytest.raises(NumericalError):
        EmbeddingDump(
            class_names=("a",),
            word_vecs=None,
            vectors=np.array([[3.0, 4.0]], dtype=np.float32),
            modality=np.zeros(1),
            class_id=np.zeros(1),
            ref_pred=None,
            normalized=True,
        )


def test_dump_views():
    dump = make_dump()
    vocab = dump.to_vocabulary()
    assert vocab.names == ("cat", "dog")
    feats, labels = dump.image_records()
    mask = dump.modality == 0
    assert feats.shape == (int(mask.sum()), 3)
    assert feats.dtype == np.float64
    assert np.array_equal(labels, dump.class_id[mask].astype(np.int64))
    no_words = make_dump(word_vecs=False)
    with pytest.raises(FormatError):
        no_words.to_vocabulary()


def test_atomic_write_leaves_no_debris(tmp_path, monkeypatch):
    target = tmp_path / "out.bin"
    target.write_bytes(b"old")

    def boom(src, dst):
        raise OSError("disk gone")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write_bytes(str(target), b"new")
    monkeypatch.undo()
    assert target.read_bytes() == b"old"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.bin"]


def test_checkpoint_round_trip(tmp_path):
    vecs = np.arange(8, dtype=float).reshape(4, 2) / 7.0
    vocab = Vocabulary(names=("a", "b", "c", "d"), word_vecs=vecs)
    for learn in (True, False):
        params = init_params(
            vocab, input_dim=2, embed_dim=3, context_tokens=2, init_scale=0.1,
            seed=4, learn_word_vecs=learn,
        )
        payload = checkpoint_to_bytes(params, vocab)
        back_params, back_vocab = checkpoint_from_bytes(payload)
        assert back_vocab.names == vocab.names
        assert np.array_equal(back_vocab.word_vecs, vocab.word_vecs)
        for field in ("image_w", "image_b", "pool_w", "pool_b", "contexts"):
            assert np.array_equal(getattr(back_params, field), getattr(params, field))
        if learn:
            assert np.array_equal(back_params.word_vecs, params.word_vecs)
        else:
            assert back_params.word_vecs is None
        path = str(tmp_path / f"ck{learn}.empc")
        save_checkpoint(path, params, vocab)
        again_params, again_vocab = load_checkpoint(path)
        assert checkpoint_to_bytes(again_params, again_vocab) == payload


def test_checkpoint_rejects_garbage():
    with pytest.raises(FormatError):
        checkpoint_from_bytes(b"NOPE" + b"\x00" * 40)
    vecs = np.zeros((2, 2))
    vocab = Vocabulary(names=("a", "b"), word_vecs=vecs)
    params = init_params(vocab, 2, 3, 2, 0.1, seed=0)
    payload = checkpoint_to_bytes(params, vocab)
    with pytest.raises(FormatError):
        checkpoint_from_bytes(payload[:-4])


def test_parse_config_applies_defaults():
    cfg = parse_config({})
    assert cfg.seed == 0
    assert cfg.sim == default_sim_config()
    assert cfg.sgld == default_sgld_config()
    assert cfg.train["lambda"] == 0.1
    assert cfg.train["lr"] == 0.01
    assert cfg.train["batch_size"] == 16
    assert cfg.eval["n_prompts"] == 8
    tc = cfg.train_config()
    assert tc.energy_weight == 0.1
    assert tc.sim.temperature == 0.07


def test_parse_config_rejects_unknowns_and_bad_values():
    with pytest.raises(ConfigError) as err:
        parse_config({"sims": {}})
    assert "sims" in str(err.value)
    with pytest.raises(ConfigError) as err:
        parse_config({"train": {"lamda": 0.1}})
    assert "train.lamda" in str(err.value)
    with pytest.raises(ConfigError) as err:
        parse_config({"train": {"lambda": -1.0}})
    assert err.value.key == "train.lambda"
    with pytest.raises(ConfigError) as err:
        parse_config({"train": {"lr": True}})
    assert err.value.key == "train.lr"
    with pytest.raises(ConfigError) as err:
        parse_config({"sim": {"temperature": "hot"}})
    assert err.value.key == "sim.temperature"
    with pytest.raises(ConfigError) as err:
        parse_config({"train": {"task_classes": 3, "task_unseen": 3}})
    assert err.value.key == "train.task_unseen"
    with pytest.raises(ConfigError):
        parse_config({"schema_version": 99})
    with pytest.raises(ConfigError):
        parse_config({"seed": -1})
    with pytest.raises(ConfigError) as err:
        parse_config({"data": {"observed_classes": [0, True]}})
    assert err.value.key == "data.observed_classes"


def test_config_file_round_trip(tmp_path):
    cfg = parse_config(
        {
            "seed": 3,
            "sim": {"metric": "neg_euclidean"},
            "train": {"lambda": 0.5, "epochs": 2},
            "data": {"observed_classes": [0, 1, 2]},
        }
    )
    path = str(tmp_path / "exp.json")
    save_config(path, cfg)
    back = load_config(path)
    assert back == cfg
    assert back.train["lambda"] == 0.5
    assert back.sim.metric == "neg_euclidean"
    raw = json.loads(open(path).read())
    assert raw["schema_version"] == 1

    (tmp_path / "broken.json").write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "broken.json"))


def test_canonical_json_is_stable():
    a = canonical_json({"b": 1, "a": [1, 2]})
    b = canonical_json({"a": [1, 2], "b": 1})
    assert a == b
    assert a.endswith("\n")
    assert a.index('"a"') < a.index('"b"')


def test_report_round_trip(tmp_path):
    path = str(tmp_path / "report.json")
    write_report(path, {"kind": "eval", "accuracy": 0.5})
    assert load_report(path) == {"kind": "eval", "accuracy": 0.5}


def test_grid_round_trip_exact(tmp_path, rng):
    pts = rng.normal(size=(7, 2))
    dens = np.abs(rng.normal(size=7))
    path = str(tmp_path / "grid.tsv")
    write_grid(path, pts, dens)
    back_pts, back_dens = read_grid(path)
    assert np.array_equal(back_pts, pts)
    assert np.array_equal(back_dens, dens)

    bare = str(tmp_path / "bare.tsv")
    write_grid(bare, pts)
    back_pts, back_dens = read_grid(bare)
    assert np.array_equal(back_pts, pts)
    assert back_dens is None

    (tmp_path / "bad.tsv").write_text("y0\ty1\n1\t2\n")
    with pytest.raises(FormatError):
        read_grid(str(tmp_path / "bad.tsv"))
