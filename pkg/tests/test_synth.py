"""Synthetic cluster data generator."""

import json
import os

import numpy as np
import pytest

from empl.errors import ConfigError
from empl.persistence import load_config, read_dump, read_grid
from empl.synth import SynthSpec, cluster_means, density_grid, generate, sample_class_points
from empl.numeric import stream


def make_spec(**over):
    base = dict(
        n_classes=5,
        input_dim=2,
        observed=(0, 1, 3),
        train_per_class=4,
        eval_per_class=3,
        cluster_std=0.2,
        mean_scale=2.0,
        seed=11,
    )
    base.update(over)
    return SynthSpec(**base)


def test_spec_validation():
    with pytest.raises(ConfigError):
        make_spec(n_classes=1)
    with pytest.raises(ConfigError):
        make_spec(observed=())
    with pytest.raises(ConfigError):
        make_spec(observed=(0, 9))
    with pytest.raises(ConfigError):
        make_spec(cluster_std=0.0)
    with pytest.raises(ConfigError):
        make_spec(grid_side=1)


def test_simplex_means_are_equidistant():
    for k, d in [(3, 2), (4, 3), (5, 8), (2, 1)]:
        means = cluster_means(k, d, scale=1.5)
        assert means.shape == (k, d)
        dists = [
            np.linalg.norm(means[i] - means[j])
            for i in range(k)
            for j in range(i + 1, k)
        ]
        assert np.allclose(dists, 1.5, atol=1e-9), (k, d)


def test_circle_means_for_many_classes():
    means = cluster_means(8, 2, scale=1.0)
    assert means.shape == (8, 2)
    radii = np.linalg.norm(means, axis=1)
    assert np.allclose(radii, radii[0])
    neighbor = [np.linalg.norm(means[i] - means[(i + 1) % 8]) for i in range(8)]
    assert np.allclose(neighbor, 1.0, atol=1e-9)


def test_means_need_room():
    with pytest.raises(ConfigError):
        cluster_means(5, 1, scale=1.0)


def test_sample_class_points_layout():
    means = cluster_means(3, 2, scale=4.0)
    feats, labels = sample_class_points(means, (2, 0), 5, 0.01, stream(0))
    assert feats.shape == (10, 2)
    assert list(labels) == [2] * 5 + [0] * 5
    assert np.linalg.norm(feats[:5] - means[2], axis=1).max() < 0.1
    assert np.linalg.norm(feats[5:] - means[0], axis=1).max() < 0.1


def test_density_grid_shape_and_peak():
    means = cluster_means(3, 2, scale=3.0)
    pts, dens = density_grid(means, observed=(0, 1), std=0.3, side=15)
    assert pts.shape == (225, 2)
    assert dens.shape == (225,)
    closest_to_mean0 = np.argmin(np.linalg.norm(pts - means[0], axis=1))
    far_corner = np.argmax(np.linalg.norm(pts, axis=1))
    assert dens[closest_to_mean0] > dens[far_corner]
    with pytest.raises(ConfigError):
        density_grid(cluster_means(4, 3, scale=1.0), observed=(0,), std=0.3, side=5)


def test_generate_writes_coherent_artifacts(tmp_path):
    out = str(tmp_path / "data")
    manifest = generate(out, make_spec())
    for key in ("train_dump", "eval_dump", "grid", "config"):
        assert os.path.exists(manifest[key]), key

    train = read_dump(manifest["train_dump"])
    evald = read_dump(manifest["eval_dump"])
    assert train.class_names == evald.class_names == tuple(f"class_{i}" for i in range(5))
    assert set(train.class_id) == {0, 1, 3}
    assert set(evald.class_id) == {0, 1, 2, 3, 4}
    assert train.n_records == 3 * 4
    assert evald.n_records == 5 * 3
    assert np.array_equal(train.word_vecs, evald.word_vecs)
    means = np.array(manifest["means"])
    assert np.allclose(train.word_vecs, means, atol=1e-6)

    pts, dens = read_grid(manifest["grid"])
    assert pts.shape == (400, 2) and dens is not None

    cfg = load_config(manifest["config"])
    assert cfg.seed == 11
    assert cfg.data["observed_classes"] == [0, 1, 3]
    assert cfg.data["train_dump"] == manifest["train_dump"]

    with open(os.path.join(out, "manifest.json")) as fh:
        on_disk = json.load(fh)
    assert on_disk == json.loads(json.dumps(manifest))


def test_generate_is_deterministic(tmp_path):
    a = generate(str(tmp_path / "a"), make_spec())
    b = generate(str(tmp_path / "b"), make_spec())
    for key in ("train_dump", "eval_dump"):
        with open(a[key], "rb") as fa, open(b[key], "rb") as fb:
            assert fa.read() == fb.read()
    with open(a["grid"], "rb") as fa, open(b["grid"], "rb") as fb:
        assert fa.read() == fb.read()
    c = generate(str(tmp_path / "c"), make_spec(seed=12))
    with open(a["train_dump"], "rb") as fa, open(c["train_dump"], "rb") as fc:
        assert fa.read() != fc.read()


def test_generate_skips_grid_off_plane(tmp_path):
    manifest = generate(str(tmp_path / "d3"), make_spec(input_dim=3))
    assert manifest["grid"] is None
    assert not os.path.exists(os.path.join(str(tmp_path / "d3"), "grid.tsv"))
