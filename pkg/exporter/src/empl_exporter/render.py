"""Synthetic shape corpus: labeled grayscale PNGs plus a JSON manifest."""

from __future__ import annotations

import json
import os
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

MANIFEST_NAME = "manifest.json"

_Painter = Callable[[ImageDraw.ImageDraw, float, float, float, int], None]


def _disc(d: ImageDraw.ImageDraw, cx: float, cy: float, r: float, fill: int) -> None:
    d.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fill)


def _box(d: ImageDraw.ImageDraw, cx: float, cy: float, r: float, fill: int) -> None:
    d.rectangle([cx - r, cy - r, cx + r, cy + r], fill=fill)


def _triangle(d: ImageDraw.ImageDraw, cx: float, cy: float, r: float, fill: int) -> None:
    d.polygon([(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)], fill=fill)


def _cross(d: ImageDraw.ImageDraw, cx: float, cy: float, r: float, fill: int) -> None:
    arm = max(2.0, r / 3)
    d.rectangle([cx - r, cy - arm, cx + r, cy + arm], fill=fill)
    d.rectangle([cx - arm, cy - r, cx + arm, cy + r], fill=fill)


def _ring(d: ImageDraw.ImageDraw, cx: float, cy: float, r: float, fill: int) -> None:
    d.ellipse([cx - r, cy - r, cx + r, cy + r], outline=fill, width=max(2, int(r / 3)))


def _diamond(d: ImageDraw.ImageDraw, cx: float, cy: float, r: float, fill: int) -> None:
    d.polygon([(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)], fill=fill)


def _stripes(d: ImageDraw.ImageDraw, cx: float, cy: float, r: float, fill: int) -> None:
    bar = max(2.0, r / 3)
    for offset in (-r, 0.0, r):
        d.rectangle([cx - r, cy + offset - bar / 2, cx + r, cy + offset + bar / 2], fill=fill)


def _dots(d: ImageDraw.ImageDraw, cx: float, cy: float, r: float, fill: int) -> None:
    s = r / 2
    for dx in (-s, s):
        for dy in (-s, s):
            d.ellipse([cx + dx - s / 2, cy + dy - s / 2, cx + dx + s / 2, cy + dy + s / 2], fill=fill)


SHAPES: tuple[tuple[str, _Painter], ...] = (
    ("disc", _disc),
    ("box", _box),
    ("triangle", _triangle),
    ("cross", _cross),
    ("ring", _ring),
    ("diamond", _diamond),
    ("stripes", _stripes),
    ("dots", _dots),
)


@dataclass(frozen=True)
class Corpus:
    """A rendered corpus on disk: absolute image paths with integer labels.

    Labels index into class_names.  Paths are ordered class-major, matching
    the manifest, so re-exports of the same corpus serialize identically.
    """

    root: str
    image_paths: tuple[str, ...]
    labels: tuple[int, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.image_paths) != len(self.labels):
            raise ValueError("image_paths and labels must align")
        if self.labels and not all(0 <= l < len(self.class_names) for l in self.labels):
            raise ValueError("labels must index into class_names")


def _render_one(painter: _Painter, side: int, rng: np.random.Generator) -> Image.Image:
    # Jitter keeps images within a class distinct; the shape itself stays
    # fully inside the frame for every draw.
    r = float(rng.integers(side // 4, side // 3 + 1))
    margin = int(r) + 2
    cx = float(rng.integers(margin, side - margin + 1))
    cy = float(rng.integers(margin, side - margin + 1))
    fill = int(rng.integers(160, 256))
    img = Image.new("L", (side, side), color=0)
    painter(ImageDraw.Draw(img), cx, cy, r, fill)
    return img


def render_corpus(
    out_dir: str,
    classes: int = 5,
    per_class: int = 24,
    seed: int = 0,
    side: int = 64,
) -> Corpus:
    """Render classes * per_class shape images into out_dir and write the manifest.

    Byte-deterministic in (classes, per_class, seed, side).
    """
    if not 1 <= classes <= len(SHAPES):
        raise ValueError(f"classes must be in 1..{len(SHAPES)}, got {classes}")
    if per_class < 1:
        raise ValueError(f"per_class must be positive, got {per_class}")
    if side < 16:
        raise ValueError(f"side must be at least 16, got {side}")
    names = tuple(name for name, _ in SHAPES[:classes])
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    entries: list[dict[str, object]] = []
    for label, (name, painter) in enumerate(SHAPES[:classes]):
        for i in range(per_class):
            rel = f"{name}_{i:03d}.png"
            _render_one(painter, side, rng).save(os.path.join(out_dir, rel))
            entries.append({"path": rel, "label": label})
    manifest = {"class_names": list(names), "images": entries}
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return Corpus(
        root=os.path.abspath(out_dir),
        image_paths=tuple(os.path.abspath(os.path.join(out_dir, str(e["path"]))) for e in entries),
        labels=tuple(int(e["label"]) for e in entries),  # type: ignore[call-overload]
        class_names=names,
    )


def load_corpus(dir_path: str) -> Corpus:
    """Rebuild a Corpus from the manifest a previous render left behind."""
    path = os.path.join(dir_path, MANIFEST_NAME)
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    try:
        names = tuple(str(n) for n in manifest["class_names"])
        entries = manifest["images"]
        paths = tuple(os.path.abspath(os.path.join(dir_path, str(e["path"]))) for e in entries)
        labels = tuple(int(e["label"]) for e in entries)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed manifest {path}: {exc}") from exc
    return Corpus(root=os.path.abspath(dir_path), image_paths=paths, labels=labels, class_names=names)
