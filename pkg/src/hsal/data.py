"""Procedural cluttered-glyph scenes and IDX ingestion.

Scenes hold 1 to 4 glyphs from a 10-class stroke alphabet at random sizes
and positions, plus short stroke/arc clutter that matches no class. The
generator is fully deterministic given its rng, records exact bounding
boxes, and supports set / multiset / list labeling modes. An IDX reader is
provided so real digit bitmaps can stand in for the procedural alphabet.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .multiset import LabelMultiset
from .rngs import DATA_TAG, stream_rng


class FormatError(ValueError):
    """A binary input does not follow its declared format."""


class GenerationError(RuntimeError):
    """Scene placement failed; configuration too crowded."""


@dataclass
class SceneConfig:
    canvas: int = 64
    objects_min: int = 1
    objects_max: int = 4
    glyph_min: int = 13
    glyph_max: int = 32
    clutter_min: int = 2
    clutter_max: int = 6
    classes: int = 10
    seed: int = 0
    max_overlap: float = 0.2


@dataclass
class Scene:
    image: np.ndarray                   # (canvas, canvas) float64 in [0, 1]
    labels: object                      # LabelMultiset, or list[int] in list mode
    boxes: list = field(default_factory=list)  # (x0, y0, x1, y1) per glyph, end-exclusive

    @property
    def label_list(self) -> list[int]:
        if isinstance(self.labels, LabelMultiset):
            return self.labels.as_sorted_list()
        return list(self.labels)


# Stroke alphabet in unit coordinates (y grows downward). Primitives are
# ("line", x1, y1, x2, y2) and ("arc", cx, cy, rx, ry, deg0, deg1); arcs are
# sampled as polylines. Shapes echo digit forms so classes stay nameable.
_GLYPHS: dict[int, list[tuple]] = {
    0: [("arc", 0.50, 0.50, 0.30, 0.38, 0.0, 360.0)],
    1: [("line", 0.50, 0.12, 0.50, 0.88),
        ("line", 0.36, 0.26, 0.50, 0.12)],
    2: [("arc", 0.50, 0.32, 0.30, 0.22, 180.0, 350.0),
        ("line", 0.76, 0.40, 0.14, 0.86),
        ("line", 0.14, 0.86, 0.86, 0.86)],
    3: [("arc", 0.46, 0.31, 0.27, 0.20, 200.0, 450.0),
        ("arc", 0.46, 0.69, 0.29, 0.22, 270.0, 520.0)],
    4: [("line", 0.64, 0.12, 0.64, 0.88),
        ("line", 0.64, 0.12, 0.14, 0.60),
        ("line", 0.14, 0.60, 0.86, 0.60)],
    5: [("line", 0.80, 0.13, 0.24, 0.13),
        ("line", 0.24, 0.13, 0.21, 0.46),
        ("arc", 0.47, 0.65, 0.29, 0.24, 250.0, 500.0)],
    6: [("line", 0.68, 0.10, 0.40, 0.42),
        ("arc", 0.48, 0.64, 0.26, 0.23, 0.0, 360.0)],
    7: [("line", 0.14, 0.14, 0.84, 0.14),
        ("line", 0.84, 0.14, 0.38, 0.88)],
    8: [("arc", 0.50, 0.30, 0.23, 0.18, 0.0, 360.0),
        ("arc", 0.50, 0.70, 0.27, 0.20, 0.0, 360.0)],
    9: [("arc", 0.52, 0.34, 0.25, 0.22, 0.0, 360.0),
        ("line", 0.76, 0.40, 0.62, 0.88)],
}

_ARC_SEGMENTS = 22


def _primitive_points(prim: tuple, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Polyline vertices for a primitive, with small per-instance jitter."""
    jitter = (lambda: rng.uniform(-0.035, 0.035)) if rng is not None else (lambda: 0.0)
    if prim[0] == "line":
        _, x1, y1, x2, y2 = prim
        return np.array([[x1 + jitter(), y1 + jitter()],
                         [x2 + jitter(), y2 + jitter()]])
    _, cx, cy, rx, ry, a0, a1 = prim
    cx, cy = cx + jitter(), cy + jitter()
    rx, ry = rx * (1.0 + jitter()), ry * (1.0 + jitter())
    theta = np.radians(np.linspace(a0 + 3 * jitter(), a1 + 3 * jitter(), _ARC_SEGMENTS + 1))
    return np.stack([cx + rx * np.cos(theta), cy + ry * np.sin(theta)], axis=1)


def _render_segments(size: int, segments: np.ndarray, thickness: float) -> np.ndarray:
    """Rasterize polyline segments (n, 2, 2) in pixel coords onto a size*size patch."""
    ys, xs = np.mgrid[0:size, 0:size]
    pts = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)[None, :, :]
    a = segments[:, None, 0, :]
    ab = segments[:, None, 1, :] - a
    denom = (ab * ab).sum(axis=2)
    denom[denom == 0.0] = 1e-12
    t = np.clip(((pts - a) * ab).sum(axis=2) / denom, 0.0, 1.0)
    proj = a + t[:, :, None] * ab
    dist = np.sqrt(((pts - proj) ** 2).sum(axis=2)).min(axis=0)
    ink = np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0)
    return ink.reshape(size, size)


def render_glyph(label: int, size: int, rng: Optional[np.random.Generator] = None,
                 thickness: Optional[float] = None) -> np.ndarray:
    """Rasterize one glyph class at the given pixel size, values in [0, 1]."""
    if label not in _GLYPHS:
        raise ValueError(f"unknown glyph class {label}")
    segs = []
    for prim in _GLYPHS[label]:
        pts = _primitive_points(prim, rng) * size
        segs.extend(np.stack([pts[i], pts[i + 1]], axis=0) for i in range(len(pts) - 1))
    if thickness is None:
        lo = max(1.6, 0.09 * size)
        hi = max(lo + 0.2, 0.15 * size)
        thickness = rng.uniform(lo, hi) if rng is not None else (lo + hi) / 2.0
    return _render_segments(size, np.stack(segs), thickness)


def _overlap_frac(b1, b2) -> float:
    ix = max(0, min(b1[2], b2[2]) - max(b1[0], b2[0]))
    iy = max(0, min(b1[3], b2[3]) - max(b1[1], b2[1]))
    inter = ix * iy
    if inter == 0:
        return 0.0
    a1 = (b1[2] - b1[0]) * (b1[3] - b1[1])
    a2 = (b2[2] - b2[0]) * (b2[3] - b2[1])
    return inter / min(a1, a2)


def _draw_clutter(img: np.ndarray, cfg: SceneConfig, rng: np.random.Generator) -> None:
    count = int(rng.integers(cfg.clutter_min, cfg.clutter_max + 1))
    c = cfg.canvas
    for _ in range(count):
        length = rng.uniform(4.0, 10.0)
        x0 = rng.uniform(1.0, c - 1.0)
        y0 = rng.uniform(1.0, c - 1.0)
        if rng.random() < 0.5:
            ang = rng.uniform(0.0, 2 * np.pi)
            x1 = np.clip(x0 + length * np.cos(ang), 0.5, c - 0.5)
            y1 = np.clip(y0 + length * np.sin(ang), 0.5, c - 0.5)
            pts = np.array([[x0, y0], [x1, y1]])
        else:
            r = length / 2.0
            a0 = rng.uniform(0.0, 360.0)
            theta = np.radians(np.linspace(a0, a0 + rng.uniform(80.0, 170.0), 7))
            pts = np.stack([np.clip(x0 + r * np.cos(theta), 0.5, c - 0.5),
                            np.clip(y0 + r * np.sin(theta), 0.5, c - 0.5)], axis=1)
        segs = np.stack([np.stack([pts[i], pts[i + 1]]) for i in range(len(pts) - 1)])
        ink = _render_segments(c, segs, rng.uniform(1.2, 2.0))
        np.maximum(img, ink * rng.uniform(0.35, 0.85), out=img)


def _place_glyphs(cfg: SceneConfig, labels: Sequence[int], rng: np.random.Generator,
                  distinct_x: bool,
                  glyph_bank: Optional[dict[int, list[np.ndarray]]]) -> Scene:
    canvas = cfg.canvas
    img = np.zeros((canvas, canvas))
    boxes: list[tuple[int, int, int, int]] = []
    attempts = 0
    for label in labels:
        while True:
            attempts += 1
            if attempts > 1000:
                raise GenerationError("glyph placement exceeded 1000 attempts; "
                                      "scene configuration too crowded")
            size = int(rng.integers(cfg.glyph_min, cfg.glyph_max + 1))
            x0 = int(rng.integers(0, canvas - size + 1))
            y0 = int(rng.integers(0, canvas - size + 1))
            box = (x0, y0, x0 + size, y0 + size)
            if any(_overlap_frac(box, b) > cfg.max_overlap for b in boxes):
                continue
            if distinct_x and any(abs((b[0] + b[2]) - (box[0] + box[2])) < 1 for b in boxes):
                continue
            break
        if glyph_bank is not None:
            pool = glyph_bank[label]
            bitmap = _resize_bitmap(pool[int(rng.integers(0, len(pool)))], size)
        else:
            bitmap = render_glyph(label, size, rng)
        patch = img[y0:y0 + size, x0:x0 + size]
        np.maximum(patch, bitmap * rng.uniform(0.78, 1.0), out=patch)
        boxes.append(box)
    _draw_clutter(img, cfg, rng)
    np.clip(img, 0.0, 1.0, out=img)
    return Scene(image=img, labels=list(labels), boxes=boxes)


def _resize_bitmap(src: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a grayscale bitmap to size*size."""
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape
    ys = np.linspace(0, h - 1, size)
    xs = np.linspace(0, w - 1, size)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def generate_scene(cfg: SceneConfig, mode: str, rng: np.random.Generator,
                   glyph_bank: Optional[dict[int, list[np.ndarray]]] = None) -> Scene:
    """One scene with 1-4 glyphs and clutter; deterministic given the rng.

    mode "set" draws distinct labels, "multiset" allows duplicates, and
    "list" orders the labels by glyph center x-coordinate.
    """
    if mode not in ("set", "multiset", "list"):
        raise ValueError(f"unknown scene mode '{mode}'")
    n = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    if mode == "set":
        if n > cfg.classes:
            raise ValueError("set mode needs at least as many classes as objects")
        labels = list(rng.choice(cfg.classes, size=n, replace=False))
    else:
        labels = list(rng.integers(0, cfg.classes, size=n))
    scene = _place_glyphs(cfg, [int(x) for x in labels], rng,
                          distinct_x=(mode == "list"), glyph_bank=glyph_bank)
    if mode == "list":
        order = np.argsort([b[0] + b[2] for b in scene.boxes], kind="stable")
        scene.labels = [scene.labels[i] for i in order]
        scene.boxes = [scene.boxes[i] for i in order]
    else:
        scene.labels = LabelMultiset(scene.labels)
    return scene


def generate_single_object(cfg: SceneConfig, rng: np.random.Generator,
                           glyph_bank: Optional[dict[int, list[np.ndarray]]] = None) -> Scene:
    """A scene with exactly one glyph plus clutter (for extractor pretraining)."""
    label = int(rng.integers(0, cfg.classes))
    scene = _place_glyphs(cfg, [label], rng, distinct_x=False, glyph_bank=glyph_bank)
    scene.labels = LabelMultiset([label])
    return scene


def scene_rng(base_seed: int, index: int) -> np.random.Generator:
    """Counter-based per-scene stream so generation can be seed-partitioned."""
    return stream_rng(DATA_TAG, base_seed, index)


def make_dataset(cfg: SceneConfig, mode: str, count: int, base_seed: int,
                 single_object: bool = False,
                 glyph_bank: Optional[dict[int, list[np.ndarray]]] = None) -> list[Scene]:
    scenes = []
    for i in range(count):
        rng = scene_rng(base_seed, i)
        if single_object:
            scenes.append(generate_single_object(cfg, rng, glyph_bank))
        else:
            scenes.append(generate_scene(cfg, mode, rng, glyph_bank))
    return scenes


def batch_iter(items: Sequence, batch_size: int,
               rng: np.random.Generator) -> Iterator[list]:
    """Shuffled batches covering the sequence exactly once; last may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(items))
    for lo in range(0, len(items), batch_size):
        yield [items[i] for i in order[lo:lo + batch_size]]


# ---------------------------------------------------------------------------
# Dataset caching: raw little-endian float32 pixels plus a JSON manifest.

def save_dataset(scenes: Sequence[Scene], directory, *, mode: str, seed: int) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    canvas = scenes[0].image.shape[0]
    stack = np.stack([s.image for s in scenes]).astype("<f4")
    (directory / "images.f32").write_bytes(stack.tobytes())
    manifest = {
        "canvas": canvas,
        "count": len(scenes),
        "mode": mode,
        "seed": seed,
        "labels": [s.label_list if mode != "list" else list(s.labels) for s in scenes],
        "boxes": [[list(b) for b in s.boxes] for s in scenes],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest))


def load_dataset(directory) -> tuple[list[Scene], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    canvas, count = manifest["canvas"], manifest["count"]
    raw = np.frombuffer((directory / "images.f32").read_bytes(), dtype="<f4")
    if raw.size != count * canvas * canvas:
        raise FormatError(f"images.f32 holds {raw.size} floats, "
                          f"expected {count * canvas * canvas}")
    images = raw.reshape(count, canvas, canvas).astype(np.float64)
    scenes = []
    for i in range(count):
        labels = manifest["labels"][i]
        scenes.append(Scene(
            image=images[i],
            labels=list(labels) if manifest["mode"] == "list" else LabelMultiset(labels),
            boxes=[tuple(b) for b in manifest["boxes"][i]]))
    return scenes, manifest


# ---------------------------------------------------------------------------
# IDX format (big-endian): 0x00000803 image tensors, 0x00000801 label vectors.

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated IDX file: expected {n} bytes for {what}, "
                          f"got {len(buf)}")
    return buf


def _load_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic_bytes = _read_exact(f, 4, "magic")
        magic = struct.unpack(">I", magic_bytes)[0]
        if magic != _IDX_IMAGES_MAGIC:
            raise FormatError(f"bad IDX image magic {magic_bytes.hex()} "
                              f"(expected {_IDX_IMAGES_MAGIC:08x})")
        count, h, w = struct.unpack(">III", _read_exact(f, 12, "image dimensions"))
        raw = _read_exact(f, count * h * w, "pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, h, w).astype(np.float64) / 255.0


def _load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic_bytes = _read_exact(f, 4, "magic")
        magic = struct.unpack(">I", magic_bytes)[0]
        if magic != _IDX_LABELS_MAGIC:
            raise FormatError(f"bad IDX label magic {magic_bytes.hex()} "
                              f"(expected {_IDX_LABELS_MAGIC:08x})")
        count = struct.unpack(">I", _read_exact(f, 4, "label count"))[0]
        raw = _read_exact(f, count, "label data")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path) -> list[tuple[np.ndarray, int]]:
    """Parse an IDX image/label file pair into [(image in [0,1], label), ...]."""
    images = _load_idx_images(images_path)
    labels = _load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"IDX pair mismatch: {len(images)} images vs "
                          f"{len(labels)} labels")
    return [(images[i], int(labels[i])) for i in range(len(images))]


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Inverse of load_idx, for round-trips and exporting generated glyphs."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    pix = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8) \
        if images.dtype != np.uint8 else images
    n, h, w = pix.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, n, h, w))
        f.write(pix.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", _IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())
