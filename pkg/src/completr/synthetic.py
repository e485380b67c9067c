"""Synthetic dense-scene benchmark: images of colored geometric objects with
exact ground-truth boxes.

Objects of one class share a shape and a base color (high intra-class
similarity); scenes average >= 15 objects for the dense preset. Rendering is
keyed per (seed, image index), so output is deterministic and independent of
generation order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

from .data import Annotation, Dataset, ImageRecord
from .errors import ConfigInvalidError

SHAPES = ("disc", "square", "triangle", "ring", "diamond", "cross")

# base RGB per class slot; palettes shift hue so domains can differ
_BASE_COLORS = (
    (220, 60, 50),
    (60, 170, 220),
    (230, 200, 60),
    (120, 220, 90),
    (190, 90, 220),
    (240, 140, 40),
)


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 200
    image_size: int = 96
    objects_per_image: float = 30.0  # Poisson mean, dense preset >= 15
    shapes: tuple[str, ...] = ("disc", "square", "triangle")
    classes_per_image: int = 0  # 0 = every class may appear in every image
    color_shift: tuple[int, int, int] = (0, 0, 0)  # palette offset per channel
    color_jitter: int = 18
    size_range: tuple[int, int] = (4, 7)  # half-extent in pixels
    background: tuple[int, int, int] = (24, 26, 30)
    noise_sigma: float = 6.0
    max_overlap_iou: float = 0.2
    occlusion_rate: float = 0.1  # chance an object may ignore the overlap cap
    seed: int = 0
    file_prefix: str = "synth"
    first_image_id: int = 1
    extra_categories: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_images < 0 or self.image_size < 16:
            raise ConfigInvalidError("n_images must be >= 0 and image_size >= 16")
        if self.objects_per_image <= 0:
            raise ConfigInvalidError("objects_per_image must be positive")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown:
            raise ConfigInvalidError(f"unknown shapes: {sorted(unknown)}")
        if not 1 <= self.size_range[0] <= self.size_range[1]:
            raise ConfigInvalidError(f"bad size_range {self.size_range}")


def shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Boolean mask of one object on a size x size grid (pixel centers)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    if shape == "disc":
        return dx**2 + dy**2 <= r**2
    if shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape == "triangle":
        # upward triangle: vertices (cx, cy-r), (cx-r, cy+r), (cx+r, cy+r)
        return (dy <= r) & (dy >= 2.0 * np.abs(dx) - r)
    if shape == "ring":
        d2 = dx**2 + dy**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if shape == "cross":
        t = max(r / 3.0, 1.0)
        return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | (
            (np.abs(dy) <= t) & (np.abs(dx) <= r)
        )
    raise ConfigInvalidError(f"unknown shape {shape!r}")


def mask_bbox(mask: np.ndarray) -> tuple[float, float, float, float] | None:
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    return (float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def _bbox_iou(a, b) -> float:
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix0, iy0 = max(ax0, bx0), max(ay0, by0)
    ix1, iy1 = min(ax0 + aw, bx0 + bw), min(ay0 + ah, by0 + bh)
    inter = max(ix1 - ix0, 0.0) * max(iy1 - iy0, 0.0)
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def _render_image(cfg: SynthConfig, index: int) -> tuple[np.ndarray, list[tuple[int, tuple]]]:
    """Render one scene; returns (pixels, [(class index, bbox), ...])."""
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.image_size
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = cfg.background
    if cfg.noise_sigma > 0:
        img += rng.normal(0.0, cfg.noise_sigma, size=img.shape)

    n_objects = max(1, int(rng.poisson(cfg.objects_per_image)))
    if 0 < cfg.classes_per_image < len(cfg.shapes):
        present = rng.choice(len(cfg.shapes), size=cfg.classes_per_image, replace=False)
    else:
        present = np.arange(len(cfg.shapes))
    placed: list[tuple[int, tuple]] = []
    boxes: list[tuple] = []
    for _ in range(n_objects):
        cls = int(present[rng.integers(0, len(present))])
        r = float(rng.uniform(cfg.size_range[0], cfg.size_range[1]))
        may_occlude = rng.random() < cfg.occlusion_rate
        for _attempt in range(30):
            cx = float(rng.uniform(r + 1, size - r - 1))
            cy = float(rng.uniform(r + 1, size - r - 1))
            mask = shape_mask(cfg.shapes[cls], size, cx, cy, r)
            bbox = mask_bbox(mask)
            if bbox is None:
                continue
            if may_occlude or all(_bbox_iou(bbox, b) <= cfg.max_overlap_iou for b in boxes):
                base = _BASE_COLORS[cls % len(_BASE_COLORS)]
                jitter = rng.integers(-cfg.color_jitter, cfg.color_jitter + 1, size=3)
                color = np.clip(
                    np.array(base, dtype=np.float64)
                    + np.array(cfg.color_shift, dtype=np.float64)
                    + jitter,
                    0,
                    255,
                )
                img[mask] = color
                placed.append((cls, bbox))
                boxes.append(bbox)
                break
    return np.clip(img, 0, 255).astype(np.uint8), placed


def generate_synthetic_dense(cfg: SynthConfig) -> tuple[Dataset, dict[int, np.ndarray]]:
    """Generate the benchmark; returns (dataset, image_id -> pixels)."""
    images: list[ImageRecord] = []
    pixel_map: dict[int, np.ndarray] = {}
    categories = {i + 1: name for i, name in enumerate(cfg.shapes)}
    categories.update(cfg.extra_categories)
    ann_id = 1
    for index in range(cfg.n_images):
        image_id = cfg.first_image_id + index
        pixels, placed = _render_image(cfg, index)
        anns = []
        for cls, bbox in placed:
            anns.append(
                Annotation(
                    annotation_id=ann_id,
                    image_id=image_id,
                    category_id=cls + 1,
                    bbox=bbox,
                )
            )
            ann_id += 1
        images.append(
            ImageRecord(
                image_id=image_id,
                file_path=f"{cfg.file_prefix}_{image_id:05d}.png",
                width=cfg.image_size,
                height=cfg.image_size,
                annotations=tuple(anns),
            )
        )
        pixel_map[image_id] = pixels
    provenance = (
        f"synthetic shapes={','.join(cfg.shapes)} seed={cfg.seed} "
        f"mean_objects={cfg.objects_per_image}"
    )
    return Dataset(tuple(images), categories, provenance), pixel_map


def write_synthetic(ds: Dataset, pixel_map: dict[int, np.ndarray], out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for record in ds.images:
        PILImage.fromarray(pixel_map[record.image_id]).save(
            os.path.join(out_dir, record.file_path)
        )
