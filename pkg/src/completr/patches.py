"""Query-patch machinery: the class-indexed pool of ground-truth crops,
positive/negative sampling, and patch preprocessing with strong augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor
from torch.nn import functional as F

from .data import Dataset, ImageStore, QueryPatch, crop_patch
from .errors import DegenerateBoxError, EmptyDatasetError, UnknownClassError


@dataclass
class QueryPool:
    """All ground-truth patch crops of a dataset, grouped by class."""

    patches_by_class: dict[int, list[QueryPatch]]

    def classes(self) -> list[int]:
        return sorted(self.patches_by_class)

    def size(self, category_id: int) -> int:
        return len(self.patches_by_class.get(category_id, []))

    def __len__(self) -> int:
        return sum(len(v) for v in self.patches_by_class.values())


@dataclass
class QueryPatchBatch:
    """Preprocessed patch tensors for one training/inference step."""

    positives: list[Tensor]
    negatives: list[Tensor]
    target_class: int
    negatives_missing: bool = False  # single-class pool could not honor n_neg


@dataclass(frozen=True)
class AugmentConfig:
    """SimCLR-style strong augmentation magnitudes."""

    crop_scale: tuple[float, float] = (0.5, 1.0)
    flip_prob: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma: tuple[float, float] = (0.3, 1.2)


def build_query_pool(ds: Dataset, store: ImageStore) -> QueryPool:
    """One pool entry per annotation, grouped by category."""
    if ds.n_annotations == 0:
        raise EmptyDatasetError("query pool requires at least one annotation")
    pool: dict[int, list[QueryPatch]] = {}
    for record in ds.images:
        pixels = store.pixels(record)
        for ann in record.annotations:
            try:
                patch = crop_patch(pixels, record, ann)
            except DegenerateBoxError:
                continue
            pool.setdefault(ann.category_id, []).append(patch)
    if not pool:
        raise EmptyDatasetError("all annotations produced degenerate crops")
    return QueryPool(pool)


def to_tensor(pixels: np.ndarray) -> Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [0, 1]."""
    arr = np.array(pixels, dtype=np.uint8, copy=True)
    return torch.from_numpy(arr).permute(2, 0, 1).float() / 255.0


def resize_bilinear(image: Tensor, size: int) -> Tensor:
    """Bilinear resize of (3, H, W) to (3, size, size), half-pixel centers."""
    return F.interpolate(
        image.unsqueeze(0), size=(size, size), mode="bilinear", align_corners=False
    ).squeeze(0)


def _gaussian_blur(image: Tensor, sigma: float) -> Tensor:
    radius = max(1, int(2.0 * sigma + 0.5))
    xs = torch.arange(-radius, radius + 1, dtype=image.dtype)
    kernel = torch.exp(-(xs**2) / (2.0 * sigma * sigma))
    kernel = kernel / kernel.sum()
    c = image.shape[0]
    k_h = kernel.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    k_v = kernel.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    out = image.unsqueeze(0)
    out = F.conv2d(F.pad(out, (radius, radius, 0, 0), mode="reflect"), k_h, groups=c)
    out = F.conv2d(F.pad(out, (0, 0, radius, radius), mode="reflect"), k_v, groups=c)
    return out.squeeze(0)


def preprocess_patch(
    patch: QueryPatch,
    patch_size: int,
    augment: bool,
    generator: torch.Generator | None = None,
    aug: AugmentConfig = AugmentConfig(),
) -> Tensor:
    """Resize a crop to (3, patch_size, patch_size); optionally apply the
    strong-augmentation family (random crop-resize, flip, color jitter,
    grayscale, blur). Deterministic for a fixed generator state.
    """
    if patch.pixels.size == 0:
        raise DegenerateBoxError(f"annotation {patch.annotation_id}: empty patch")
    image = to_tensor(patch.pixels)
    if not augment:
        return resize_bilinear(image, patch_size)
    if generator is None:
        generator = torch.Generator()

    def rand(n=1):
        return torch.rand(n, generator=generator)

    _, h, w = image.shape
    scale = float(
        rand() * (aug.crop_scale[1] - aug.crop_scale[0]) + aug.crop_scale[0]
    )
    ch = max(1, int(round(h * scale**0.5)))
    cw = max(1, int(round(w * scale**0.5)))
    y0 = int(torch.randint(0, h - ch + 1, (1,), generator=generator))
    x0 = int(torch.randint(0, w - cw + 1, (1,), generator=generator))
    image = image[:, y0 : y0 + ch, x0 : x0 + cw]
    image = resize_bilinear(image, patch_size)

    if float(rand()) < aug.flip_prob:
        image = torch.flip(image, dims=(2,))

    # color jitter: brightness, contrast, saturation
    b = 1.0 + float(rand() * 2 - 1) * aug.brightness
    image = (image * b).clamp(0, 1)
    c = 1.0 + float(rand() * 2 - 1) * aug.contrast
    image = ((image - image.mean()) * c + image.mean()).clamp(0, 1)
    s = 1.0 + float(rand() * 2 - 1) * aug.saturation
    gray = image.mean(dim=0, keepdim=True)
    image = (gray + (image - gray) * s).clamp(0, 1)

    if float(rand()) < aug.grayscale_prob:
        image = image.mean(dim=0, keepdim=True).expand(3, -1, -1).clone()

    if float(rand()) < aug.blur_prob:
        sigma = float(rand() * (aug.blur_sigma[1] - aug.blur_sigma[0]) + aug.blur_sigma[0])
        image = _gaussian_blur(image, sigma).clamp(0, 1)
    return image


def sample_query_patches(
    pool: QueryPool,
    target: int,
    n_pos: int,
    n_neg: int,
    patch_size: int,
    generator: torch.Generator,
    augment: bool = True,
    aug: AugmentConfig = AugmentConfig(),
) -> QueryPatchBatch:
    """Uniformly sample positive patches of the target class and negative
    patches from the union of all other classes (with replacement when a
    class has fewer patches than requested). Single-class pools yield empty
    negatives with ``negatives_missing`` set.
    """
    if pool.size(target) == 0:
        raise UnknownClassError(f"no patches of class {target} in the pool")
    positives_src = pool.patches_by_class[target]
    negatives_src = [
        p for cid in pool.classes() if cid != target for p in pool.patches_by_class[cid]
    ]

    def draw(source: list[QueryPatch], k: int) -> list[QueryPatch]:
        idx = torch.randint(0, len(source), (k,), generator=generator)
        return [source[int(i)] for i in idx]

    positives = [
        preprocess_patch(p, patch_size, augment, generator, aug)
        for p in draw(positives_src, n_pos)
    ]
    negatives_missing = n_neg > 0 and not negatives_src
    negatives = (
        [
            preprocess_patch(p, patch_size, augment, generator, aug)
            for p in draw(negatives_src, n_neg)
        ]
        if n_neg > 0 and negatives_src
        else []
    )
    return QueryPatchBatch(
        positives=positives,
        negatives=negatives,
        target_class=target,
        negatives_missing=negatives_missing,
    )
