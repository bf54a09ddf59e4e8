"""Detection of uniform-color regions in synthetic test images.

Shared by the mock backend (attention fields) and the synthetic
perception estimator. Real estimators do not use this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class UniformRegion:
    """A connected component of identically colored pixels."""

    mask: np.ndarray  # (H, W) bool
    bbox: tuple[int, int, int, int]  # y0, x0, y1, x1 (exclusive)
    color: tuple[int, int, int]
    area: int

    @property
    def bbox_area(self) -> int:
        y0, x0, y1, x1 = self.bbox
        return (y1 - y0) * (x1 - x0)

    @property
    def rectangularity(self) -> float:
        return self.area / self.bbox_area


def uniform_regions(
    image: np.ndarray,
    min_area: int = 256,
    max_frame_fraction: float = 0.5,
) -> list[UniformRegion]:
    """Find flat-colored connected components, largest first.

    Components covering more than ``max_frame_fraction`` of the frame are
    treated as background and dropped, so a constant-color image yields no
    regions.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    flat = image.reshape(-1, 3)
    colors, inverse, counts = np.unique(
        flat, axis=0, return_inverse=True, return_counts=True
    )
    ids = inverse.reshape(h, w)

    regions: list[UniformRegion] = []
    for color_idx in np.flatnonzero(counts >= min_area):
        color_mask = ids == color_idx
        labeled, n_components = ndimage.label(color_mask)
        for obj_idx, sl in enumerate(ndimage.find_objects(labeled), start=1):
            if sl is None:
                continue
            component = labeled[sl] == obj_idx
            area = int(component.sum())
            if area < min_area or area > max_frame_fraction * h * w:
                continue
            mask = np.zeros((h, w), dtype=bool)
            mask[sl] = component
            bbox = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
            regions.append(
                UniformRegion(
                    mask=mask,
                    bbox=bbox,
                    color=tuple(int(c) for c in colors[color_idx]),
                    area=area,
                )
            )
    regions.sort(key=lambda r: r.area, reverse=True)
    return regions
