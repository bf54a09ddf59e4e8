"""Concept masks and depth conditions for editing.

Estimators are pluggable: detection yields scored boxes for a concept,
segmentation turns a box into a pixel mask, and depth produces a per-pixel
map. The synthetic estimator understands the mock backend's test cards
(flat-colored rectangles on a noisy gradient) and is exact, which lets the
whole editing path be tested without any model weights.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from ._regions import uniform_regions
from .backend import Backend

logger = logging.getLogger(__name__)

# Soft segmentation outputs are binarized at this level.
SEGMENTATION_THRESHOLD = 0.5
# Attention maps are binarized at this fraction of the per-frame maximum.
ATTENTION_THRESHOLD = 0.35


class EstimatorUnavailable(RuntimeError):
    """Raised when no estimator can serve a perception request."""


@dataclass(frozen=True)
class ConceptMask:
    """Binary pixel mask for one concept instance in one frame."""

    frame_index: int
    concept: str
    mask: np.ndarray  # (H, W), values in {0, 1}
    confidence: float
    instance_id: int

    def __post_init__(self) -> None:
        if self.mask.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.mask.shape}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")

    @property
    def is_empty(self) -> bool:
        return not bool(self.mask.any())


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth for one frame, normalized to [0, 1]."""

    frame_index: int
    depth: np.ndarray


@dataclass(frozen=True)
class Detection:
    box: tuple[int, int, int, int]  # y0, x0, y1, x1 (exclusive)
    score: float


@dataclass(frozen=True)
class MaskExtraction:
    """Per-frame extraction result: the selected instance plus alternatives."""

    selected: ConceptMask
    candidates: tuple[ConceptMask, ...]
    warning: str | None = None

    def override(self, instance_id: int) -> "MaskExtraction":
        """Re-select a candidate by instance id (user disambiguation)."""
        for candidate in self.candidates:
            if candidate.instance_id == instance_id:
                return replace(self, selected=candidate)
        raise KeyError(f"no candidate with instance_id {instance_id}")


class Estimator(ABC):
    """Detection + segmentation + depth provider."""

    @abstractmethod
    def detect(self, image: np.ndarray, concept: str) -> list[Detection]:
        """Scored boxes for a concept; empty list when absent."""

    @abstractmethod
    def segment(self, image: np.ndarray, box: tuple[int, int, int, int]) -> np.ndarray:
        """Soft or binary (H, W) mask for the object in ``box``."""

    @abstractmethod
    def depth(self, image: np.ndarray) -> np.ndarray:
        """Raw (H, W) depth values; normalization happens downstream."""


class SyntheticEstimator(Estimator):
    """Exact estimator for synthetic test cards.

    Detects flat-colored regions regardless of the concept string; the
    score is the region's rectangularity, so a cleanly visible rectangle
    scores 1.0 and an occluded one scores lower. Depth is image luminance.
    """

    def __init__(self, min_area: int = 256):
        self.min_area = min_area

    def detect(self, image: np.ndarray, concept: str) -> list[Detection]:
        return [
            Detection(box=r.bbox, score=r.rectangularity)
            for r in uniform_regions(image, min_area=self.min_area)
        ]

    def segment(self, image: np.ndarray, box: tuple[int, int, int, int]) -> np.ndarray:
        y0, x0, y1, x1 = box
        window = image[y0:y1, x0:x1]
        colors, counts = np.unique(window.reshape(-1, 3), axis=0, return_counts=True)
        dominant = colors[counts.argmax()]
        mask = np.zeros(image.shape[:2], dtype=np.float64)
        mask[y0:y1, x0:x1] = (window == dominant).all(axis=-1)
        return mask

    def depth(self, image: np.ndarray) -> np.ndarray:
        rgb = image.astype(np.float64)
        return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


_ESTIMATORS: dict[str, Callable[[], Estimator]] = {
    "synthetic": SyntheticEstimator,
}


def register_estimator(kind: str, factory: Callable[[], Estimator]) -> None:
    _ESTIMATORS[kind] = factory


def resolve_estimator(kind: str) -> Estimator:
    factory = _ESTIMATORS.get(kind)
    if factory is None:
        raise EstimatorUnavailable(f"no estimator registered for kind {kind!r}")
    return factory()


def _binarize(mask: np.ndarray, threshold: float = SEGMENTATION_THRESHOLD) -> np.ndarray:
    return (np.asarray(mask, dtype=np.float64) >= threshold).astype(np.float64)


def _empty_mask(frame_index: int, concept: str, shape: tuple[int, int]) -> ConceptMask:
    return ConceptMask(
        frame_index=frame_index,
        concept=concept,
        mask=np.zeros(shape, dtype=np.float64),
        confidence=0.0,
        instance_id=-1,
    )


def extract_masks(
    frames: Sequence[np.ndarray], concept: str, estimator: Estimator
) -> list[MaskExtraction]:
    """Segment one concept across all frames.

    Each frame yields exactly one selected mask: the highest-confidence
    instance, ties broken by lowest instance id. All detected instances
    are kept as candidates so a user can override the selection when
    detections overlap. Frames without the concept yield an empty mask
    with confidence 0 and a recorded warning.
    """
    if not concept.strip():
        raise ValueError("concept must be non-empty")
    results: list[MaskExtraction] = []
    for index, image in enumerate(frames):
        detections = estimator.detect(image, concept)
        if not detections:
            warning = f"concept {concept!r} not found in frame {index}"
            logger.warning(warning)
            results.append(
                MaskExtraction(
                    selected=_empty_mask(index, concept, image.shape[:2]),
                    candidates=(),
                    warning=warning,
                )
            )
            continue
        candidates = tuple(
            ConceptMask(
                frame_index=index,
                concept=concept,
                mask=_binarize(estimator.segment(image, det.box)),
                confidence=min(1.0, max(0.0, det.score)),
                instance_id=instance_id,
            )
            for instance_id, det in enumerate(detections)
        )
        # argmax over confidence, lowest instance_id wins ties
        selected = max(candidates, key=lambda c: (c.confidence, -c.instance_id))
        results.append(MaskExtraction(selected=selected, candidates=candidates))
    return results


def extract_depth(
    frames: Sequence[np.ndarray], estimator: Estimator
) -> list[DepthMap]:
    """Estimate and normalize per-frame depth to [0, 1].

    Constant frames map to 0.5 everywhere so downstream conditioning never
    divides by zero.
    """
    if len(frames) == 0:
        raise ValueError("frames must be non-empty")
    maps: list[DepthMap] = []
    for index, image in enumerate(frames):
        raw = np.asarray(estimator.depth(image), dtype=np.float64)
        lo, hi = raw.min(), raw.max()
        if hi > lo:
            normalized = (raw - lo) / (hi - lo)
        else:
            normalized = np.full_like(raw, 0.5)
        maps.append(DepthMap(frame_index=index, depth=normalized))
    return maps


def attention_mask(
    frames: Sequence[np.ndarray],
    concept: str,
    backend: Backend,
    threshold: float = ATTENTION_THRESHOLD,
) -> list[MaskExtraction]:
    """Masks from the backend's cross-attention maps instead of segmentation.

    The map is binarized at ``threshold`` times its per-frame maximum, so a
    threshold of 0 keeps every positive-attention pixel and a threshold of
    1 keeps none.
    """
    if not concept.strip():
        raise ValueError("concept must be non-empty")
    results: list[MaskExtraction] = []
    for index, image in enumerate(frames):
        attn = backend.cross_attention_map(image, concept)
        peak = float(attn.max())
        mask = (attn > threshold * peak).astype(np.float64) if peak > 0 else np.zeros_like(attn)
        if mask.any():
            selected = ConceptMask(
                frame_index=index,
                concept=concept,
                mask=mask,
                confidence=min(1.0, peak),
                instance_id=0,
            )
            results.append(MaskExtraction(selected=selected, candidates=(selected,)))
        else:
            warning = f"no attention response for {concept!r} in frame {index}"
            logger.warning(warning)
            results.append(
                MaskExtraction(
                    selected=_empty_mask(index, concept, image.shape[:2]),
                    candidates=(),
                    warning=warning,
                )
            )
    return results


def dilate_mask(mask: ConceptMask, radius: int) -> ConceptMask:
    """Morphological dilation with a square structuring element.

    Radius 0 is the identity; dilating twice by r equals dilating once by
    2r, which keeps blend seams predictable.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask
    dilated = ndimage.maximum_filter(mask.mask, size=2 * radius + 1, mode="constant")
    return replace(mask, mask=dilated)


# -- mask and depth persistence ---------------------------------------------


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    """Persist a binary mask as a 1-bit PNG."""
    from PIL import Image

    Image.fromarray(np.asarray(mask) > 0).save(path, bits=1)


def load_mask(path: str | Path) -> np.ndarray:
    from PIL import Image

    return (np.asarray(Image.open(path).convert("1")) > 0).astype(np.float64)


def save_depth(depth: np.ndarray, path: str | Path) -> None:
    """Persist a normalized depth map as 16-bit grayscale PNG."""
    from PIL import Image

    scaled = np.round(np.clip(depth, 0.0, 1.0) * 65535).astype(np.uint16)
    Image.fromarray(scaled).save(path)


def load_depth(path: str | Path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path), dtype=np.float64) / 65535.0
