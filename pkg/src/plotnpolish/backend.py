"""Latent-diffusion backend abstraction and its deterministic mock.

A backend bundles the latent encoder/decoder, the structure-conditioned
noise predictor with its deterministic sampler update, text-to-image
template sampling, and optional image-prompt personalization. The mock
implements all of it with exact, seeded arithmetic so that full pipeline
runs are bit-reproducible across processes; real model adapters register
themselves under the same interface.
"""

from __future__ import annotations

import hashlib
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._regions import uniform_regions


class ShapeError(ValueError):
    """Raised when an array does not have the shape an operation requires."""


class BackendUnavailable(RuntimeError):
    """Raised when the requested backend kind cannot be constructed or called."""


class UnsupportedByBackend(RuntimeError):
    """Raised when a backend lacks a requested optional capability."""


class WeightsNotFound(FileNotFoundError):
    """Raised when personalization weights or a reference image is missing."""


@dataclass
class LatentTensor:
    """A latent-space tensor of shape (channels, height, width)."""

    data: np.ndarray
    scale_factor: int = 8

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ShapeError(f"latent must be (C, H, W), got {self.data.shape}")
        if self.data.shape[1] < 1 or self.data.shape[2] < 1:
            raise ShapeError(f"latent spatial dims must be >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("latent contains non-finite values")

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention coefficients, indexed by timestep 1..T.

    Timestep 0 is defined to have coefficient exactly 1, which makes the
    final latent-blending step reproduce unedited latents bit-exactly.
    """

    alphas_cumulative: tuple[float, ...]

    def __post_init__(self) -> None:
        alphas = self.alphas_cumulative
        if any(not (0.0 < a <= 1.0) for a in alphas):
            raise ValueError("alphas must lie in (0, 1]")
        if any(alphas[i] < alphas[i + 1] for i in range(len(alphas) - 1)):
            raise ValueError("alphas must be non-increasing in t")

    @property
    def t_steps(self) -> int:
        return len(self.alphas_cumulative)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        if not 1 <= t <= self.t_steps:
            raise ValueError(f"timestep {t} outside [0, {self.t_steps}]")
        return self.alphas_cumulative[t - 1]

    @classmethod
    def linear_signal(cls, t_steps: int) -> "NoiseSchedule":
        """Schedule whose signal coefficient decays linearly, never to zero."""
        if t_steps < 0:
            raise ValueError("t_steps must be >= 0")
        alphas = tuple(
            (1.0 - t / (t_steps + 1)) ** 2 for t in range(1, t_steps + 1)
        )
        return cls(alphas)


@dataclass(frozen=True)
class ImagePromptHandle:
    """Opaque image-prompt conditioning handle produced by a backend."""

    embedding: np.ndarray
    source: str

    def embedding_bytes(self) -> bytes:
        return np.ascontiguousarray(self.embedding, dtype=np.float64).tobytes()


@dataclass
class DenoiseCondition:
    """Everything conditioning a denoising step besides the latent itself."""

    text_prompt: str
    conditioning_strength: float
    depth_map: np.ndarray | None = None
    image_prompt: ImagePromptHandle | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.conditioning_strength <= 1.0:
            raise ValueError(
                f"conditioning_strength must be in [0, 1], got {self.conditioning_strength}"
            )


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    checkpoint_ref: str = ""
    supports_image_prompt: bool = False
    supports_personalization_weights: bool = False

    KINDS = ("mock", "latent-diffusion-v1", "latent-diffusion-xl", "flow-transformer")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind != "mock" and not self.checkpoint_ref:
            raise ValueError(f"backend kind {self.kind!r} requires a checkpoint_ref")


class Backend(ABC):
    """Interface every diffusion backend implements."""

    descriptor: BackendDescriptor
    scale_factor: int
    native_resolution: int

    @abstractmethod
    def encode(self, image: np.ndarray) -> LatentTensor:
        """Map an (H, W, 3) uint8 image to its latent."""

    @abstractmethod
    def decode(self, latent: LatentTensor) -> np.ndarray:
        """Map a latent back to an (H, W, 3) uint8 image, clamped to range."""

    @abstractmethod
    def predict_noise(
        self, latent: LatentTensor, cond: DenoiseCondition, t: int
    ) -> LatentTensor:
        """Predict the noise component of ``latent`` at timestep ``t``."""

    @abstractmethod
    def sample_template(self, prompt: str, seed: int) -> np.ndarray:
        """Generate one frame at native resolution; seeded and deterministic."""

    @abstractmethod
    def load_personalization(
        self,
        weights_ref: str | None = None,
        reference_image: np.ndarray | str | Path | None = None,
    ) -> ImagePromptHandle:
        """Load an image-prompt handle from weights or a reference image."""

    def cross_attention_map(self, image: np.ndarray, concept: str) -> np.ndarray:
        raise UnsupportedByBackend(
            f"{self.descriptor.kind} backend does not expose attention maps"
        )

    def denoise_step(
        self,
        latent: LatentTensor,
        cond: DenoiseCondition,
        t: int,
        schedule: NoiseSchedule,
    ) -> LatentTensor:
        """Deterministic sampler update from timestep t to t - 1.

        Reconstructs the clean-signal estimate from the predicted noise and
        re-noises it to the t - 1 level; no stochastic term is added, so two
        runs over identical inputs produce identical latents.
        """
        a_t = schedule.alpha_bar(t)
        a_prev = schedule.alpha_bar(t - 1)
        eps = self.predict_noise(latent, cond, t).data
        z = latent.data
        x0 = (z - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
        z_prev = np.sqrt(a_prev) * x0 + np.sqrt(1.0 - a_prev) * eps
        return LatentTensor(z_prev, scale_factor=latent.scale_factor)


def _validate_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {image.shape}")
    return image


class MockBackend(Backend):
    """Analytically defined backend for tests and offline development.

    Every operation is an exact, documented function:

    * ``encode`` averages each ``scale_factor`` x ``scale_factor`` pixel
      block per channel, rounds to the nearest integer, and recenters by
      -128, giving a (3, H/s, W/s) float64 latent. Rounding inside encode
      makes encode(decode(encode(x))) == encode(x) hold bit-exactly.
    * ``decode`` is the inverse: round, shift by +128, clamp to [0, 255],
      nearest-neighbor upsample. decode of an all-zero latent is mid-gray.
    * ``predict_noise`` draws standard normal pseudo-noise from a generator
      seeded with SHA-256 over (latent bytes, latent shape, prompt bytes,
      timestep, conditioning strength, image-prompt embedding bytes).
    * ``sample_template`` renders a seeded test card: a block-aligned noisy
      gradient background with one flat-colored, block-aligned rectangle
      that downstream perception can segment exactly.
    * ``load_personalization`` embeds a reference image as its mean color
      vector, or a weights file as a digest of its bytes.
    * ``cross_attention_map`` returns a distance field that is 1 inside the
      card's rectangle and decays exponentially away from it.
    """

    scale_factor = 8
    native_resolution = 512

    # rectangle size bounds for test cards, in latent blocks
    _RECT_BLOCKS = (8, 20)

    def __init__(self) -> None:
        self.descriptor = BackendDescriptor(
            kind="mock",
            supports_image_prompt=True,
            supports_personalization_weights=True,
        )

    # -- latent codec -------------------------------------------------

    def encode(self, image: np.ndarray) -> LatentTensor:
        image = _validate_image(image)
        h, w = image.shape[:2]
        s = self.scale_factor
        if h % s or w % s:
            raise ShapeError(f"image dims {h}x{w} not divisible by {s}")
        blocks = image.astype(np.float64).reshape(h // s, s, w // s, s, 3)
        pooled = blocks.mean(axis=(1, 3))  # exact: sums < 2**53, /64 is a power of 2
        z = np.rint(pooled) - 128.0
        return LatentTensor(np.moveaxis(z, 2, 0), scale_factor=s)

    def decode(self, latent: LatentTensor) -> np.ndarray:
        z = latent.data
        pixels = np.clip(np.rint(z + 128.0), 0.0, 255.0).astype(np.uint8)
        pixels = np.moveaxis(pixels, 0, 2)
        s = latent.scale_factor
        return np.repeat(np.repeat(pixels, s, axis=0), s, axis=1)

    # -- denoising ----------------------------------------------------

    def predict_noise(
        self, latent: LatentTensor, cond: DenoiseCondition, t: int
    ) -> LatentTensor:
        z = latent.data
        if cond.depth_map is not None and cond.depth_map.shape != z.shape[1:]:
            raise ShapeError(
                f"depth map {cond.depth_map.shape} does not match latent "
                f"spatial shape {z.shape[1:]}"
            )
        emb = b"" if cond.image_prompt is None else cond.image_prompt.embedding_bytes()
        digest = hashlib.sha256(
            np.ascontiguousarray(z, dtype=np.float64).tobytes()
            + struct.pack("<3q", *z.shape)
            + cond.text_prompt.encode("utf-8")
            + struct.pack("<q", t)
            + struct.pack("<d", cond.conditioning_strength)
            + emb
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        noise = rng.standard_normal(z.shape)
        return LatentTensor(noise, scale_factor=latent.scale_factor)

    # -- template sampling ---------------------------------------------

    def sample_template(self, prompt: str, seed: int) -> np.ndarray:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if seed < 0:
            raise ValueError("seed must be non-negative")
        prompt_key = int.from_bytes(
            hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little"
        )
        rng = np.random.default_rng(np.random.SeedSequence([seed, prompt_key]))
        s = self.scale_factor
        n = self.native_resolution // s  # card layout in latent blocks

        # Background: smooth gradient plus per-block jitter. Jitter keeps
        # adjacent blocks from forming flat regions the estimator would pick up.
        rows = np.arange(n, dtype=np.float64)[:, None]
        cols = np.arange(n, dtype=np.float64)[None, :]
        card = np.empty((n, n, 3), dtype=np.uint8)
        for c in range(3):
            gx, gy = rng.uniform(-1.0, 1.0, size=2)
            # base stays in [32, 192]; with jitter the background tops out at
            # 223, below the rectangle fill range, and never clips flat.
            base = 112.0 + 40.0 * (gx * rows / n + gy * cols / n)
            jitter = rng.integers(0, 32, size=(n, n))
            card[:, :, c] = (base + jitter).astype(np.uint8)

        lo, hi = self._RECT_BLOCKS
        rh = int(rng.integers(lo, hi + 1))
        rw = int(rng.integers(lo, hi + 1))
        ry = int(rng.integers(0, n - rh + 1))
        rx = int(rng.integers(0, n - rw + 1))
        color = rng.integers(224, 256, size=3)  # brighter than any background block
        card[ry : ry + rh, rx : rx + rw] = color

        return np.repeat(np.repeat(card, s, axis=0), s, axis=1)

    # -- personalization -----------------------------------------------

    def load_personalization(
        self,
        weights_ref: str | None = None,
        reference_image: np.ndarray | str | Path | None = None,
    ) -> ImagePromptHandle:
        if (weights_ref is None) == (reference_image is None):
            raise ValueError("provide exactly one of weights_ref or reference_image")
        if weights_ref is not None:
            path = Path(weights_ref)
            if not path.is_file():
                raise WeightsNotFound(f"personalization weights not found: {path}")
            digest = hashlib.sha256(path.read_bytes()).digest()
            embedding = np.frombuffer(digest, dtype=np.uint8).astype(np.float64)
            return ImagePromptHandle(embedding=embedding, source=f"weights:{path.name}")
        if isinstance(reference_image, (str, Path)):
            path = Path(reference_image)
            if not path.is_file():
                raise WeightsNotFound(f"reference image not found: {path}")
            from PIL import Image

            reference_image = np.asarray(Image.open(path).convert("RGB"))
        image = _validate_image(reference_image)
        embedding = image.astype(np.float64).mean(axis=(0, 1))
        return ImagePromptHandle(embedding=embedding, source="reference-image")

    # -- attention -----------------------------------------------------

    def cross_attention_map(self, image: np.ndarray, concept: str) -> np.ndarray:
        """Distance field around the card's rectangle; zeros if none found."""
        image = _validate_image(image)
        regions = uniform_regions(image)
        h, w = image.shape[:2]
        if not regions:
            return np.zeros((h, w), dtype=np.float64)
        y0, x0, y1, x1 = regions[0].bbox
        rows = np.arange(h, dtype=np.float64)[:, None]
        cols = np.arange(w, dtype=np.float64)[None, :]
        dy = np.maximum(np.maximum(y0 - rows, rows - (y1 - 1)), 0.0)
        dx = np.maximum(np.maximum(x0 - cols, cols - (x1 - 1)), 0.0)
        distance = np.maximum(dy, dx)
        return np.exp(-distance / 16.0)


_ADAPTERS: dict[str, Callable[[BackendDescriptor], Backend]] = {
    "mock": lambda descriptor: MockBackend(),
}


def register_backend(kind: str, factory: Callable[[BackendDescriptor], Backend]) -> None:
    """Register an adapter factory for a backend kind."""
    _ADAPTERS[kind] = factory


def resolve_backend(descriptor: BackendDescriptor | str) -> Backend:
    """Construct the backend for a descriptor; raise if no adapter is registered."""
    if isinstance(descriptor, str):
        descriptor = BackendDescriptor(kind=descriptor) if descriptor == "mock" else None
        if descriptor is None:
            raise BackendUnavailable(
                "non-mock backends need a full descriptor with a checkpoint_ref"
            )
    factory = _ADAPTERS.get(descriptor.kind)
    if factory is None:
        raise BackendUnavailable(
            f"no adapter registered for backend kind {descriptor.kind!r}"
        )
    return factory(descriptor)
