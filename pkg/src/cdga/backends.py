"""Latent diffusion backend adapters.

The executor talks to any image generator through a small request/response
protocol; concrete adapters wrap an in-process stub (tests, smoke runs), a
pixel-space blender (cheap image mixing), or a remote HTTP service hosting
a real diffusion model.  A backend declares its capabilities up front so
plans can be rejected before any generation starts.
"""

from __future__ import annotations

import base64
import io
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from PIL import Image

# Request modes and the capability strings backends advertise.
MODE_TXT2IMG = "txt2img"
MODE_IMG2IMG = "img2img_with_prompt"
MODE_IMAGE_MIX = "image_mix"
ALL_MODES = frozenset({MODE_TXT2IMG, MODE_IMG2IMG, MODE_IMAGE_MIX})

DEFAULT_PARAMS = {"strength": 0.75, "steps": 50, "scale": 7.5}


class BackendError(RuntimeError):
    """A generation call failed; may be retried by the executor."""


class CapabilityError(ValueError):
    """The plan needs a mode the backend does not support; fatal."""


@dataclass
class GenerationRequest:
    """One batched generation call.

    ``slots`` names the batch positions being produced so that partial
    re-execution regenerates exactly the missing images; a deterministic
    backend must derive image ``slots[k]`` only from (request fields,
    params["seed"], slots[k]).
    """

    mode: str
    prompt: str | None = None
    source_image: Image.Image | None = None
    guidance_image: Image.Image | None = None
    params: dict = field(default_factory=dict)
    count: int = 1
    slots: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.mode not in ALL_MODES:
            raise ValueError(f"unknown generation mode: {self.mode}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.slots is None:
            self.slots = tuple(range(self.count))
        if len(self.slots) != self.count:
            raise ValueError("slots length must equal count")
        if self.mode == MODE_TXT2IMG and not self.prompt:
            raise ValueError("txt2img requires a prompt")
        if self.mode == MODE_IMG2IMG and (self.source_image is None or not self.prompt):
            raise ValueError("img2img_with_prompt requires a source image and a prompt")
        if self.mode == MODE_IMAGE_MIX and self.source_image is None:
            raise ValueError("image_mix requires a source image")


@dataclass
class GenerationResponse:
    images: list[Image.Image]
    metadata: dict = field(default_factory=dict)


@runtime_checkable
class LDMBackend(Protocol):
    """Adapter protocol every generation backend implements."""

    capabilities: frozenset[str]
    deterministic: bool

    def generate(self, request: GenerationRequest) -> GenerationResponse: ...


def check_capability(backend: LDMBackend, mode: str) -> None:
    if mode not in backend.capabilities:
        raise CapabilityError(
            f"backend {type(backend).__name__} supports {sorted(backend.capabilities)}, "
            f"plan requires {mode!r}"
        )


def _slot_rng(params: dict, slot: int) -> np.random.Generator:
    seed = int(params.get("seed", 0))
    return np.random.default_rng((seed, slot))


class StubBackend:
    """Deterministic noise-image backend for tests and dry runs.

    Counts generate() calls (thread-safe) so orchestration tests can assert
    exactly how many backend invocations a plan or resume produced.
    """

    capabilities = ALL_MODES
    deterministic = True

    def __init__(self, image_size: int = 16):
        self.image_size = image_size
        self.call_count = 0
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        with self._lock:
            self.call_count += 1
        images = []
        for slot in request.slots:
            rng = _slot_rng(request.params, slot)
            arr = rng.integers(0, 256, (self.image_size, self.image_size, 3), dtype=np.uint8)
            images.append(Image.fromarray(arr, mode="RGB"))
        return GenerationResponse(images=images, metadata={"backend": "stub"})


class PixelBlendBackend:
    """Blends source and guidance pixels; a stand-in for image mixing.

    image_mix output is a convex combination of the (resized) source and
    guidance images with a seeded per-slot mixing weight, plus light seeded
    noise so repeated slots differ.  Other modes fall back to noised copies
    of the source (or noise for txt2img).
    """

    capabilities = ALL_MODES
    deterministic = True

    def __init__(self, image_size: int = 24, alpha_range: tuple[float, float] = (0.35, 0.65),
                 noise_scale: float = 8.0):
        self.image_size = image_size
        self.alpha_range = alpha_range
        self.noise_scale = noise_scale
        self.call_count = 0
        self._lock = threading.Lock()

    def _to_array(self, image: Image.Image) -> np.ndarray:
        resized = image.convert("RGB").resize((self.image_size, self.image_size))
        return np.asarray(resized, dtype=np.float64)

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        with self._lock:
            self.call_count += 1
        source = self._to_array(request.source_image) if request.source_image else None
        guidance = self._to_array(request.guidance_image) if request.guidance_image else None
        images = []
        for slot in request.slots:
            rng = _slot_rng(request.params, slot)
            lo, hi = self.alpha_range
            alpha = rng.uniform(lo, hi)
            if source is not None and guidance is not None:
                arr = (1.0 - alpha) * source + alpha * guidance
            elif source is not None:
                arr = source.copy()
            else:
                arr = rng.uniform(0, 255, (self.image_size, self.image_size, 3))
            arr = arr + rng.normal(0.0, self.noise_scale, arr.shape)
            arr = np.clip(arr, 0, 255).astype(np.uint8)
            images.append(Image.fromarray(arr, mode="RGB"))
        return GenerationResponse(images=images, metadata={"backend": "pixel_blend"})


class FailingBackend:
    """Always fails; exercises retry and partial-failure paths."""

    capabilities = ALL_MODES
    deterministic = True

    def __init__(self, reason: str = "injected failure"):
        self.reason = reason
        self.call_count = 0

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        self.call_count += 1
        raise BackendError(self.reason)


class FlakyBackend:
    """Fails the first ``failures`` calls, then delegates to a stub."""

    capabilities = ALL_MODES
    deterministic = True

    def __init__(self, failures: int = 1, image_size: int = 16):
        self._remaining = failures
        self._inner = StubBackend(image_size=image_size)
        self.call_count = 0
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        with self._lock:
            self.call_count += 1
            should_fail = self._remaining > 0
            if should_fail:
                self._remaining -= 1
        if should_fail:
            raise BackendError("transient failure")
        return self._inner.generate(request)


def image_to_b64(image: Image.Image) -> str:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_to_image(data: str) -> Image.Image:
    return Image.open(io.BytesIO(base64.b64decode(data))).convert("RGB")


class RemoteBackend:
    """HTTP adapter posting the request protocol as JSON.

    The service receives {mode, prompt, source_image, guidance_image,
    params, count, slots} with images base64-PNG encoded, and replies
    {images: [b64...], metadata: {...}}.  Whether results are reproducible
    is up to the service, so ``deterministic`` is declared by the caller.
    """

    def __init__(self, url: str, capabilities: frozenset[str] = ALL_MODES,
                 deterministic: bool = False, timeout: float = 120.0, session=None):
        import requests

        self.url = url
        self.capabilities = frozenset(capabilities)
        self.deterministic = deterministic
        self.timeout = timeout
        self._session = session if session is not None else requests.Session()
        self.call_count = 0

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        self.call_count += 1
        payload = {
            "mode": request.mode,
            "prompt": request.prompt,
            "source_image": image_to_b64(request.source_image) if request.source_image else None,
            "guidance_image": (
                image_to_b64(request.guidance_image) if request.guidance_image else None
            ),
            "params": {**DEFAULT_PARAMS, **request.params},
            "count": request.count,
            "slots": list(request.slots),
        }
        try:
            resp = self._session.post(self.url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
        except Exception as exc:
            raise BackendError(f"remote generation failed: {exc}") from exc
        images = [b64_to_image(b) for b in body.get("images", [])]
        if len(images) != request.count:
            raise BackendError(
                f"remote returned {len(images)} images, expected {request.count}"
            )
        return GenerationResponse(images=images, metadata=body.get("metadata", {}))


BACKEND_REGISTRY = {
    "stub": StubBackend,
    "pixel_blend": PixelBlendBackend,
    "remote": RemoteBackend,
}


def build_backend(kind: str, **kwargs) -> LDMBackend:
    if kind not in BACKEND_REGISTRY:
        raise KeyError(f"unknown backend {kind!r}; known: {sorted(BACKEND_REGISTRY)}")
    return BACKEND_REGISTRY[kind](**kwargs)
