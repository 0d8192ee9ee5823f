"""Backend protocol: request validation, determinism, capability checks."""

import threading

import numpy as np
import pytest
from PIL import Image

from cdga.backends import (
    ALL_MODES,
    CapabilityError,
    BackendError,
    DEFAULT_PARAMS,
    FailingBackend,
    FlakyBackend,
    GenerationRequest,
    MODE_IMAGE_MIX,
    MODE_IMG2IMG,
    MODE_TXT2IMG,
    PixelBlendBackend,
    RemoteBackend,
    StubBackend,
    b64_to_image,
    build_backend,
    check_capability,
    image_to_b64,
)


def flat_image(color=(200, 40, 40), size=8):
    return Image.fromarray(np.full((size, size, 3), color, dtype=np.uint8), "RGB")


class TestRequestValidation:
    def test_default_params_contract(self):
        assert DEFAULT_PARAMS == {"strength": 0.75, "steps": 50, "scale": 7.5}

    def test_modes(self):
        assert ALL_MODES == frozenset({MODE_TXT2IMG, MODE_IMG2IMG, MODE_IMAGE_MIX})

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            GenerationRequest(mode="paint")

    def test_txt2img_needs_prompt(self):
        with pytest.raises(ValueError):
            GenerationRequest(mode=MODE_TXT2IMG)

    def test_img2img_needs_source_and_prompt(self):
        with pytest.raises(ValueError):
            GenerationRequest(mode=MODE_IMG2IMG, prompt="a dog")
        with pytest.raises(ValueError):
            GenerationRequest(mode=MODE_IMG2IMG, source_image=flat_image())

    def test_image_mix_needs_source(self):
        with pytest.raises(ValueError):
            GenerationRequest(mode=MODE_IMAGE_MIX, prompt="a dog")

    def test_slots_default_and_mismatch(self):
        req = GenerationRequest(mode=MODE_TXT2IMG, prompt="a dog", count=3)
        assert req.slots == (0, 1, 2)
        with pytest.raises(ValueError):
            GenerationRequest(mode=MODE_TXT2IMG, prompt="a dog", count=2, slots=(0,))


class TestDeterminism:
    def test_same_request_same_bytes(self):
        backend = StubBackend()
        req = lambda: GenerationRequest(
            mode=MODE_TXT2IMG, prompt="a dog", params={"seed": 7}, count=3
        )
        a = backend.generate(req()).images
        b = backend.generate(req()).images
        for ia, ib in zip(a, b):
            assert np.array_equal(np.asarray(ia), np.asarray(ib))

    def test_slot_subset_matches_full_batch(self):
        # Regenerating only slot 2 must reproduce image 2 of the full batch.
        backend = StubBackend()
        full = backend.generate(
            GenerationRequest(mode=MODE_TXT2IMG, prompt="a dog", params={"seed": 7}, count=3)
        ).images
        only2 = backend.generate(
            GenerationRequest(
                mode=MODE_TXT2IMG, prompt="a dog", params={"seed": 7}, count=1, slots=(2,)
            )
        ).images
        assert np.array_equal(np.asarray(full[2]), np.asarray(only2[0]))

    def test_pixel_blend_slot_subset(self):
        backend = PixelBlendBackend(image_size=8)
        kwargs = dict(
            mode=MODE_IMAGE_MIX,
            source_image=flat_image((200, 40, 40)),
            guidance_image=flat_image((40, 40, 200)),
            params={"seed": 3},
        )
        full = backend.generate(GenerationRequest(count=4, **kwargs)).images
        part = backend.generate(GenerationRequest(count=2, slots=(1, 3), **kwargs)).images
        assert np.array_equal(np.asarray(full[1]), np.asarray(part[0]))
        assert np.array_equal(np.asarray(full[3]), np.asarray(part[1]))

    def test_different_seeds_differ(self):
        backend = StubBackend()
        a = backend.generate(
            GenerationRequest(mode=MODE_TXT2IMG, prompt="a dog", params={"seed": 1})
        ).images[0]
        b = backend.generate(
            GenerationRequest(mode=MODE_TXT2IMG, prompt="a dog", params={"seed": 2})
        ).images[0]
        assert not np.array_equal(np.asarray(a), np.asarray(b))


class TestPixelBlend:
    def test_blend_lies_between_sources(self):
        backend = PixelBlendBackend(image_size=8, noise_scale=0.0)
        out = backend.generate(
            GenerationRequest(
                mode=MODE_IMAGE_MIX,
                source_image=flat_image((200, 40, 40)),
                guidance_image=flat_image((40, 40, 200)),
                params={"seed": 0},
            )
        ).images[0]
        arr = np.asarray(out, dtype=np.float64)
        # Red channel must land strictly between the two inputs.
        assert 40 < arr[..., 0].mean() < 200
        assert 40 < arr[..., 2].mean() < 200


class TestOrchestrationBackends:
    def test_stub_counts_calls_thread_safely(self):
        backend = StubBackend()
        req = GenerationRequest(mode=MODE_TXT2IMG, prompt="a dog")
        threads = [
            threading.Thread(target=lambda: [backend.generate(req) for _ in range(10)])
            for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert backend.call_count == 80

    def test_failing_backend_raises_backend_error(self):
        with pytest.raises(BackendError):
            FailingBackend().generate(
                GenerationRequest(mode=MODE_TXT2IMG, prompt="a dog")
            )

    def test_flaky_backend_recovers(self):
        backend = FlakyBackend(failures=2)
        req = GenerationRequest(mode=MODE_TXT2IMG, prompt="a dog")
        for _ in range(2):
            with pytest.raises(BackendError):
                backend.generate(req)
        assert len(backend.generate(req).images) == 1

    def test_capability_check(self):
        class PromptOnly:
            capabilities = frozenset({MODE_TXT2IMG})
            deterministic = True

            def generate(self, request):
                raise NotImplementedError

        check_capability(PromptOnly(), MODE_TXT2IMG)
        with pytest.raises(CapabilityError):
            check_capability(PromptOnly(), MODE_IMAGE_MIX)

    def test_registry(self):
        assert isinstance(build_backend("stub"), StubBackend)
        assert isinstance(build_backend("pixel_blend"), PixelBlendBackend)
        with pytest.raises(KeyError):
            build_backend("unknown")


class TestRemoteBackend:
    def test_b64_round_trip(self):
        img = flat_image((12, 200, 99))
        assert np.array_equal(np.asarray(b64_to_image(image_to_b64(img))), np.asarray(img))

    def test_remote_round_trip_via_fake_transport(self):
        served = StubBackend()

        class FakeResponse:
            def __init__(self, payload):
                self._payload = payload
                self.status_code = 200

            def raise_for_status(self):
                pass

            def json(self):
                return self._payload

        class FakeSession:
            def post(self, url, json=None, timeout=None):
                req = GenerationRequest(
                    mode=json["mode"],
                    prompt=json.get("prompt"),
                    source_image=(
                        b64_to_image(json["source_image"])
                        if json.get("source_image")
                        else None
                    ),
                    guidance_image=(
                        b64_to_image(json["guidance_image"])
                        if json.get("guidance_image")
                        else None
                    ),
                    params=json["params"],
                    count=json["count"],
                    slots=tuple(json["slots"]),
                )
                resp = served.generate(req)
                return FakeResponse(
                    {
                        "images": [image_to_b64(i) for i in resp.images],
                        "metadata": resp.metadata,
                    }
                )

        remote = RemoteBackend("http://example.test/generate", session=FakeSession())
        out = remote.generate(
            GenerationRequest(
                mode=MODE_TXT2IMG, prompt="a dog", params={"seed": 5}, count=2
            )
        )
        local = served.generate(
            GenerationRequest(
                mode=MODE_TXT2IMG, prompt="a dog", params={"seed": 5}, count=2
            )
        )
        for a, b in zip(out.images, local.images):
            assert np.array_equal(np.asarray(a), np.asarray(b))
