import numpy as np
import pytest

from evclip import checkpoint, nn
from evclip.encoders import (
    AdapterParams,
    adapter_apply,
    encode_event,
    encode_image,
    encode_prompts,
    encode_text,
    fit_adapter,
    init_event_encoder,
    new_image_encoder,
    new_text_encoder,
    tokenize,
)
from evclip.errors import DataError, DimensionError
from oracles import central_difference, unit_rows


@pytest.fixture(scope="module")
def image():
    return new_image_encoder(seed=7).freeze()


def test_encode_image_contract(image, rng):
    x = rng.random((100, 32, 32))
    e = encode_image(image, x)
    np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(encode_image(image, x[3]), encode_image(image, x[3]))
    with pytest.raises(DimensionError):
        encode_image(image, rng.random((31, 32)))


def test_one_pixel_changes_the_embedding(image, rng):
    x = rng.random((32, 32))
    y = x.copy()
    y[10, 20] += 0.5
    assert not np.array_equal(encode_image(image, x), encode_image(image, y))


def test_batch_equals_single(image, rng):
    x = rng.random((5, 32, 32))
    np.testing.assert_allclose(encode_image(image, x)[2], encode_image(image, x[2]), atol=1e-12)


def test_event_copy_is_exact_and_isolated(image, rng):
    ev = init_event_encoder(image)
    assert ev.role == "event" and not ev.frozen
    for k in image.params:
        assert ev.params[k].tobytes() == image.params[k].tobytes()
    x = rng.random((50, 32, 32))
    assert encode_event(ev, x).tobytes() == encode_image(image, x).tobytes()
    before = image.checksum()
    ev.params["proj.W"] += 1.0
    assert image.checksum() == before
    frames = rng.random((100, 32, 32)) * 0.99
    np.testing.assert_allclose(np.linalg.norm(encode_event(ev, frames), axis=1), 1.0, atol=1e-6)


def test_roles_are_enforced(image):
    with pytest.raises(ValueError):
        encode_event(image, np.zeros((32, 32)))
    with pytest.raises(ValueError):
        init_event_encoder(new_text_encoder())


def test_frozen_arrays_are_read_only(image):
    with pytest.raises(ValueError):
        image.params["patch.W"][0, 0] = 1.0


def test_text_encoder_contract(rng):
    text = new_text_encoder(seed=1)
    a = encode_prompts(text, ["a photo of solid circle"])[0]
    np.testing.assert_array_equal(a, encode_prompts(text, ["a photo of solid circle"])[0])
    seqs = [rng.integers(0, text.arch.vocab, size=int(rng.integers(1, 8))) for _ in range(50)]
    np.testing.assert_allclose(np.linalg.norm(encode_text(text, seqs), axis=1), 1.0, atol=1e-6)
    with pytest.raises(DataError):
        encode_text(text, [])
    with pytest.raises(DataError):
        encode_text(text, [text.arch.vocab])


def test_tokenize_is_stable():
    assert tokenize("A Photo", 512).tolist() == tokenize("a photo", 512).tolist()
    assert len(tokenize("a photo of x", 512)) == 4


def test_trained_teacher_separates_class_words(teacher):
    _, text = teacher
    e = encode_prompts(text, ["a photo of solid circle", "a photo of solid square"])
    assert not np.allclose(e[0], e[1])


def test_adapter_examples(rng):
    e = unit_rows(rng, 10, 6)
    np.testing.assert_allclose(adapter_apply(AdapterParams(np.eye(6)), e), e, atol=1e-12)
    b = rng.normal(size=4)
    out = adapter_apply(AdapterParams(np.zeros((4, 6)), b), e)
    np.testing.assert_allclose(out, np.tile(b / np.linalg.norm(b), (10, 1)), atol=1e-12)
    a = AdapterParams(rng.normal(size=(9, 6)), rng.normal(size=9))
    np.testing.assert_allclose(np.linalg.norm(adapter_apply(a, e), axis=1), 1.0, atol=1e-12)
    with pytest.raises(DimensionError):
        adapter_apply(a, unit_rows(rng, 2, 5))


def test_fit_adapter_recovers_affine_map(rng):
    W, b = rng.normal(size=(5, 6)), rng.normal(size=5)
    src = rng.normal(size=(40, 6))
    a = fit_adapter(src, src @ W.T + b, ridge=0.0)
    np.testing.assert_allclose(a.weight, W, atol=1e-9)
    np.testing.assert_allclose(a.bias, b, atol=1e-9)


def small_arch():
    return nn.VisionArch(image_size=8, patch=4, width=8, depth=2, heads=2, mlp_ratio=2, z=6)


def test_vision_backward_matches_finite_differences(rng):
    arch = small_arch()
    params = nn.init_vision(arch, rng)
    x = rng.random((2, 8, 8))
    w = rng.normal(size=(2, arch.z))

    def f():
        return float(np.sum(nn.vision_forward(params, arch, x)[0] * w))

    _, cache = nn.vision_forward(params, arch, x)
    grads = nn.vision_backward(params, arch, cache, w)
    for name, g in grads.items():
        for idx in list(np.ndindex(g.shape))[:12]:
            fd = central_difference(f, params, name, idx)
            assert abs(fd - g[idx]) <= 1e-6 * max(1.0, abs(fd)), name


def test_text_backward_matches_finite_differences(rng):
    arch = nn.TextArch(vocab=16, width=5, z=4)
    params = nn.init_text(arch, rng)
    seqs = [np.array([1, 3, 3]), np.array([7])]
    w = rng.normal(size=(2, arch.z))

    def f():
        return float(np.sum(nn.text_forward(params, arch, seqs)[0] * w))

    _, cache = nn.text_forward(params, arch, seqs)
    grads = nn.text_backward(params, arch, cache, w)
    for name, g in grads.items():
        for idx in list(np.ndindex(g.shape))[:20]:
            fd = central_difference(f, params, name, idx)
            assert abs(fd - g[idx]) <= 1e-6 * max(1.0, abs(fd)), name


def test_checkpoint_round_trip_is_bit_exact(tmp_path, image):
    text = new_text_encoder(seed=2).freeze()
    checkpoint.save_teacher(tmp_path / "t.ck", image, text, {"note": "x"})
    raw = (tmp_path / "t.ck").read_bytes()
    img2, txt2 = checkpoint.load_teacher(tmp_path / "t.ck")
    assert img2.frozen and txt2.frozen
    assert img2.checksum() == image.checksum() and txt2.checksum() == text.checksum()
    checkpoint.save_teacher(tmp_path / "t2.ck", img2, txt2, {"note": "x"})
    assert (tmp_path / "t2.ck").read_bytes() == raw


def test_checkpoint_rejects_corruption(tmp_path, image):
    buf = bytearray(checkpoint.dumps({"image": image}))
    with pytest.raises(DataError, match="magic"):
        checkpoint.loads(b"XXXX" + bytes(buf[4:]))
    bad = bytearray(buf)
    bad[4] = 9
    with pytest.raises(DataError, match="version"):
        checkpoint.loads(bytes(bad))
    bad = bytearray(buf)
    bad[-3] ^= 0xFF
    with pytest.raises(DataError, match="(?i)crc|corrupt"):
        checkpoint.loads(bytes(bad))
