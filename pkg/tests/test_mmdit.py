from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from warpkit.errors import ConfigError, InjectionError, InputError, ShapeError, TraceError
from warpkit.mmdit import (
    PAD_ID,
    SUBJECT_ID,
    AttentionPatch,
    DescriptorKind,
    MMDiT,
    ModelConfig,
    RopeFrequencies,
    TraceOptions,
    apply_rope,
    checksum,
    extract_descriptors,
    joint_attention,
    lattice_positions,
    load_model,
    merge_heads,
    patchify,
    save_model,
    subject_index,
    tokenize,
    unpatchify,
)
from warpkit.numerics import SeededRng, Tensor

PROMPT = "a photo of <sks>"


def _latent(model: MMDiT, seed: int = 0) -> Tensor:
    return SeededRng(seed=seed).normal_tensor(model.config.latent_shape(), dtype=model.dtype)


def test_zero_latent_gives_zero_tokens() -> None:
    cfg = ModelConfig()
    tokens = patchify(Tensor(np.zeros(cfg.latent_shape()), dtype=np.float64), cfg)
    assert tokens.shape == (cfg.video_tokens, cfg.patch_dim)
    assert not tokens.data.any()


def test_lattice_positions_enumerate_frame_row_col() -> None:
    positions = lattice_positions(1, 2, 2)
    assert positions.tolist() == [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1]]


def test_patchify_round_trip_is_exact() -> None:
    cfg = ModelConfig()
    latent = SeededRng(seed=5).normal_tensor(cfg.latent_shape(), dtype=np.float64)
    restored = unpatchify(patchify(latent, cfg), cfg.frames, cfg)
    assert np.array_equal(restored.data, latent.data)


def test_patchify_rejects_wrong_frame_shape() -> None:
    cfg = ModelConfig()
    with pytest.raises(ShapeError):
        patchify(Tensor(np.zeros((4, 8, 8, 4))), cfg)


def test_rope_zero_position_is_identity() -> None:
    rope = RopeFrequencies(split=(6, 6, 4))
    x = Tensor(SeededRng(seed=1).normal((1, 1, 16), dtype=np.float64))
    q, k = apply_rope(x, x, np.zeros((1, 3), dtype=np.int64), rope)
    assert np.allclose(q.data, x.data, atol=0.0)
    assert np.allclose(k.data, x.data, atol=0.0)


def _rotated_dot(q: np.ndarray, k: np.ndarray, p_q: tuple[int, int, int], p_k: tuple[int, int, int]) -> float:
    rope = RopeFrequencies(split=(6, 6, 4))
    q2 = Tensor(np.stack([q, q])[None])
    k2 = Tensor(np.stack([k, k])[None])
    rq, rk = apply_rope(q2, k2, np.array([p_q, p_k]), rope)
    return float(rq.data[0, 0] @ rk.data[0, 1])


def test_rope_same_position_preserves_dot_product() -> None:
    rng = SeededRng(seed=2)
    q, k = rng.normal((16,), dtype=np.float64), rng.normal((16,), dtype=np.float64)
    assert abs(_rotated_dot(q, k, (1, 3, 2), (1, 3, 2)) - float(q @ k)) < 1e-5


def test_rope_dot_product_depends_only_on_offset() -> None:
    rng = SeededRng(seed=3)
    q, k = rng.normal((16,), dtype=np.float64), rng.normal((16,), dtype=np.float64)
    first = _rotated_dot(q, k, (0, 1, 2), (2, 3, 1))
    second = _rotated_dot(q, k, (1, 4, 5), (3, 6, 4))
    assert abs(first - second) < 1e-5


def test_single_token_attention_returns_its_value() -> None:
    v = Tensor(np.array([[[0.3, -1.2, 4.0]]]))
    out, probs = joint_attention(Tensor(np.ones((1, 1, 3))), Tensor(np.ones((1, 1, 3))), v)
    assert np.array_equal(out.data, v.data)
    assert probs.data.item() == 1.0


def test_attention_rows_are_stochastic_in_every_layer(random_model: MMDiT) -> None:
    ids = tokenize(PROMPT, random_model.config)
    trace = random_model.forward(_latent(random_model), ids, 0.5, trace=TraceOptions.of(None)).trace
    assert sorted(trace.layers) == list(range(random_model.config.layers))
    for snapshot in trace.layers.values():
        assert np.allclose(snapshot.probs.sum(axis=-1), 1.0, atol=1e-5)


def test_tracing_never_changes_the_prediction(random_model: MMDiT) -> None:
    ids = tokenize(PROMPT, random_model.config)
    latent = _latent(random_model, seed=4)
    plain = random_model.forward(latent, ids, 0.3).output
    traced = random_model.forward(latent, ids, 0.3, trace=TraceOptions.of([1, 5])).output
    assert np.array_equal(plain.data, traced.data)


def test_no_op_value_override_is_bit_identical(random_model: MMDiT) -> None:
    ids = tokenize(PROMPT, random_model.config)
    latent = _latent(random_model, seed=6)
    baseline = random_model.forward(latent, ids, 0.7).output

    def same_values(layer: int, state) -> AttentionPatch:
        return AttentionPatch(video_values=merge_heads(state.v).data[: state.n_video])

    patched = random_model.forward(latent, ids, 0.7, override=same_values).output
    assert np.array_equal(patched.data, baseline.data)


def test_misshaped_output_override_is_rejected(random_model: MMDiT) -> None:
    ids = tokenize(PROMPT, random_model.config)

    def broken(layer: int, state) -> AttentionPatch:
        return AttentionPatch(output=np.zeros((3, random_model.config.dim)))

    with pytest.raises(InjectionError):
        random_model.forward(_latent(random_model), ids, 0.5, override=broken)


def test_descriptors_match_trace_bit_exactly(random_model: MMDiT) -> None:
    cfg = random_model.config
    ids = tokenize(PROMPT, cfg)
    trace = random_model.forward(_latent(random_model), ids, 0.5, trace=TraceOptions.of([2])).trace
    snapshot = trace.layer(2)
    free = extract_descriptors(trace, 2, DescriptorKind.QK_ROPEFREE)
    rotated = extract_descriptors(trace, 2, "qk")
    assert np.array_equal(free.query, snapshot.q[: cfg.video_tokens])
    assert np.array_equal(free.key, snapshot.k[: cfg.video_tokens])
    assert np.array_equal(rotated.query, snapshot.q_rope[: cfg.video_tokens])
    assert np.array_equal(rotated.key, snapshot.k_rope[: cfg.video_tokens])
    assert free.query.shape == (256, 64)
    assert extract_descriptors(trace, 2, "intermediate").query.shape == (256, 64)


def test_descriptors_need_a_traced_layer(random_model: MMDiT) -> None:
    ids = tokenize(PROMPT, random_model.config)
    trace = random_model.forward(_latent(random_model), ids, 0.5, trace=TraceOptions.of([0])).trace
    with pytest.raises(TraceError):
        extract_descriptors(trace, 1, "qk")
    with pytest.raises(TraceError):
        extract_descriptors(None, 0, "qk")


def test_content_identity_model_predicts_zero_noise(identity_model: MMDiT) -> None:
    ids = tokenize(PROMPT, identity_model.config)
    out = identity_model.forward(_latent(identity_model), ids, 0.4).output
    assert not out.data.any()


def test_content_identity_needs_two_heads() -> None:
    cfg = ModelConfig(heads=1, rope_split=(24, 24, 16), init="content_identity")
    with pytest.raises(ConfigError):
        MMDiT.initialize(cfg)


def test_model_config_rejects_bad_shapes() -> None:
    with pytest.raises(ConfigError):
        ModelConfig(dim=63)
    with pytest.raises(ConfigError):
        ModelConfig(rope_split=(4, 6, 4))
    with pytest.raises(ValidationError):
        ModelConfig(unknown=1)


def test_tokenize_pads_and_maps_subject() -> None:
    cfg = ModelConfig()
    ids = tokenize(PROMPT, cfg)
    assert ids.shape == (cfg.text_len,)
    assert ids[3] == SUBJECT_ID
    assert (ids[4:] == PAD_ID).all()
    assert subject_index(ids) == 3
    assert np.array_equal(tokenize(PROMPT, cfg), ids)


def test_subject_index_requires_exactly_one_subject() -> None:
    cfg = ModelConfig()
    with pytest.raises(InputError):
        subject_index(tokenize("a photo of a dog", cfg))
    with pytest.raises(InputError):
        subject_index(tokenize("<sks> and <sks>", cfg))


def test_model_save_load_round_trip(tmp_path, random_model: MMDiT) -> None:
    save_model(random_model, tmp_path / "model")
    restored = load_model(tmp_path / "model")
    assert restored.config == random_model.config
    assert checksum(restored.weights) == checksum(random_model.weights)
    assert restored.dtype == np.float64
