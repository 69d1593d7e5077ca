from __future__ import annotations

import math

import numpy as np
import pytest

from warpkit.adaptation import (
    AdamState,
    AdapterTarget,
    CoarseTrainer,
    LoraAdapter,
    SubjectToken,
    TrainConfig,
    TrainResult,
    adamw_step,
    apply_lora,
    attach,
    init_adapters,
    load_adapters,
    parameter_checksums,
    save_adapters,
    train_coarse,
)
from warpkit.diffusion import Schedule, epsilon_loss
from warpkit.errors import ConfigError, InputError, WiringError
from warpkit.mmdit import MMDiT, ModelConfig, init_weights, layer_key, tokenize
from warpkit.numerics import SeededRng, Tensor, finite_diff_check

PROMPT = "a photo of <sks>"


def _reference(model: MMDiT, seed: int = 0) -> Tensor:
    return SeededRng(seed=seed).normal_tensor(model.config.latent_shape(1), dtype=model.dtype)


@pytest.fixture(scope="module")
def trained(small_model: MMDiT) -> TrainResult:
    cfg = TrainConfig(steps=100, batch=1, seed=11, noise="bank")
    return train_coarse(small_model, [_reference(small_model)], cfg)


def test_zero_up_factor_leaves_weight_unchanged() -> None:
    rng = SeededRng(seed=0)
    weight = Tensor(rng.normal((16, 16), dtype=np.float64))
    adapter = LoraAdapter.create(0, "key", 16, 4, rng, dtype=np.float64)
    assert np.array_equal(apply_lora(weight, adapter).data, weight.data)


def test_full_rank_negation_cancels_the_weight() -> None:
    weight = SeededRng(seed=1).normal((8, 8), dtype=np.float64)
    adapter = LoraAdapter(0, "value", down=Tensor(np.eye(8)), up=Tensor(-weight), scale=1.0)
    assert not apply_lora(Tensor(weight), adapter).data.any()


def test_update_rank_is_bounded_by_adapter_rank() -> None:
    rng = SeededRng(seed=2)
    weight = Tensor(rng.normal((16, 16), dtype=np.float64))
    adapter = LoraAdapter(
        0,
        "output",
        down=Tensor(rng.normal((3, 16), dtype=np.float64)),
        up=Tensor(rng.normal((16, 3), dtype=np.float64)),
        scale=0.5,
    )
    delta = apply_lora(weight, adapter).data - weight.data
    assert np.linalg.matrix_rank(delta) <= 3


def test_query_projection_cannot_be_adapted() -> None:
    with pytest.raises(ConfigError):
        AdapterTarget.parse("query")
    with pytest.raises(WiringError):
        LoraAdapter(0, "key", down=Tensor(np.zeros((2, 8))), up=Tensor(np.zeros((8, 3))))


def test_fresh_adapters_keep_the_forward_bit_identical(small_model: MMDiT) -> None:
    ids = tokenize(PROMPT, small_model.config)
    latent = SeededRng(seed=3).normal_tensor(small_model.config.latent_shape(), dtype=np.float64)
    view = attach(small_model, init_adapters(small_model, 8, seed=0), SubjectToken.from_model(small_model))
    base = small_model.forward(latent, ids, 0.5).output
    adapted = view.forward(latent, ids, 0.5).output
    assert np.array_equal(adapted.data, base.data)


def test_effective_key_weight_is_the_adapted_projection(small_model: MMDiT) -> None:
    rng = SeededRng(seed=4)
    dim = small_model.config.dim
    adapters = [
        LoraAdapter(
            layer,
            "key",
            down=Tensor(rng.normal((4, dim), dtype=np.float64)),
            up=Tensor(rng.normal((dim, 4), std=0.1, dtype=np.float64)),
        )
        for layer in range(small_model.config.layers)
    ]
    view = attach(small_model, adapters)
    for adapter in adapters:
        expected = apply_lora(small_model.weights[layer_key(adapter.layer, "k")], adapter)
        assert np.array_equal(view.effective_weight(adapter.layer, "k").data, expected.data)
        assert view.effective_weight(adapter.layer, "q") is small_model.weights[layer_key(adapter.layer, "q")]


def test_attach_rejects_duplicates_and_misfits(small_model: MMDiT) -> None:
    rng = SeededRng(seed=5)
    dim = small_model.config.dim
    first = LoraAdapter.create(0, "value", dim, 2, rng, dtype=np.float64)
    second = LoraAdapter.create(0, "value", dim, 2, rng, dtype=np.float64)
    with pytest.raises(ConfigError):
        attach(small_model, [first, second])
    with pytest.raises(WiringError):
        attach(small_model, [LoraAdapter.create(9, "value", dim, 2, rng, dtype=np.float64)])
    with pytest.raises(WiringError):
        attach(small_model, [LoraAdapter.create(0, "value", dim + 2, 2, rng, dtype=np.float64)])


def test_adamw_zero_gradient_without_decay_is_a_no_op() -> None:
    cfg = TrainConfig(weight_decay=0.0)
    param = np.array([0.5, -2.0])
    updated, state = adamw_step(param, np.zeros(2), AdamState.zeros_like(param), 0.1, cfg)
    assert np.array_equal(updated, param)
    assert state.step == 1


def test_adamw_first_step_moves_by_the_learning_rate() -> None:
    cfg = TrainConfig(weight_decay=0.0)
    param = np.array([1.0])
    updated, _ = adamw_step(param, np.array([1.0]), AdamState.zeros_like(param), 0.1, cfg)
    assert abs((updated[0] - 1.0) + 0.1) < 1e-7


def test_adamw_matches_a_scalar_reimplementation() -> None:
    cfg = TrainConfig()
    rng = SeededRng(seed=6)
    param = rng.normal((5,), dtype=np.float64)
    state = AdamState.zeros_like(param)
    expected = [float(x) for x in param]
    m = [0.0] * 5
    v = [0.0] * 5
    beta1, beta2 = cfg.betas
    lr = 1e-2
    for step in range(1, 51):
        grad = rng.normal((5,), dtype=np.float64)
        param, state = adamw_step(param, grad, state, lr, cfg)
        for i in range(5):
            g = float(grad[i])
            m[i] = beta1 * m[i] + (1 - beta1) * g
            v[i] = beta2 * v[i] + (1 - beta2) * g * g
            m_hat = m[i] / (1 - beta1**step)
            v_hat = v[i] / (1 - beta2**step)
            expected[i] = expected[i] * (1 - lr * cfg.weight_decay) - lr * m_hat / (math.sqrt(v_hat) + cfg.eps)
    assert np.max(np.abs(param - np.array(expected))) < 1e-7


def _gradcheck_model(seed: int) -> MMDiT:
    cfg = ModelConfig(layers=1, dim=32, heads=2, frames=1, grid_h=4, grid_w=4)
    weights = init_weights(cfg, seed=seed, precision="f64")
    weights["final"] = Tensor(weights["final"].data * 200.0)
    return MMDiT(cfg, weights)


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradient_matches_finite_differences(seed: int) -> None:
    model = _gradcheck_model(seed)
    cfg = model.config
    schedule = Schedule()
    rng = SeededRng(seed=100 + seed)
    x0 = rng.normal_tensor(cfg.latent_shape(1), dtype=np.float64)
    noise = rng.normal_tensor(cfg.latent_shape(1), dtype=np.float64)
    ids = tokenize(PROMPT, cfg)
    target = list(AdapterTarget)[seed % 3]
    params = [
        rng.normal((4, cfg.dim), std=0.1, dtype=np.float64),
        rng.normal((cfg.dim, 4), std=0.1, dtype=np.float64),
        model.weights["text_embed"].data[1].copy(),
    ]

    def objective(leaves: list[Tensor]) -> Tensor:
        adapter = LoraAdapter(0, target, down=leaves[0], up=leaves[1], scale=1.0)
        view = attach(model, [adapter], SubjectToken(embedding=leaves[2]))
        return epsilon_loss(view, x0, ids, 1 + seed * 2, noise, schedule)

    worst = finite_diff_check(objective, params, h=1e-5, coords=4, rng=SeededRng(seed=seed), atol=1e-4)
    assert worst < 1e-5


def test_training_reduces_the_loss(trained: TrainResult) -> None:
    losses = np.array(trained.losses)
    assert len(losses) == 100
    assert losses[-1] < losses[0]
    window = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(window) <= 1e-12)


def test_training_keeps_base_weights_frozen(small_model: MMDiT, trained: TrainResult) -> None:
    before = parameter_checksums(small_model)
    view = trained.attach_to(small_model)
    assert parameter_checksums(view) == before
    for layer in range(small_model.config.layers):
        query = small_model.weights[layer_key(layer, "q")]
        assert view.effective_weight(layer, "q") is query
    assert {a.target for a in trained.adapters} == set(AdapterTarget)
    assert any(a.up.data.any() for a in trained.adapters)
    assert not np.array_equal(trained.token.embedding.data, small_model.weights["text_embed"].data[1])


def test_zero_learning_rates_leave_parameters_untouched(small_model: MMDiT) -> None:
    cfg = TrainConfig(steps=3, batch=1, adapter_lr=0.0, token_lr=0.0, rank=4)
    result = train_coarse(small_model, [_reference(small_model)], cfg)
    fresh = init_adapters(small_model, 4, cfg.seed)
    for adapter, initial in zip(result.adapters, fresh):
        assert np.array_equal(adapter.down.data, initial.down.data)
        assert not adapter.up.data.any()
    assert np.array_equal(result.token.embedding.data, small_model.weights["text_embed"].data[1])
    assert len(set(result.losses)) == 1


def test_trainer_emits_one_event_per_step(small_model: MMDiT) -> None:
    trainer = CoarseTrainer(small_model, TrainConfig(steps=4, batch=1, rank=4))
    seen: list[tuple[int, float]] = []
    trainer.on("step", lambda step, loss: seen.append((step, loss)))
    result = trainer.run([_reference(small_model)])
    assert [step for step, _ in seen] == [0, 1, 2, 3]
    assert [loss for _, loss in seen] == result.losses


def test_trainer_needs_references_and_a_base_model(small_model: MMDiT, trained: TrainResult) -> None:
    with pytest.raises(InputError):
        train_coarse(small_model, [], TrainConfig(steps=1))
    with pytest.raises(InputError):
        CoarseTrainer(trained.attach_to(small_model), TrainConfig(steps=1))
    with pytest.raises(ConfigError):
        TrainConfig(prompt="a photo of a dog")


def test_rank_is_clipped_to_half_the_width() -> None:
    assert TrainConfig().effective_rank(32) == 16
    assert TrainConfig(rank=4).effective_rank(32) == 4


def test_adapter_save_load_round_trip(tmp_path, trained: TrainResult) -> None:
    save_adapters(tmp_path / "adapters", trained.adapters, trained.token, extra={"steps": 100})
    adapters, token, manifest = load_adapters(tmp_path / "adapters")
    assert manifest["steps"] == 100
    assert len(adapters) == len(trained.adapters)
    for loaded, original in zip(adapters, trained.adapters):
        assert (loaded.layer, loaded.target, loaded.scale) == (original.layer, original.target, original.scale)
        assert np.array_equal(loaded.up.data, original.up.data)
    assert np.array_equal(token.embedding.data, trained.token.embedding.data)
