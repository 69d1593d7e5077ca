from __future__ import annotations

import numpy as np
import pytest

from warpkit.correspondence import (
    Correlation,
    FlowDirection,
    FlowField,
    brute_force_match,
    descriptor_sweep,
    directional_correlation,
    extract_flow,
    match_descriptors,
    modal_displacement,
    pck,
    symmetric_correlation,
)
from warpkit.errors import BranchError, MetricError, ParamError, UsageError
from warpkit.masking import Mask, MaskKind
from warpkit.mmdit import MMDiT, TraceOptions, extract_descriptors, tokenize
from warpkit.numerics import SeededRng
from warpkit.scenes import Scene, SceneParams, make_scene

GEN, REF = FlowDirection.GEN_TO_REF, FlowDirection.REF_TO_GEN


def _shift_permutation(rows: int, cols: int, shift: tuple[int, int]) -> np.ndarray:
    matrix = np.zeros((rows * cols, rows * cols))
    for r in range(rows):
        for c in range(cols):
            target = ((r + shift[0]) % rows) * cols + (c + shift[1]) % cols
            matrix[r * cols + c, target] = 1.0
    return matrix


def test_self_match_is_diagonal_dominant() -> None:
    eye = np.eye(16) * 4.0
    corr = directional_correlation(eye, eye, (4, 4))
    matrix = corr.matrices[0]
    assert (np.argmax(matrix, axis=1) == np.arange(16)).all()


def test_constant_descriptors_give_uniform_rows() -> None:
    corr = directional_correlation(np.ones((16, 8)), np.ones((16, 8)), (4, 4))
    assert np.allclose(corr.matrices, 1.0 / 16, atol=1e-12)


def test_correlation_rows_are_stochastic() -> None:
    rng = SeededRng(seed=0)
    query, key = rng.normal((32, 8), dtype=np.float64), rng.normal((32, 8), dtype=np.float64)
    corr = directional_correlation(query, key, (4, 4))
    assert corr.frames == 2
    assert np.allclose(corr.matrices.sum(axis=-1), 1.0, atol=1e-5)


def test_branches_must_have_equal_frame_counts() -> None:
    with pytest.raises(BranchError):
        directional_correlation(np.ones((32, 4)), np.ones((16, 4)), (4, 4))


def test_symmetric_map_of_consistent_pair_is_the_forward_map() -> None:
    rng = SeededRng(seed=1)
    forward = Correlation(matrices=rng.uniform((2, 4, 4), dtype=np.float64), grid=(2, 2))
    backward = Correlation(matrices=np.transpose(forward.matrices, (0, 2, 1)), grid=(2, 2))
    combined = symmetric_correlation(forward, backward)
    assert np.array_equal(combined.matrices, forward.matrices)
    assert combined.symmetric


def test_symmetric_map_by_hand() -> None:
    forward = Correlation(matrices=np.eye(2)[None], grid=(1, 2))
    backward = Correlation(matrices=np.array([[[0.0, 1.0], [1.0, 0.0]]]), grid=(1, 2))
    combined = symmetric_correlation(forward, backward)
    assert np.array_equal(combined.matrices[0], np.full((2, 2), 0.5))


def test_symmetric_entries_stay_in_unit_interval() -> None:
    rng = SeededRng(seed=2)
    a, b, c, d = (rng.normal((16, 4), dtype=np.float64) for _ in range(4))
    forward = directional_correlation(a, b, (4, 4))
    backward = directional_correlation(c, d, (4, 4))
    combined = symmetric_correlation(forward, backward).matrices
    assert combined.min() >= 0.0 and combined.max() <= 1.0


def test_identity_dominant_map_gives_zero_flow() -> None:
    corr = Correlation(matrices=(np.eye(16) * 0.9 + 0.005)[None], grid=(4, 4))
    for direction in (GEN, REF):
        assert not extract_flow(corr, direction).displacement.any()


def test_shift_permutation_gives_uniform_toroidal_displacement() -> None:
    corr = Correlation(matrices=_shift_permutation(4, 4, (2, 1))[None], grid=(4, 4))
    displacement = extract_flow(corr, GEN).displacement
    assert ((displacement[..., 0] % 4) == 2).all()
    assert ((displacement[..., 1] % 4) == 1).all()
    backward = extract_flow(corr, REF).displacement
    assert ((backward[..., 0] % 4) == 2).all()
    assert ((backward[..., 1] % 4) == 3).all()


def test_extract_flow_matches_exhaustive_scan() -> None:
    rng = SeededRng(seed=3)
    for _ in range(100):
        raw = rng.uniform((2, 9, 9), dtype=np.float64)
        raw[0, 0, :2] = 2.0
        corr = Correlation(matrices=raw / raw.sum(axis=-1, keepdims=True), grid=(3, 3))
        for direction in (GEN, REF):
            assert np.array_equal(extract_flow(corr, direction).match, brute_force_match(corr, direction).match)


def test_pck_of_perfect_prediction_is_one() -> None:
    flow = FlowField.from_displacement(np.ones((1, 4, 4, 2), dtype=np.int64), GEN)
    fg = Mask.ones((1, 4, 4), MaskKind.FOREGROUND)
    assert pck(flow, flow, fg) == 1.0


def test_pck_counts_one_wrong_token_of_four() -> None:
    truth = FlowField.identity((1, 4, 4), GEN)
    displacement = np.zeros((1, 4, 4, 2), dtype=np.int64)
    displacement[0, 1, 1] = (1, 1)
    predicted = FlowField.from_displacement(displacement, GEN)
    values = np.zeros((1, 4, 4), dtype=bool)
    values[0, 1:3, 1:3] = True
    assert pck(predicted, truth, Mask(values=values, kind=MaskKind.FOREGROUND)) == 0.75


def test_pck_rejects_bad_inputs() -> None:
    flow = FlowField.identity((1, 4, 4), GEN)
    fg = Mask.ones((1, 4, 4), MaskKind.FOREGROUND)
    with pytest.raises(ParamError):
        pck(flow, flow, fg, alpha=0.0)
    with pytest.raises(MetricError):
        pck(flow, flow, Mask.zeros((1, 4, 4), MaskKind.FOREGROUND))
    with pytest.raises(UsageError):
        pck(flow, FlowField.identity((1, 4, 4), REF), fg)


def test_flow_rows_list_every_token() -> None:
    flow = FlowField.from_displacement(np.ones((2, 2, 3, 2), dtype=np.int64), GEN)
    rows = flow.rows()
    assert len(rows) == 12
    assert rows[0] == (0, 0, 0, 1, 1)
    assert flow.global_indices().max() < 12


def _branch_descriptors(model: MMDiT, scene: Scene, kind: str):
    ids = tokenize("a photo of <sks>", model.config)
    layer = 3
    options = TraceOptions.of([layer])
    gen = model.forward(scene.latent(model.dtype), ids, 0.8, trace=options).trace
    ref = model.forward(scene.reference_latent(model.dtype), ids, 0.8, trace=options).trace
    return match_descriptors(extract_descriptors(gen, layer, kind), extract_descriptors(ref, layer, kind))


def _shifted_scene() -> Scene:
    return make_scene(3, SceneParams(velocity=(0, 0), start_offset=(3, 0)))


def test_rotary_bias_pins_raw_query_key_matches(identity_model: MMDiT) -> None:
    scene = _shifted_scene()
    rotated = _branch_descriptors(identity_model, scene, "qk")
    modal, _ = modal_displacement(rotated.gen_to_ref, scene.truth().mask)
    assert modal == (0, 0)


def test_rope_free_descriptors_recover_the_sprite_shift(identity_model: MMDiT) -> None:
    scene = _shifted_scene()
    truth = scene.truth()
    assert (truth.flow.displacement[truth.mask.values] == (-3, 0)).all()
    free = _branch_descriptors(identity_model, scene, "qk_ropefree")
    correct = (free.gen_to_ref.displacement == truth.flow.displacement).all(axis=-1)
    assert correct[truth.mask.values].mean() >= 0.8


def test_descriptor_sweep_covers_every_cell(identity_model: MMDiT, scene: Scene, tmp_path) -> None:
    report = descriptor_sweep(scene, identity_model)
    assert len(report) == 8 * 3 * 4
    for layer in range(8):
        assert report.cell(layer, "intermediate", 10).valid
    assert report.mean_pck("qk_ropefree") >= report.mean_pck("qk")
    layer, kind, score = report.best()
    assert 0 <= layer < 8 and 0.0 <= score <= 1.0
    path = report.to_csv(tmp_path / "pck.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "layer,kind,timestep,pck,fg_count"
    assert len(lines) == 97
    assert {line.split(",")[1] for line in lines[1:]} == {"intermediate", "qk", "qk_ropefree"}
