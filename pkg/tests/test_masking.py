from __future__ import annotations

import numpy as np
import pytest

from warpkit.correspondence import FlowDirection, FlowField
from warpkit.errors import ConfigError, ShapeError, TraceError, UsageError
from warpkit.masking import (
    Mask,
    MaskConfig,
    MaskKind,
    SubjectAttention,
    combine,
    cycle_error,
    cycle_mask,
    foreground_mask,
    threshold_map,
    write_pgm,
)
from warpkit.mmdit import ForwardTrace, LayerTrace

LATTICE = (1, 4, 4)
N_VIDEO = 16
TEXT_LEN = 2
SUBJECT = 1


def _trace(subject_column: np.ndarray, layers: tuple[int, ...] = (0,)) -> ForwardTrace:
    """Trace whose video rows put ``subject_column`` on the subject token, rest spread evenly."""
    length = N_VIDEO + TEXT_LEN
    probs = np.zeros((2, length, length))
    rest = (1.0 - subject_column) / (length - 1)
    probs[:, :N_VIDEO, :] = rest[None, :, None]
    probs[:, :N_VIDEO, N_VIDEO + SUBJECT] = subject_column
    zeros = np.zeros((length, 8))
    trace = ForwardTrace(n_video=N_VIDEO, text_len=TEXT_LEN, lattice=LATTICE, subject_index=SUBJECT)
    for layer in layers:
        trace.record(LayerTrace(layer, zeros, zeros, zeros, zeros, zeros, probs, zeros, zeros))
    return trace


def _block_attention() -> np.ndarray:
    column = np.full(N_VIDEO, 0.1)
    column[[5, 6, 9, 10]] = 0.9
    return column


def test_default_thresholds() -> None:
    cfg = MaskConfig()
    assert (cfg.tau_fg, cfg.tau_cc, cfg.mode) == (0.3, 0.1, "normalized")
    with pytest.raises(ConfigError):
        MaskConfig(tau_fg=1.5)
    with pytest.raises(ConfigError):
        MaskConfig(tau_cc=0.0)


def test_foreground_follows_subject_attention() -> None:
    traces = {0: _trace(_block_attention()), 1: _trace(_block_attention())}
    mask = foreground_mask(traces)
    assert mask.kind is MaskKind.FOREGROUND
    assert not mask.degenerate
    assert np.flatnonzero(mask.flat()).tolist() == [5, 6, 9, 10]


def test_raw_mode_thresholds_the_attention_mass() -> None:
    mask = foreground_mask([_trace(_block_attention())], MaskConfig(mode="raw"))
    assert mask.count == 4
    faint = foreground_mask([_trace(_block_attention() * 0.2)], MaskConfig(mode="raw"))
    assert faint.count == 0
    assert not faint.degenerate


def test_uniform_attention_gives_a_degenerate_empty_mask() -> None:
    mask = foreground_mask([_trace(np.full(N_VIDEO, 1.0 / (N_VIDEO + TEXT_LEN)))])
    assert mask.degenerate
    assert mask.count == 0


def test_aggregation_averages_steps_and_layers() -> None:
    record = SubjectAttention(lattice=LATTICE)
    low = np.zeros(N_VIDEO)
    record.add(0, _trace(_block_attention(), layers=(0, 1)))
    record.add(1, _trace(low))
    assert len(record) == 2
    assert np.allclose(record.mean(), _block_attention() / 2)
    assert np.allclose(record.mean([0]), _block_attention())
    with pytest.raises(TraceError):
        SubjectAttention(lattice=LATTICE).mean()
    with pytest.raises(TraceError):
        foreground_mask([])


def test_configured_steps_restrict_the_average() -> None:
    traces = {0: _trace(_block_attention()), 3: _trace(np.zeros(N_VIDEO))}
    assert foreground_mask(traces, MaskConfig(steps=(0,))).count == 4
    assert foreground_mask(traces, MaskConfig(steps=(3,))).degenerate


def test_rethresholding_a_mask_is_idempotent() -> None:
    mask = foreground_mask([_trace(_block_attention())])
    again = threshold_map(mask.values.astype(float), LATTICE, MaskConfig())
    assert np.array_equal(again.values, mask.values)
    with pytest.raises(ShapeError):
        threshold_map(np.zeros(10), LATTICE, MaskConfig())


def test_inverse_flows_have_zero_cycle_error() -> None:
    shift = np.zeros((1, 4, 4, 2), dtype=np.int64)
    shift[..., 0] = 1
    forward = FlowField.from_displacement(shift, FlowDirection.GEN_TO_REF)
    backward = FlowField.from_displacement(-shift, FlowDirection.REF_TO_GEN)
    assert not cycle_error(forward, backward).data.any()
    identity = FlowField.identity(LATTICE, FlowDirection.GEN_TO_REF)
    assert not cycle_error(identity, FlowField.identity(LATTICE, FlowDirection.REF_TO_GEN)).data.any()


def test_one_sided_shift_costs_one_token() -> None:
    shift = np.zeros((1, 4, 4, 2), dtype=np.int64)
    shift[..., 0] = 1
    forward = FlowField.from_displacement(shift, FlowDirection.GEN_TO_REF)
    error = cycle_error(forward, FlowField.identity(LATTICE, FlowDirection.REF_TO_GEN), toroidal=True)
    assert error.dtype == np.float64
    assert np.array_equal(error.data, np.ones(LATTICE))


def test_border_round_trip_spans_the_lattice_when_not_wrapped() -> None:
    shift = np.zeros((1, 4, 4, 2), dtype=np.int64)
    shift[..., 0] = 1
    forward = FlowField.from_displacement(shift, FlowDirection.GEN_TO_REF)
    error = cycle_error(forward, FlowField.identity(LATTICE, FlowDirection.REF_TO_GEN)).data
    assert np.array_equal(error[:, :3], np.ones((1, 3, 4)))
    # bottom row lands on the top row
    assert np.array_equal(error[:, 3], np.full((1, 4), 3.0))
    wrapped = cycle_error(forward, FlowField.identity(LATTICE, FlowDirection.REF_TO_GEN), toroidal=True).data
    assert np.array_equal(wrapped[:, 3], np.ones((1, 4)))


def test_cycle_error_needs_opposite_directions() -> None:
    flow = FlowField.identity(LATTICE, FlowDirection.GEN_TO_REF)
    with pytest.raises(UsageError):
        cycle_error(flow, flow)


def test_cycle_threshold_scales_with_the_foreground() -> None:
    lattice = (1, 8, 8)
    fg_values = np.zeros(lattice, dtype=bool)
    fg_values[0, :4, :4] = True
    foreground = Mask(values=fg_values, kind=MaskKind.FOREGROUND)
    error = np.full(lattice, 1.0)
    error[0, :2] = 0.0
    error[0, 2, :] = 0.25
    mask = cycle_mask(error, foreground, MaskConfig(tau_cc=0.1))
    assert mask.kind is MaskKind.CYCLE
    assert np.array_equal(mask.values, error == 0.0)
    assert combine(foreground, mask).count == 8


def test_empty_foreground_passes_no_cycle_tokens() -> None:
    foreground = Mask.zeros(LATTICE, MaskKind.FOREGROUND)
    assert cycle_mask(np.zeros(LATTICE), foreground).count == 0


def test_combine_is_an_intersection() -> None:
    fg_values = np.zeros(LATTICE, dtype=bool)
    fg_values[0, 1:3, 1:3] = True
    foreground = Mask(values=fg_values, kind=MaskKind.FOREGROUND)
    assert np.array_equal(combine(foreground, Mask.ones(LATTICE, MaskKind.CYCLE)).values, fg_values)
    disjoint = Mask(values=~fg_values, kind=MaskKind.CYCLE)
    assert combine(foreground, disjoint).count == 0
    partial = Mask(values=np.eye(4, dtype=bool)[None], kind=MaskKind.CYCLE)
    merged = combine(foreground, partial)
    assert merged.kind is MaskKind.COMBINED
    assert merged.count <= min(foreground.count, partial.count)
    with pytest.raises(ShapeError):
        combine(foreground, Mask.ones((1, 2, 2), MaskKind.CYCLE))


def test_masks_write_one_graymap_per_frame(tmp_path) -> None:
    values = np.zeros((2, 2, 3), dtype=bool)
    values[1, 0, 2] = True
    paths = write_pgm(Mask(values=values, kind=MaskKind.COMBINED), tmp_path, "mask")
    assert [p.name for p in paths] == ["mask_f00.pgm", "mask_f01.pgm"]
    assert paths[1].read_text() == "P2\n3 2\n1\n0 0 1\n0 0 0\n"
