import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taylorskel.skeleton_data import SkeletonSequence
from taylorskel.taylor import (
    InsufficientFramesError, TaylorConfig, displacement, forward_differences, motion_field_to_dict,
    motion_magnitude, taylor_transform,
)

from oracles import naive_taylor


def track(values, joint=0, coord=0, bodies=2):
    x = np.zeros((len(values), bodies, 25, 3))
    x[:, 0, joint, coord] = values
    return x


def test_difference_of_constant():
    x = np.repeat(np.random.default_rng(0).normal(size=(1, 2, 25, 3)), 6, axis=0)
    assert not forward_differences(x, 1).any()


def test_difference_of_linear_track():
    x = track(np.arange(8.0))
    assert np.all(forward_differences(x, 1)[:, 0, 0, 0] == 1.0)
    assert not forward_differences(x, 2).any()


def test_second_difference_of_square():
    d = forward_differences(track(np.arange(5.0) ** 2), 2)
    assert d.shape[0] == 3
    assert np.all(d[:, 0, 0, 0] == 2.0)


def test_difference_needs_frames():
    with pytest.raises(InsufficientFramesError):
        forward_differences(np.zeros((2, 2, 25, 3)), 2)


def test_constant_is_fixed_point():
    frame = np.random.default_rng(1).normal(size=(2, 25, 3))
    seq = SkeletonSequence(np.repeat(frame[None], 9, axis=0))
    for cfg in (TaylorConfig(), TaylorConfig(3, 2, 2), TaylorConfig(2, 1, 1)):
        out = taylor_transform(seq, cfg)
        assert np.array_equal(out.frames, np.repeat(frame[None], out.num_frames, axis=0))


def test_linear_track_gains_one():
    out = taylor_transform(track(np.arange(8.0)), TaylorConfig(4, 1, 1))
    assert out[:, 0, 0, 0].tolist() == [t + 1.0 for t in range(5)]


def test_output_length():
    assert taylor_transform(np.zeros((10, 2, 25, 3))).shape[0] == 7
    assert TaylorConfig(4, 3).output_length(10) == 3


def test_config_validation():
    with pytest.raises(ValueError):
        TaylorConfig(block_frames=4, order=4)
    with pytest.raises(ValueError):
        TaylorConfig(block_frames=1)
    with pytest.raises(ValueError):
        TaylorConfig(step=0)
    with pytest.raises(ValueError):
        TaylorConfig(mode="stack")


def test_too_short_sequence():
    with pytest.raises(InsufficientFramesError):
        taylor_transform(np.zeros((3, 2, 25, 3)), TaylorConfig(4))


def test_metadata_kept():
    seq = SkeletonSequence(np.zeros((6, 2, 25, 3)), label=3, subject_id=9, source_id="s")
    out = taylor_transform(seq)
    assert (out.label, out.subject_id, out.source_id) == (3, 9, "s")


def test_concat_channels():
    x = np.random.default_rng(2).normal(size=(8, 2, 25, 3))
    out = taylor_transform(x, TaylorConfig(mode="concat"))
    assert out.shape == (5, 2, 25, 6)
    np.testing.assert_array_equal(out[..., :3], x[:5])
    np.testing.assert_allclose(out[..., 3:], displacement(x, TaylorConfig()), atol=1e-15)


shapes = st.tuples(st.integers(4, 12), st.integers(2, 4), st.integers(1, 3), st.integers(1, 2))


@given(shapes, st.integers(0, 2**31 - 1), st.sampled_from(["replace", "concat"]))
@settings(max_examples=60, deadline=None)
def test_matches_naive_reference(shape, seed, mode):
    t, b, s, n = shape
    n = min(n, b - 1)
    x = np.random.default_rng(seed).normal(size=(t, 2, 4, 3))
    cfg = TaylorConfig(b, s, n, mode)
    np.testing.assert_allclose(taylor_transform(x, cfg), naive_taylor(x, b, s, n, mode), rtol=0, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(2, 9, 2, 25, 3))
    cfg = TaylorConfig(4, 1, 2)
    lhs = taylor_transform(a * x1 + b * x2, cfg)
    rhs = a * taylor_transform(x1, cfg) + b * taylor_transform(x2, cfg)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_translation_covariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 2, 25, 3))
    c = rng.normal(size=3)
    y = taylor_transform(x, TaylorConfig())
    np.testing.assert_allclose(taylor_transform(x + c, TaylorConfig()), y + c, atol=1e-12)
    cat = TaylorConfig(mode="concat")
    np.testing.assert_allclose(taylor_transform(x + c, cat)[..., 3:], taylor_transform(x, cat)[..., 3:], atol=1e-12)


def test_motion_of_static_pose_is_zero():
    x = np.repeat(np.random.default_rng(3).normal(size=(1, 2, 25, 3)), 7, axis=0)
    assert not motion_magnitude(x).magnitudes.any()


def test_motion_of_single_moving_joint():
    x = track(np.arange(8.0), joint=11)
    mags = motion_magnitude(x).magnitudes
    assert mags.shape == (5, 2, 25)
    assert np.all(mags[:, 0, 11] == 1.0)
    mags[:, 0, 11] = 0.0
    assert not mags.any()


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_motion_translation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(9, 2, 25, 3))
    np.testing.assert_allclose(motion_magnitude(x + rng.normal(size=3)).magnitudes,
                               motion_magnitude(x).magnitudes, atol=1e-12)


def test_motion_field_dict():
    seq = SkeletonSequence(track(np.arange(6.0)), source_id="abc")
    doc = motion_field_to_dict(motion_magnitude(seq), TaylorConfig())
    assert doc["source_id"] == "abc" and doc["block_frames"] == 4
    assert np.array(doc["magnitudes"]).shape == (3, 2, 25)
