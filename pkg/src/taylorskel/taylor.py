"""Taylor-transformed skeleton sequences.

For a block of ``B`` frames starting at ``t`` the transformed frame is

    y_t = x_t + sum_{n=1..N} mean(D^n over the block) / n!

where ``D^n`` is the n-th order forward difference restricted to frames
``[t, t + B)``. Blocks start every ``step`` frames, so the output holds
``(T - B) // step + 1`` frames, each labelled by its block's first frame.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .skeleton_data import SkeletonSequence

MODES = ("replace", "concat")


class InsufficientFramesError(ValueError):
    pass


@dataclass(frozen=True)
class TaylorConfig:
    block_frames: int = 4
    step: int = 1
    order: int = 1
    mode: str = "replace"

    def __post_init__(self):
        if self.block_frames < 2:
            raise ValueError("block_frames must be >= 2")
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if not 1 <= self.order <= self.block_frames - 1:
            raise ValueError(f"order must lie in [1, {self.block_frames - 1}] for block_frames={self.block_frames}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def output_length(self, num_frames):
        return (num_frames - self.block_frames) // self.step + 1


@dataclass(frozen=True, eq=False)
class MotionField:
    magnitudes: np.ndarray  # T' x M x V
    source_id: str = ""


def _frames(seq):
    return seq.frames if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)


def forward_differences(seq, n):
    """Order-``n`` forward difference along time: shape (T - n, ...)."""
    x = _frames(seq)
    if n < 1:
        raise ValueError("difference order must be >= 1")
    if x.shape[0] <= n:
        raise InsufficientFramesError(f"{x.shape[0]} frames cannot give order-{n} differences")
    return np.diff(x, n=n, axis=0)


def block_mean_differences(x, cfg):
    """Per-order block means: list of arrays of shape (T', M, V, C), orders 1..N."""
    x = _frames(x)
    t = x.shape[0]
    if t < cfg.block_frames:
        raise InsufficientFramesError(f"{t} frames is fewer than block_frames={cfg.block_frames}")
    starts = np.arange(cfg.output_length(t)) * cfg.step
    means = []
    for n in range(1, cfg.order + 1):
        d = np.diff(x, n=n, axis=0)
        win = sliding_window_view(d, cfg.block_frames - n, axis=0)
        means.append(win[starts].mean(axis=-1))
    return means


def displacement(seq, cfg):
    """The Taylor term sum_n mean(D^n) / n! for every block."""
    means = block_mean_differences(seq, cfg)
    return sum(m / math.factorial(n) for n, m in enumerate(means, start=1))


def taylor_transform(seq, cfg=TaylorConfig()):
    """Transform a sequence; ``concat`` mode appends the displacement channels."""
    x = _frames(seq)
    disp = displacement(x, cfg)
    starts = np.arange(disp.shape[0]) * cfg.step
    pos = x[starts]
    out = pos + disp if cfg.mode == "replace" else np.concatenate([pos, disp], axis=-1)
    if isinstance(seq, SkeletonSequence):
        return seq.with_frames(out)
    return out


def motion_magnitude(seq, cfg=TaylorConfig()):
    """Euclidean norm of each joint's block-mean velocity, aligned with the transform."""
    first = block_mean_differences(seq, TaylorConfig(cfg.block_frames, cfg.step, 1))[0]
    mags = np.linalg.norm(first, axis=-1)
    source = seq.source_id if isinstance(seq, SkeletonSequence) else ""
    return MotionField(magnitudes=mags, source_id=source)


def motion_field_to_dict(field, cfg):
    return {
        "source_id": field.source_id,
        "block_frames": cfg.block_frames,
        "step": cfg.step,
        "magnitudes": field.magnitudes.tolist(),
    }
