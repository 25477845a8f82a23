"""Video preprocessing: snippet segmentation, resize, ten-crop, normalize.

Stage order is fixed and load-bearing: gather frames -> float tensor -> resize
shorter side to 256 -> ten-crop 224 -> stack -> normalize. Normalization
constants live on the 0-255 pixel scale, so frames are never pre-scaled to [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .tensor import Tensor

RESIZE_TARGET = 256
CROP_SIZE = 224
DEFAULT_SNIPPETS = 32
DEFAULT_SNIPPET_LEN = 16

# Index j of ten_crop(mirror(x)) equals index MIRROR_PERM[j] of ten_crop(x),
# valid when the resized width minus crop size is even (center crop symmetric).
MIRROR_PERM = (6, 5, 8, 7, 9, 1, 0, 3, 2, 4)


@dataclass
class RawVideo:
    """Uniform-dimension frame sequence with pixel values on the 0-255 scale."""

    frames: Sequence[np.ndarray]
    fps: float = 30.0
    source_id: str = "unknown"

    def __post_init__(self) -> None:
        if len(self.frames) < 1:
            raise ValueError("RawVideo needs at least one frame")
        h, w = self.frames[0].shape[:2]
        for i, f in enumerate(self.frames):
            if f.ndim != 3 or f.shape[2] != 3:
                raise ValueError(f"frame {i} is not HxWx3")
            if f.shape[:2] != (h, w):
                raise ValueError(f"frame {i} dimensions {f.shape[:2]} differ from frame 0 {(h, w)}")

    @property
    def frame_count(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class SnippetPlan:
    """Uniformly spaced snippet start indices over a video."""

    snippet_count: int
    frames_per_snippet: int
    start_indices: Tuple[int, ...]

    def __post_init__(self) -> None:
        if list(self.start_indices) != sorted(self.start_indices):
            raise ValueError("start indices must be nondecreasing")
        if len(self.start_indices) != self.snippet_count:
            raise ValueError("start index count must equal snippet_count")


@dataclass(frozen=True)
class NormConstants:
    mean: Tuple[float, float, float] = (114.75, 114.75, 114.75)
    std: Tuple[float, float, float] = (57.375, 57.375, 57.375)

    def __post_init__(self) -> None:
        if any(s <= 0 for s in self.std):
            raise ValueError("std must be strictly positive")


@dataclass
class ClipBatch:
    """Normalized ten-crop pixel block for one snippet: [10, 3, L, 224, 224]."""

    data: Tensor
    snippet_index: int
    start_frame: int
    timestamp_s: float

    def __post_init__(self) -> None:
        s = self.data.shape
        if len(s) != 5 or s[0] != 10 or s[3] != CROP_SIZE or s[4] != CROP_SIZE:
            raise ValueError(f"ClipBatch data must be [10,3,L,{CROP_SIZE},{CROP_SIZE}], got {s}")


def _axis_lerp_coords(in_len: int, out_len: int):
    # half-pixel-center source coordinates with edge clamping
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = (src - lo).astype(np.float32)
    lo_c = np.clip(lo, 0, in_len - 1)
    hi_c = np.clip(lo + 1, 0, in_len - 1)
    return lo_c, hi_c, frac


def resize_bilinear(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an HxWx3 frame to out_h x out_w."""
    img = np.asarray(frame, dtype=np.float32)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    y0, y1, fy = _axis_lerp_coords(h, out_h)
    x0, x1, fx = _axis_lerp_coords(w, out_w)
    rows0 = img[y0]
    rows1 = img[y1]
    top = rows0[:, x0] * (1 - fx)[None, :, None] + rows0[:, x1] * fx[None, :, None]
    bot = rows1[:, x0] * (1 - fx)[None, :, None] + rows1[:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def resize_shorter_side(frame: np.ndarray, target: int = RESIZE_TARGET) -> np.ndarray:
    """Scale so the shorter side becomes exactly `target`; longer side rounds to nearest."""
    h, w = frame.shape[:2]
    if h <= w:
        out_h, out_w = target, int(round(w * target / h))
    else:
        out_h, out_w = int(round(h * target / w)), target
    return resize_bilinear(frame, out_h, out_w)


def ten_crop(clip: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """[3,L,H,W] -> [10,3,L,size,size]: TL, TR, BL, BR, center, then their W-axis mirrors."""
    if clip.ndim != 4:
        raise ValueError(f"ten_crop expects a [3,L,H,W] clip, got {clip.ndim}-D")
    h, w = clip.shape[2], clip.shape[3]
    if h < size or w < size:
        raise ValueError(
            f"frame extent {h}x{w} smaller than crop {size}; resize the shorter side first"
        )
    top, left = (h - size) // 2, (w - size) // 2
    base = [
        clip[:, :, :size, :size],
        clip[:, :, :size, w - size:],
        clip[:, :, h - size:, :size],
        clip[:, :, h - size:, w - size:],
        clip[:, :, top:top + size, left:left + size],
    ]
    # explicit C-contiguous output: np.stack of strided views would keep the
    # source memory order and force a second full relayout downstream
    out = np.empty((10,) + base[0].shape, dtype=np.float32)
    for j, c in enumerate(base):
        out[j] = c
        out[5 + j] = c[:, :, :, ::-1]
    return out


def normalize(clip: np.ndarray, consts: NormConstants = NormConstants(), inplace: bool = False) -> np.ndarray:
    """(x - mean) / std per channel; the channel axis is at position ndim-4.

    inplace=True mutates (and returns) the given float32 array; callers use it
    only on buffers they own, like the fresh ten-crop stack.
    """
    x = np.asarray(clip, dtype=np.float32)
    ax = x.ndim - 4
    if x.shape[ax] != 3:
        raise ValueError(f"expected 3 channels at axis {ax}, got {x.shape[ax]}")
    shape = [1] * x.ndim
    shape[ax] = 3
    mean = np.asarray(consts.mean, dtype=np.float32).reshape(shape)
    std = np.asarray(consts.std, dtype=np.float32).reshape(shape)
    if inplace and x is clip:
        np.subtract(x, mean, out=x)
        np.divide(x, std, out=x)
        return x
    out = x - mean
    out /= std
    return out


def segment_snippets(
    video: RawVideo,
    snippet_count: int = DEFAULT_SNIPPETS,
    frames_per_snippet: int = DEFAULT_SNIPPET_LEN,
) -> SnippetPlan:
    """Uniform snippet starts: round(i * (N-L) / (T-1)), clamped; short videos start at 0."""
    n = video.frame_count
    span = max(0, n - frames_per_snippet)
    if snippet_count == 1:
        starts = (0,)
    else:
        starts = tuple(
            min(span, int(np.floor(i * span / (snippet_count - 1) + 0.5)))
            for i in range(snippet_count)
        )
    return SnippetPlan(snippet_count, frames_per_snippet, starts)


def gather_snippet_frames(video: RawVideo, plan: SnippetPlan, index: int) -> List[np.ndarray]:
    """The L frames of snippet `index`; indices past the end repeat the last frame."""
    if index >= plan.snippet_count:
        raise IndexError(f"snippet index {index} out of range [0, {plan.snippet_count})")
    start = plan.start_indices[index]
    last = video.frame_count - 1
    return [video.frames[min(start + j, last)] for j in range(plan.frames_per_snippet)]


def preprocess_snippet(
    video: RawVideo,
    plan: SnippetPlan,
    index: int,
    consts: NormConstants = NormConstants(),
) -> ClipBatch:
    """Full per-snippet pipeline in fixed order; output is [10,3,L,224,224]."""
    frames = gather_snippet_frames(video, plan, index)
    resized = [resize_shorter_side(np.asarray(f, dtype=np.float32)) for f in frames]
    clip = np.stack(resized, axis=0).transpose(3, 0, 1, 2)  # [L,H,W,3] -> [3,L,H,W]
    crops = ten_crop(clip)
    data = normalize(crops, consts, inplace=True)
    start = plan.start_indices[index]
    return ClipBatch(
        data=Tensor(data),
        snippet_index=index,
        start_frame=start,
        timestamp_s=start / video.fps if video.fps > 0 else 0.0,
    )
