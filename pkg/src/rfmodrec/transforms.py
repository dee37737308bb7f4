"""Input front-ends turning a 2xN I/Q matrix into a 2xWxW image.

* Convolutional transform (CT): one-channel 3x3 convolution over the 2xN
  matrix with ``F`` filters, swap the filter and I/Q axes, then (1, 4) max
  pooling. With N = 4F the result is square: 1024 -> (2, 256, 256) and
  128 -> (2, 32, 32).
* STFT image: Hann-windowed sliding DFT, real and imaginary planes resampled
  bilinearly onto a WxW grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import functional as F
from . import tensor as T
from .tensor import Parameter, Tensor


@dataclass(frozen=True)
class CtConfig:
    filters: int = 256
    kernel: Tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 1
    pool: Tuple[int, int] = (1, 4)
    learnable: bool = True

    @classmethod
    def for_samples(cls, n_samples: int, learnable: bool = True) -> "CtConfig":
        """Square-output geometry: ``filters = n_samples / 4``."""
        if n_samples % 4:
            raise ValueError(f"n_samples ({n_samples}) must be divisible by 4")
        return cls(filters=n_samples // 4, learnable=learnable)


def init_ct_weights(cfg: CtConfig, seed: int = 0, dtype=np.float32) -> Tuple[Parameter, Parameter]:
    kh, kw = cfg.kernel
    bound = math.sqrt(6.0 / (kh * kw))
    rng = np.random.default_rng(seed)
    w = Parameter(rng.uniform(-bound, bound, size=(cfg.filters, 1, kh, kw)).astype(dtype), name="ct.weight")
    b = Parameter(np.zeros(cfg.filters, dtype=dtype), name="ct.bias")
    if not cfg.learnable:
        w.requires_grad = b.requires_grad = False
    return w, b


def conv_transform(x: Tensor, cfg: CtConfig, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """(B, 2, N) or (2, N) -> (B, 2, F, N/4) or (2, F, N/4); differentiable."""
    unbatched = x.data.ndim == 2
    if unbatched:
        x = T.reshape(x, (1, *x.shape))
    B, rows, N = x.shape
    if N % cfg.pool[1]:
        raise F.ShapeError(f"frame length {N} is not divisible by the pooling width {cfg.pool[1]}")
    if weight.shape != (cfg.filters, 1, *cfg.kernel):
        raise F.ShapeError(f"CT weights must be {(cfg.filters, 1, *cfg.kernel)}, got {weight.shape}")
    img = T.reshape(x, (B, 1, rows, N))
    y = T.conv2d(img, weight, bias, stride=cfg.stride, padding=cfg.padding)  # (B, F, 2, N)
    y = T.swapaxes(y, 1, 2)  # (B, 2, F, N)
    y = T.maxpool2d(y, *cfg.pool)
    if unbatched:
        y = T.reshape(y, y.shape[1:])
    return y


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 128
    overlap: int = 112
    fft_len: int = 128
    out_size: int = 256
    window: str = "hann"  # "hann" (periodic) or "hann_sym"
    channel_mode: str = "real_imag"

    def __post_init__(self):
        if not 0 <= self.overlap < self.window_len:
            raise ValueError(f"overlap must satisfy 0 <= overlap < window_len, got {self.overlap}/{self.window_len}")
        if self.fft_len < self.window_len:
            raise ValueError("fft_len must be >= window_len")
        if self.out_size <= 0:
            raise ValueError("out_size must be positive")
        if self.channel_mode not in ("real_imag", "mag_phase"):
            raise ValueError(f"unknown channel_mode {self.channel_mode!r}")

    @property
    def hop(self) -> int:
        return self.window_len - self.overlap

    def n_frames(self, n: int) -> int:
        return (n - self.window_len) // self.hop + 1


def hann(length: int, symmetric: bool = False) -> np.ndarray:
    """Hann taper. The periodic form (denominator ``length``) overlap-adds to a
    constant at hops of length/2, /4, /8...; the symmetric form uses ``length-1``."""
    n = np.arange(length)
    den = length - 1 if symmetric else length
    return 0.5 * (1 - np.cos(2 * np.pi * n / den))


def stft(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Two-sided STFT of a complex sequence: (n_frames, fft_len), no centring."""
    x = np.asarray(x)
    if x.ndim == 2 and x.shape[0] == 2 and not np.iscomplexobj(x):
        x = x[0].astype(np.float64) + 1j * x[1].astype(np.float64)
    if len(x) < cfg.window_len:
        raise ValueError(f"signal length {len(x)} is shorter than the window ({cfg.window_len})")
    w = hann(cfg.window_len, symmetric=cfg.window == "hann_sym")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)[:: cfg.hop]
    return np.fft.fft(frames * w, n=cfg.fft_len, axis=-1)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights with corner alignment: (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1
        return m
    if n_out == 1:
        m[0, 0] = 1
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def resize_bilinear(plane: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resample a 2-D array to (h, w); identity when the size is unchanged."""
    H, W = plane.shape
    out = plane
    if H != h:
        out = _interp_matrix(H, h) @ out
    if W != w:
        out = out @ _interp_matrix(W, w).T
    return out


def stft_to_image(X: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Pack an STFT matrix as a (2, W, W) float32 image: rows = frequency bins, columns = frames."""
    plane = np.asarray(X).T  # (bins, frames)
    if cfg.channel_mode == "real_imag":
        chans = (plane.real, plane.imag)
    else:
        chans = (np.abs(plane), np.angle(plane))
    W = cfg.out_size
    return np.stack([resize_bilinear(c, W, W) for c in chans]).astype(np.float32)


def stft_image(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    return stft_to_image(stft(x, cfg), cfg)
