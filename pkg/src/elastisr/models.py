"""Super-resolution CNNs mapping 5-channel LR grids to HR grids.

Two architectures with (almost) the same trainable parameter count:

* :class:`Fsrcnn`: feature extraction, channel shrink, a stack of 3x3 mapping
  layers, channel expand, then one strided transposed convolution doing the
  whole upscale.
* :class:`Rdn`: shallow feature extraction, residual dense blocks with local
  feature fusion, global feature fusion with a global residual, then a
  sub-pixel (PixelShuffle) upsampling head.

Both are fully convolutional, so any LR resolution works as long as the
output is ``scale`` times larger per axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import NormalizerError

NUM_CHANNELS = 5


@dataclass(frozen=True)
class ModelConfig:
    """Architecture selection and hyperparameters."""

    arch: str = "fsrcnn"
    scale: int = 4
    in_channels: int = NUM_CHANNELS
    out_channels: int = NUM_CHANNELS
    # fsrcnn: d feature width, s shrunken width, m mapping layers
    fsrcnn_d: int = 128
    fsrcnn_s: int = 64
    fsrcnn_m: int = 8
    # rdn: block count, convs per block, growth rate, base feature width
    rdn_blocks: int = 2
    rdn_layers: int = 4
    rdn_growth: int = 32
    rdn_features: int = 32

    def __post_init__(self):
        if self.arch not in ("fsrcnn", "rdn"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Fsrcnn(nn.Module):
    """Compact SR network: map features at LR resolution, upscale at the end."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, s, m = cfg.fsrcnn_d, cfg.fsrcnn_s, cfg.fsrcnn_m
        self.features = nn.Sequential(
            nn.Conv2d(cfg.in_channels, d, kernel_size=5, padding=2), nn.PReLU(d)
        )
        self.shrink = nn.Sequential(nn.Conv2d(d, s, kernel_size=1), nn.PReLU(s))
        mapping = []
        for _ in range(m):
            mapping += [nn.Conv2d(s, s, kernel_size=3, padding=1), nn.PReLU(s)]
        self.mapping = nn.Sequential(*mapping)
        self.expand = nn.Sequential(nn.Conv2d(s, d, kernel_size=1), nn.PReLU(d))
        # (n-1)*scale - 2*4 + 9 + (scale-1) = n*scale for any scale
        self.upsample = nn.ConvTranspose2d(
            d,
            cfg.out_channels,
            kernel_size=9,
            stride=cfg.scale,
            padding=4,
            output_padding=cfg.scale - 1,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        x = self.shrink(x)
        x = self.mapping(x)
        x = self.expand(x)
        return self.upsample(x)


class _DenseBlock(nn.Module):
    """Residual dense block: densely connected 3x3 convs + 1x1 local fusion."""

    def __init__(self, features: int, growth: int, layers: int):
        super().__init__()
        convs = []
        for i in range(layers):
            convs.append(
                nn.Sequential(
                    nn.Conv2d(features + i * growth, growth, kernel_size=3, padding=1),
                    nn.ReLU(inplace=True),
                )
            )
        self.convs = nn.ModuleList(convs)
        self.fuse = nn.Conv2d(features + layers * growth, features, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = [x]
        for conv in self.convs:
            feats.append(conv(torch.cat(feats, dim=1)))
        return x + self.fuse(torch.cat(feats, dim=1))


class Rdn(nn.Module):
    """Residual dense network with a single-stage sub-pixel upsampling head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        g0, g = cfg.rdn_features, cfg.rdn_growth
        self.sfe1 = nn.Conv2d(cfg.in_channels, g0, kernel_size=3, padding=1)
        self.sfe2 = nn.Conv2d(g0, g0, kernel_size=3, padding=1)
        self.blocks = nn.ModuleList(
            _DenseBlock(g0, g, cfg.rdn_layers) for _ in range(cfg.rdn_blocks)
        )
        self.gff = nn.Sequential(
            nn.Conv2d(cfg.rdn_blocks * g0, g0, kernel_size=1),
            nn.Conv2d(g0, g0, kernel_size=3, padding=1),
        )
        self.upsample = nn.Sequential(
            nn.Conv2d(g0, g * cfg.scale**2, kernel_size=3, padding=1),
            nn.PixelShuffle(cfg.scale),
            nn.Conv2d(g, cfg.out_channels, kernel_size=3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shallow = self.sfe1(x)
        x = self.sfe2(shallow)
        locals_ = []
        for block in self.blocks:
            x = block(x)
            locals_.append(x)
        x = self.gff(torch.cat(locals_, dim=1)) + shallow
        return self.upsample(x)


def build_model(cfg: ModelConfig, seed: int = 0) -> nn.Module:
    """Construct the requested architecture with seeded deterministic init."""
    torch.manual_seed(seed)
    if cfg.arch == "fsrcnn":
        return Fsrcnn(cfg)
    return Rdn(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


class Normalizer:
    """Per-channel affine scaling fitted on LR training grids.

    Physics losses act on raw field values, so model outputs pass through
    :meth:`denormalize` before any residual is computed.
    """

    def __init__(self, shift=None, scale=None):
        self.shift = None if shift is None else np.asarray(shift, dtype=np.float64)
        self.scale = None if scale is None else np.asarray(scale, dtype=np.float64)
        if self.scale is not None and np.any(self.scale <= 0):
            raise NormalizerError("normalizer scale must be positive")

    @property
    def fitted(self) -> bool:
        return self.shift is not None and self.scale is not None

    def fit(self, grids) -> "Normalizer":
        """Compute per-channel mean and std over an iterable of (5, ny, nx) arrays."""
        stack = np.stack([np.asarray(g, dtype=np.float64) for g in grids])
        if stack.ndim != 4 or stack.shape[1] != NUM_CHANNELS:
            raise NormalizerError(
                f"expected arrays of shape (5, ny, nx), got {stack.shape[1:]}"
            )
        self.shift = stack.mean(axis=(0, 2, 3))
        std = stack.std(axis=(0, 2, 3))
        # constant channels (e.g. q=0 stress) get unit scale instead of zero
        self.scale = np.where(std > 1e-12, std, 1.0)
        return self

    def _check(self):
        if not self.fitted:
            raise NormalizerError("normalizer used before fit()")

    def _as_pair(self, t: torch.Tensor):
        shift = torch.as_tensor(self.shift, dtype=t.dtype, device=t.device)
        scale = torch.as_tensor(self.scale, dtype=t.dtype, device=t.device)
        shape = (NUM_CHANNELS, 1, 1) if t.ndim == 3 else (1, NUM_CHANNELS, 1, 1)
        return shift.reshape(shape), scale.reshape(shape)

    def normalize(self, t: torch.Tensor) -> torch.Tensor:
        self._check()
        shift, scale = self._as_pair(t)
        return (t - shift) / scale

    def denormalize(self, t: torch.Tensor) -> torch.Tensor:
        self._check()
        shift, scale = self._as_pair(t)
        return t * scale + shift

    def to_dict(self) -> dict:
        self._check()
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(shift=d["shift"], scale=d["scale"])
