"""Dense-block encoder-decoder for ventral-cavity segmentation.

The network takes three consecutive CT slices as channels and predicts a
cavity probability map for the centre slice at full resolution. Layer
census is fixed: 12 convolutions (two strided reducers plus a 10-layer
dense block), one max-pooling layer, and three transposed convolutions
that upsample back to the input size, with skip concatenations from the
encoder at 1/2 and 1/4 resolution. Batch normalization precedes every
convolution and a dropout layer follows each one. The final transposed
convolution emits the single-channel sigmoid head, so the output spatial
size always equals the input spatial size (in-plane dims must be divisible
by 8).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch
from torch import nn

# display window used to scale HU into [0, 1] network inputs
HU_LO = -1024.0
HU_HI = 3071.0


@dataclass(frozen=True)
class NetworkSpec:
    in_slices: int = 3
    base_filters: int = 32  # reducer convolutions (Conv 1-2)
    growth: int = 16  # channels added by each dense-block layer
    dense_layers: int = 10  # Conv 3-12
    decoder_filters: tuple[int, int] = (64, 32)  # first two deconvs; the third emits 1
    dropout: float = 0.2

    def validate(self) -> None:
        if self.in_slices < 1 or self.base_filters < 1 or self.growth < 1:
            raise ValueError("in_slices, base_filters and growth must be >= 1")
        if self.dense_layers < 1 or len(self.decoder_filters) != 2:
            raise ValueError("need >= 1 dense layer and exactly two decoder widths")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def spec_to_text(spec) -> str:
    lines = [f"# {type(spec).__name__}"]
    for f in fields(spec):
        value = getattr(spec, f.name)
        if isinstance(value, tuple):
            value = " ".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def spec_from_text(cls, text: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, value = line.partition("=")
        name, value = name.strip(), value.strip()
        if name not in known:
            raise ValueError(f"unknown {cls.__name__} key {name!r}")
        hint = known[name].type
        if "tuple" in hint:
            parsed = tuple(
                float(v) if "float" in hint else int(v) for v in value.split()
            )
        elif "float" in hint:
            parsed = float(value)
        elif "int" in hint:
            parsed = int(value)
        elif "bool" in hint:
            parsed = value.lower() in ("true", "1")
        else:
            parsed = value
        kwargs[name] = parsed
    return cls(**kwargs)


class _ConvBlock(nn.Module):
    """BN -> conv -> ReLU -> dropout."""

    def __init__(self, in_ch, out_ch, dropout, stride=1):
        super().__init__()
        self.bn = nn.BatchNorm2d(in_ch)
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)
        self.act = nn.ReLU(inplace=True)
        self.drop = nn.Dropout2d(dropout)

    def forward(self, x):
        return self.drop(self.act(self.conv(self.bn(x))))


class _UpBlock(nn.Module):
    """BN -> transposed conv (2x), optional ReLU + dropout."""

    def __init__(self, in_ch, out_ch, dropout, head=False):
        super().__init__()
        self.bn = nn.BatchNorm2d(in_ch)
        self.deconv = nn.ConvTranspose2d(in_ch, out_ch, kernel_size=2, stride=2)
        self.head = head
        if not head:
            self.act = nn.ReLU(inplace=True)
            self.drop = nn.Dropout2d(dropout)

    def forward(self, x):
        x = self.deconv(self.bn(x))
        return x if self.head else self.drop(self.act(x))


class CavityNet(nn.Module):
    def __init__(self, spec: NetworkSpec | None = None):
        super().__init__()
        spec = spec if spec is not None else NetworkSpec()
        spec.validate()
        self.spec = spec
        f, g = spec.base_filters, spec.growth
        self.pool = nn.MaxPool2d(2)
        self.reduce1 = _ConvBlock(spec.in_slices, f, spec.dropout, stride=2)
        self.reduce2 = _ConvBlock(f, f, spec.dropout, stride=2)
        self.dense = nn.ModuleList(
            _ConvBlock(f + i * g, g, spec.dropout) for i in range(spec.dense_layers)
        )
        dense_out = f + spec.dense_layers * g
        d1, d2 = spec.decoder_filters
        self.up1 = _UpBlock(dense_out, d1, spec.dropout)
        self.up2 = _UpBlock(d1 + f, d2, spec.dropout)
        self.up3 = _UpBlock(d2 + spec.in_slices, 1, spec.dropout, head=True)
        self.apply(init_gaussian)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, S, H, W) HU-normalized input -> (B, 1, H, W) probabilities."""
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ValueError(f"in-plane dims must be divisible by 8, got {tuple(x.shape)}")
        pooled = self.pool(x)  # 1/2, raw-feature skip
        enc1 = self.reduce1(pooled)  # 1/4
        feat = self.reduce2(enc1)  # 1/8
        for layer in self.dense:
            feat = torch.cat([feat, layer(feat)], dim=1)
        up = self.up1(feat)  # 1/4
        up = self.up2(torch.cat([up, enc1], dim=1))  # 1/2
        logits = self.up3(torch.cat([up, pooled], dim=1))  # 1/1
        return torch.sigmoid(logits)

    def predict_stacks(self, stacks: np.ndarray) -> np.ndarray:
        """Channels-last convenience: (B, H, W, S) -> (B, H, W, 1)."""
        x = torch.from_numpy(np.moveaxis(stacks, -1, 1).copy()).float()
        self.eval()
        with torch.no_grad():
            out = self(x)
        return np.moveaxis(out.numpy(), 1, -1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_gaussian(module: nn.Module, std: float = 0.01) -> None:
    """Gaussian(0, std) weights with zero biases on all conv layers."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, mean=0.0, std=std)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def normalize_hu(hu: np.ndarray) -> np.ndarray:
    """Clamp to the CT range and scale into [0, 1] float32."""
    clipped = np.clip(hu.astype(np.float32), HU_LO, HU_HI)
    return (clipped - HU_LO) / (HU_HI - HU_LO)


def layer_census(model: nn.Module) -> dict[str, int]:
    counts = {"conv": 0, "pool": 0, "deconv": 0}
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            counts["conv"] += 1
        elif isinstance(m, nn.ConvTranspose2d):
            counts["deconv"] += 1
        elif isinstance(m, nn.MaxPool2d):
            counts["pool"] += 1
    return counts
