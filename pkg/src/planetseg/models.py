"""Segmentation backbones behind a single predictor interface: a classic
U-Net and a SegNeXt-S-style encoder with a fusion decoder that projects
every stage to 256 channels, concatenates at 64x64 into a 1024-channel
volume, and upsamples back to a 256x256x1 sigmoid map."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

INPUT_STRIDE = 32  # coarsest encoder stride; inputs must divide evenly


@dataclass(frozen=True)
class SegNeXtConfig:
    depths: tuple[int, ...] = (2, 2, 4, 2)
    widths: tuple[int, ...] = (64, 128, 320, 512)
    decoder_width: int = 256
    msca_kernels: tuple[int, ...] = (7, 11, 21)

    def __post_init__(self):
        if len(self.depths) != 4 or len(self.widths) != 4:
            raise ValueError("SegNeXt requires exactly 4 stages")


class DoubleConv(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class UNet(nn.Module):
    """4-level encoder-decoder with skip connections, max-pool down,
    transposed-conv up, sigmoid head."""

    def __init__(self, base_width: int = 64):
        super().__init__()
        w = base_width
        widths = [w, w * 2, w * 4, w * 8, w * 16]
        self.inc = DoubleConv(1, widths[0])
        self.downs = nn.ModuleList(
            DoubleConv(widths[i], widths[i + 1]) for i in range(4)
        )
        self.pool = nn.MaxPool2d(2)
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2)
            for i in reversed(range(4))
        )
        self.dec = nn.ModuleList(
            DoubleConv(widths[i + 1], widths[i]) for i in reversed(range(4))
        )
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, x):
        skips = [self.inc(x)]
        for down in self.downs:
            skips.append(down(self.pool(skips[-1])))
        x = skips.pop()
        for up, dec in zip(self.ups, self.dec):
            x = up(x)
            x = dec(torch.cat([skips.pop(), x], dim=1))
        return torch.sigmoid(self.head(x))


class MSCA(nn.Module):
    """Multiscale convolutional attention: 5x5 depthwise, parallel paired
    strip convolutions, 1x1 mixing, multiplicative gate on the input."""

    def __init__(self, ch, kernels=(7, 11, 21)):
        super().__init__()
        self.dw = nn.Conv2d(ch, ch, 5, padding=2, groups=ch)
        self.strips = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(ch, ch, (1, k), padding=(0, k // 2), groups=ch),
                nn.Conv2d(ch, ch, (k, 1), padding=(k // 2, 0), groups=ch),
            )
            for k in kernels
        )
        self.mix = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        u = self.dw(x)
        attn = u + sum(strip(u) for strip in self.strips)
        return self.mix(attn) * x


class MSCABlock(nn.Module):
    def __init__(self, ch, kernels):
        super().__init__()
        self.norm1 = nn.BatchNorm2d(ch)
        self.proj_in = nn.Conv2d(ch, ch, 1)
        self.attn = MSCA(ch, kernels)
        self.proj_out = nn.Conv2d(ch, ch, 1)
        self.norm2 = nn.BatchNorm2d(ch)
        self.mlp = nn.Sequential(
            nn.Conv2d(ch, ch * 4, 1), nn.GELU(), nn.Conv2d(ch * 4, ch, 1)
        )

    def forward(self, x):
        x = x + self.proj_out(self.attn(F.gelu(self.proj_in(self.norm1(x)))))
        return x + self.mlp(self.norm2(x))


class _Downsample(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.norm = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        return self.norm(self.conv(x))


class SegNeXtS(nn.Module):
    """Four-stage MSCA encoder (strides /4, /8, /16, /32) with the fusion
    decoder: per-stage projection, joint upsampling to the /4 grid,
    concatenation, two conv stages, and bilinear upsampling to full
    resolution."""

    def __init__(self, config: SegNeXtConfig):
        super().__init__()
        self.config = config
        ws, ds = config.widths, config.depths
        self.stem = nn.Sequential(
            nn.Conv2d(1, ws[0] // 2, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(ws[0] // 2),
            nn.GELU(),
            nn.Conv2d(ws[0] // 2, ws[0], 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(ws[0]),
            nn.GELU(),
        )
        self.stages = nn.ModuleList()
        for i in range(4):
            layers = []
            if i > 0:
                layers.append(_Downsample(ws[i - 1], ws[i], stride=2))
            layers.extend(MSCABlock(ws[i], config.msca_kernels) for _ in range(ds[i]))
            self.stages.append(nn.Sequential(*layers))

        dw = config.decoder_width
        self.projections = nn.ModuleList(
            nn.Sequential(nn.Conv2d(w, dw, 1, bias=False), nn.BatchNorm2d(dw), nn.ReLU(inplace=True))
            for w in ws
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(dw * 4, dw, 3, padding=1, bias=False),
            nn.BatchNorm2d(dw),
            nn.ReLU(inplace=True),
            nn.Conv2d(dw, dw, 3, padding=1, bias=False),
            nn.BatchNorm2d(dw),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(dw, 1, 1)

    def forward(self, x, return_fused: bool = False):
        feats = []
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        target = feats[0].shape[2:]
        projected = [
            proj(f) if f.shape[2:] == target
            else F.interpolate(proj(f), size=target, mode="bilinear", align_corners=False)
            for proj, f in zip(self.projections, feats)
        ]
        fused = torch.cat(projected, dim=1)
        out = self.fuse(fused)
        out = F.interpolate(out, scale_factor=4, mode="bilinear", align_corners=False)
        out = torch.sigmoid(self.head(out))
        if return_fused:
            return out, fused
        return out


@dataclass
class Predictor:
    """A backbone plus the metadata needed to rebuild it from disk."""

    arch: str  # "unet" or "segnext_s"
    net: nn.Module
    seed: int
    build_kwargs: dict = field(default_factory=dict)

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def _check_input(self, h, w):
        if h != w or h % INPUT_STRIDE != 0 or h < INPUT_STRIDE:
            raise ValueError(
                f"input must be square with side a multiple of {INPUT_STRIDE}, got {h}x{w}"
            )

    def forward_t(self, batch: torch.Tensor) -> torch.Tensor:
        """Gradient-capable forward on an (N, 1, H, W) tensor."""
        self._check_input(batch.shape[2], batch.shape[3])
        return self.net(batch)

    def predict(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Deterministic evaluation-mode forward on an (N, H, W) array of
        [0, 1] intensities; returns (N, H, W) probabilities."""
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2:
            images = images[None]
        self._check_input(images.shape[1], images.shape[2])
        self.net.eval()
        outs = []
        with torch.no_grad():
            for i in range(0, len(images), batch_size):
                x = torch.from_numpy(images[i : i + batch_size]).unsqueeze(1)
                outs.append(self.net(x).squeeze(1).numpy())
        return np.concatenate(outs, axis=0)

    def model_card(self) -> dict:
        return {
            "architecture": self.arch,
            "build_kwargs": self.build_kwargs,
            "seed": self.seed,
            "param_count": self.param_count,
        }

    def save(self, path, extra_card: dict | None = None) -> None:
        """Write the parameter blob plus a JSON model card next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.net.state_dict(), path)
        card = self.model_card()
        if extra_card:
            card.update(extra_card)
        path.with_suffix(".json").write_text(json.dumps(card, indent=2, sort_keys=True))


def build_unet(seed: int, base_width: int = 64) -> Predictor:
    torch.manual_seed(seed)
    net = UNet(base_width=base_width)
    return Predictor("unet", net, seed, {"base_width": base_width})


def build_segnext_s(config: SegNeXtConfig | None = None, seed: int = 0) -> Predictor:
    config = config or SegNeXtConfig()
    torch.manual_seed(seed)
    net = SegNeXtS(config)
    return Predictor("segnext_s", net, seed, {"config": asdict(config)})


def build(arch: str, seed: int, **kwargs) -> Predictor:
    if arch == "unet":
        return build_unet(seed, **kwargs)
    if arch == "segnext_s":
        cfg = kwargs.pop("config", None)
        if isinstance(cfg, dict):
            cfg = SegNeXtConfig(
                depths=tuple(cfg["depths"]),
                widths=tuple(cfg["widths"]),
                decoder_width=cfg["decoder_width"],
                msca_kernels=tuple(cfg["msca_kernels"]),
            )
        return build_segnext_s(cfg, seed)
    raise ValueError(f"unknown architecture {arch!r}")


def load_checkpoint(path) -> Predictor:
    """Rebuild a predictor from a parameter blob and its model card."""
    path = Path(path)
    card = json.loads(path.with_suffix(".json").read_text())
    predictor = build(card["architecture"], card["seed"], **card["build_kwargs"])
    predictor.net.load_state_dict(torch.load(path, weights_only=True))
    predictor.net.eval()
    return predictor
