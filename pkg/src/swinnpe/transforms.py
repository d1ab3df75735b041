"""Analysis/synthesis transforms and the codec's architecture configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module
from .swin import AttentionConfig, effective_window, make_block

DOWNSAMPLE = 64  # four analysis stages plus two hyper stages, each x2


@dataclass(frozen=True)
class CodecConfig:
    depths: tuple = (2, 2, 6, 2, 5, 1)
    widths: tuple = (128, 192, 256, 320, 192, 192)
    window_g: int = 8
    window_h: int = 4
    kernel: int = 3
    slices: int = 10
    heads: int = 0  # 0 selects one head per 32 channels
    projection: str = "conv-dsep"
    padding: str = "zeros"
    mlp_ratio: int = 4
    seed: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "widths", tuple(int(c) for c in self.widths))
        if len(self.depths) != 6 or len(self.widths) != 6:
            raise ValueError("depths and widths need six entries each")
        if self.slices < 1 or self.slices > self.widths[3]:
            raise ValueError(f"slice count {self.slices} incompatible with latent width {self.widths[3]}")

    @classmethod
    def paper(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides):
        base = dict(depths=(1, 1, 2, 1, 2, 1), widths=(16, 24, 32, 40, 24, 24), window_g=4, window_h=2, slices=2)
        base.update(overrides)
        return cls(**base)

    @property
    def latent_channels(self):
        return self.widths[3]

    @property
    def hyper_channels(self):
        return self.widths[5]

    def slice_sizes(self):
        c, s = self.latent_channels, self.slices
        return [c // s + (1 if i < c % s else 0) for i in range(s)]

    def attention(self, channels, window, shifted):
        return AttentionConfig(
            channels=channels,
            heads=self.heads if self.heads and channels % self.heads == 0 else 0,
            window=window,
            shifted=shifted,
            kernel=self.kernel,
            projection=self.projection,
            padding=self.padding,
            mlp_ratio=self.mlp_ratio,
        )

    # -- sidecar text ------------------------------------------------------
    def to_text(self):
        """Flat ``key=value`` lines, ASCII, in a fixed order."""
        lines = []
        for f in fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        for k in sorted(self.extra):
            lines.append(f"{k}={self.extra[k]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        known = {f.name: f for f in fields(cls)}
        kwargs, extra = {}, {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in ("depths", "widths"):
                kwargs[key] = tuple(int(x) for x in value.split(","))
            elif key in ("projection", "padding"):
                kwargs[key] = value
            elif key in known and key != "extra":
                kwargs[key] = int(value)
            else:
                extra[key] = value
        return cls(extra=extra, **kwargs)

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return CodecConfig(**d)


# -- geometry ----------------------------------------------------------------
def stage_maps(cfg, H, W):
    """(name, height, width, window) for every block-carrying stage."""
    out = []
    h, w = H, W
    for i in range(4):
        h, w = h // 2, w // 2
        out.append((f"g_a.stage{i + 1}", h, w, cfg.window_g))
    for i in range(2):
        h, w = h // 2, w // 2
        out.append((f"h_a.stage{i + 1}", h, w, cfg.window_h))
    return out


def geometry_errors(cfg, H, W):
    errs = []
    if H <= 0 or W <= 0 or H % DOWNSAMPLE or W % DOWNSAMPLE:
        errs.append(f"image size {H}x{W} must be a positive multiple of {DOWNSAMPLE}")
        return errs
    for name, h, w, win in stage_maps(cfg, H, W):
        ew, _ = effective_window(h, w, win, 0)
        if h % ew or w % ew:
            errs.append(f"{name}: {h}x{w} map does not tile into {ew}x{ew} windows")
    return errs


def check_geometry(cfg, H, W):
    errs = geometry_errors(cfg, H, W)
    if errs:
        raise ValueError("; ".join(errs))


def valid_crop_size(cfg, H, W):
    """Largest (h, w) <= (H, W) accepted by the configuration, by area."""
    best = None
    for h in range(H - H % DOWNSAMPLE, 0, -DOWNSAMPLE):
        for w in range(W - W % DOWNSAMPLE, 0, -DOWNSAMPLE):
            if best and h * w <= best[0] * best[1]:
                break
            if not geometry_errors(cfg, h, w):
                best = (h, w)
                break
    if best is None:
        raise ValueError(f"no valid crop of {H}x{W} for this configuration (need multiples of {DOWNSAMPLE})")
    return best


def center_crop(img, h, w):
    H, W = img.shape[:2]
    top, left = (H - h) // 2, (W - w) // 2
    return img[top : top + h, left : left + w]


# -- rearrangements ----------------------------------------------------------
def space_to_depth(x, r=2):
    """``[..., H, W, C]`` -> ``[..., H/r, W/r, r*r*C]``; sub-pixels in row-major order."""
    x = T.as_tensor(x)
    *lead, H, W, C = x.shape
    if H % r or W % r:
        raise ValueError(f"{H}x{W} is not divisible by {r}")
    lead = tuple(lead)
    x = x.reshape(lead + (H // r, r, W // r, r, C))
    n = len(lead)
    x = x.transpose(tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4))
    return x.reshape(lead + (H // r, W // r, r * r * C))


def depth_to_space(x, r=2):
    """Inverse of :func:`space_to_depth`."""
    x = T.as_tensor(x)
    *lead, H, W, C = x.shape
    if C % (r * r):
        raise ValueError(f"{C} channels are not divisible by {r * r}")
    lead = tuple(lead)
    n = len(lead)
    x = x.reshape(lead + (H, W, r, r, C // (r * r)))
    x = x.transpose(tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4))
    return x.reshape(lead + (H * r, W * r, C // (r * r)))


class PatchMerge(Module):
    """space-to-depth, layer norm, then a linear map to ``c_out`` channels."""

    def __init__(self, c_in, c_out, rng, norm=True):
        self.norm = LayerNorm(4 * c_in) if norm else None
        self.linear = Linear(4 * c_in, c_out, rng)

    def forward(self, x):
        x = space_to_depth(x, 2)
        if self.norm is not None:
            x = self.norm(x)
        return self.linear(x)


class PatchSplit(Module):
    """Linear map to ``4 * c_out`` channels, layer norm, then depth-to-space.

    ``norm=False`` drops the normalization; the image-producing final split
    uses it so output intensities are not forced to zero mean per pixel block.
    """

    def __init__(self, c_in, c_out, rng, norm=True):
        self.linear = Linear(c_in, 4 * c_out, rng)
        self.norm = LayerNorm(4 * c_out) if norm else None

    def forward(self, x):
        x = self.linear(x)
        if self.norm is not None:
            x = self.norm(x)
        return depth_to_space(x, 2)


class Stage(Module):
    """Optional merge, a run of Swin blocks with alternating shift, optional split."""

    def __init__(self, cfg, channels, depth, window, rng, merge_from=None, split_to=None, split_norm=True):
        if merge_from is not None:
            self.merge = PatchMerge(merge_from, channels, rng)
        self._blocks = []
        for j in range(depth):
            blk = make_block(cfg.attention(channels, window, shifted=j % 2 == 1), rng)
            setattr(self, f"block{j + 1}", blk)
            self._blocks.append(blk)
        if split_to is not None:
            self.split = PatchSplit(channels, split_to, rng, norm=split_norm)

    def forward(self, x):
        if hasattr(self, "merge"):
            x = self.merge(x)
        for blk in self._blocks:
            x = blk(x)
        if hasattr(self, "split"):
            x = self.split(x)
        return x


class _Sequential(Module):
    def _add_stages(self, stages):
        self._stages = []
        for i, st in enumerate(stages):
            setattr(self, f"stage{i + 1}", st)
            self._stages.append(st)

    def forward(self, x):
        squeeze = x.ndim == 3
        if squeeze:
            x = x.reshape((1,) + x.shape)
        for st in self._stages:
            x = st(x)
        return x.reshape(x.shape[1:]) if squeeze else x


class AnalysisTransform(_Sequential):
    """Image ``[.., H, W, 3]`` -> latent ``[.., H/16, W/16, C4]``."""

    def __init__(self, cfg, rng):
        c_prev = 3
        stages = []
        for i in range(4):
            stages.append(Stage(cfg, cfg.widths[i], cfg.depths[i], cfg.window_g, rng, merge_from=c_prev))
            c_prev = cfg.widths[i]
        self._add_stages(stages)


class SynthesisTransform(_Sequential):
    """Latent -> image, mirroring :class:`AnalysisTransform`."""

    def __init__(self, cfg, rng):
        stages = []
        for i in (3, 2, 1, 0):
            c_out = cfg.widths[i - 1] if i > 0 else 3
            stages.append(Stage(cfg, cfg.widths[i], cfg.depths[i], cfg.window_g, rng, split_to=c_out, split_norm=i > 0))
        self._add_stages(stages)


class HyperAnalysis(_Sequential):
    """Latent -> hyper-latent ``[.., H/64, W/64, C6]``."""

    def __init__(self, cfg, rng):
        self._add_stages(
            [
                Stage(cfg, cfg.widths[4], cfg.depths[4], cfg.window_h, rng, merge_from=cfg.widths[3]),
                Stage(cfg, cfg.widths[5], cfg.depths[5], cfg.window_h, rng, merge_from=cfg.widths[4]),
            ]
        )


class HyperSynthesis(_Sequential):
    """Hyper-latent -> ``2 * C4`` hyper features at latent resolution."""

    def __init__(self, cfg, rng):
        self._add_stages(
            [
                Stage(cfg, cfg.widths[5], cfg.depths[5], cfg.window_h, rng, split_to=cfg.widths[4]),
                Stage(cfg, cfg.widths[4], cfg.depths[4], cfg.window_h, rng, split_to=cfg.widths[3]),
            ]
        )
        self.head = Linear(cfg.widths[3], 2 * cfg.widths[3], rng)

    def forward(self, x):
        return self.head(super().forward(x))


def build_transforms(cfg, rng=None):
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return AnalysisTransform(cfg, rng), HyperAnalysis(cfg, rng), HyperSynthesis(cfg, rng), SynthesisTransform(cfg, rng)
