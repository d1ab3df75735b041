"""Quality, rate and complexity measurements."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .range_coder import Bitstream
from .swin import default_heads, effective_window

PSNR_CAP = 100.0


def psnr(x, x_hat):
    """PSNR in dB for [0, 1] images; identical inputs report ``PSNR_CAP``."""
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def bpp(payload_bits, H, W):
    if H * W <= 0:
        raise ValueError("image area must be positive")
    bits = payload_bits.bit_length if isinstance(payload_bits, Bitstream) else payload_bits
    return bits / (H * W)


# -- Bjontegaard deltas ------------------------------------------------------
@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr: float


@dataclass
class RDCurve:
    points: list

    def __post_init__(self):
        self.points = sorted((p if isinstance(p, RDPoint) else RDPoint(*p) for p in self.points), key=lambda p: p.bpp)

    @property
    def rates(self):
        return np.array([p.bpp for p in self.points])

    @property
    def psnrs(self):
        return np.array([p.psnr for p in self.points])

    def validate(self):
        r = self.rates
        if len(r) < 4:
            raise ValueError(f"an RD curve needs at least 4 points, got {len(r)}")
        if np.any(r <= 0) or np.any(np.diff(r) <= 0):
            raise ValueError("RD curve rates must be positive and strictly increasing")


def _overlap(a, b):
    lo, hi = max(a.min(), b.min()), min(a.max(), b.max())
    inside = lambda v: int(np.sum((v >= lo) & (v <= hi)))  # noqa: E731
    if hi <= lo or inside(a) < 2 or inside(b) < 2:
        raise ValueError("insufficient overlap between the two RD curves")
    return lo, hi


def _mean_on(poly, lo, hi):
    integral = np.polyint(poly)
    return (np.polyval(integral, hi) - np.polyval(integral, lo)) / (hi - lo)


def bd_psnr(ref, test):
    """Average PSNR gain (dB) of ``test`` over ``ref`` across their common log-rate range."""
    ref, test = _curve(ref), _curve(test)
    lr_ref, lr_test = np.log10(ref.rates), np.log10(test.rates)
    lo, hi = _overlap(lr_ref, lr_test)
    p_ref = np.polyfit(lr_ref, ref.psnrs, 3)
    p_test = np.polyfit(lr_test, test.psnrs, 3)
    return _mean_on(p_test, lo, hi) - _mean_on(p_ref, lo, hi)


def bd_rate(ref, test):
    """Average rate difference (%) of ``test`` vs ``ref`` at equal PSNR; positive means more bits."""
    ref, test = _curve(ref), _curve(test)
    lo, hi = _overlap(ref.psnrs, test.psnrs)
    p_ref = np.polyfit(ref.psnrs, np.log10(ref.rates), 3)
    p_test = np.polyfit(test.psnrs, np.log10(test.rates), 3)
    diff = _mean_on(p_test, lo, hi) - _mean_on(p_ref, lo, hi)
    return (10.0**diff - 1.0) * 100.0


def bd_metrics(ref, test):
    """``(delta_psnr_db, delta_rate_percent)`` of ``test`` relative to ``ref``."""
    return bd_psnr(ref, test), bd_rate(ref, test)


def _curve(c):
    c = c if isinstance(c, RDCurve) else RDCurve(list(c))
    c.validate()
    return c


def read_rd_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[:2] != ["bpp", "psnr"]:
            raise ValueError(f"{path}: expected header 'bpp,psnr', got {','.join(header)}")
        return RDCurve([RDPoint(float(r[0]), float(r[1])) for r in reader if r])


def write_rd_csv(path, curve):
    points = curve.points if isinstance(curve, RDCurve) else [p if isinstance(p, RDPoint) else RDPoint(*p) for p in curve]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bpp", "psnr"])
        for p in points:
            w.writerow([repr(float(p.bpp)), repr(float(p.psnr))])


# -- parameter and MAC accounting -------------------------------------------
@dataclass
class ComplexityReport:
    resolution: tuple
    breakdown: dict = field(default_factory=dict)  # name -> (params, macs)
    rpe_params: int = 0

    @property
    def total_params(self):
        return sum(p for p, _ in self.breakdown.values())

    @property
    def macs(self):
        return sum(m for _, m in self.breakdown.values())

    def format(self, title="model"):
        H, W = self.resolution
        lines = [f"{title} @ {H}x{W}"]
        for name, (p, m) in self.breakdown.items():
            lines.append(f"  {name:<8} params {p:>12,d}   MACs {m:>16,d}")
        lines.append(f"  {'total':<8} params {self.total_params:>12,d}   MACs {self.macs:>16,d}")
        lines.append(f"  = {self.total_params / 1e6:.2f} M params, {self.macs / 1e9:.3f} GMACs")
        if self.rpe_params:
            lines.append(f"  relative-position tables: {self.rpe_params:,d} params")
        return "\n".join(lines)


def linear_cost(c_in, c_out, tokens, bias=True):
    return c_in * c_out + (c_out if bias else 0), tokens * c_in * c_out


def conv2d_cost(k, c_in, c_out, out_tokens, bias=True):
    return k * k * c_in * c_out + (c_out if bias else 0), out_tokens * k * k * c_in * c_out


def dsconv_cost(k, c_in, c_out, tokens):
    """Depthwise kernel without bias, pointwise with bias."""
    return k * k * c_in + c_in * c_out + c_out, tokens * (k * k * c_in + c_in * c_out)


def qkv_cost(cfg, C, tokens, window):
    heads = cfg.heads if cfg.heads and C % cfg.heads == 0 else default_heads(C)
    if cfg.projection == "conv-dsep":
        p, m = dsconv_cost(cfg.kernel, C, C, tokens)
        return 3 * p, 3 * m, 0
    p, m = linear_cost(C, C, tokens)
    rpe = (2 * window - 1) ** 2 * heads
    return 3 * p + rpe, 3 * m, rpe


def block_cost(cfg, C, h, w, window):
    """``(params, macs, rpe_params)`` of one Swin block on an ``h x w`` map."""
    tokens = h * w
    ew, _ = effective_window(h, w, window, 0)
    p_qkv, m_qkv, rpe = qkv_cost(cfg, C, tokens, window)
    p_proj, m_proj = linear_cost(C, C, tokens)
    p_fc1, m_fc1 = linear_cost(C, cfg.mlp_ratio * C, tokens)
    p_fc2, m_fc2 = linear_cost(cfg.mlp_ratio * C, C, tokens)
    m_attn = 2 * tokens * ew * ew * C  # QK^T and AV over nW windows and all heads
    params = 4 * C + p_qkv + p_proj + p_fc1 + p_fc2
    return params, m_qkv + m_attn + m_proj + m_fc1 + m_fc2, rpe


def merge_cost(c_in, c_out, out_tokens):
    p, m = linear_cost(4 * c_in, c_out, out_tokens)
    return p + 8 * c_in, m


def split_cost(c_in, c_out, in_tokens, norm=True):
    p, m = linear_cost(c_in, 4 * c_out, in_tokens)
    return p + (8 * c_out if norm else 0), m


def complexity_report(cfg, resolution=(256, 256)):
    """Exact parameter counts and MACs for the codec described by ``cfg``."""
    H, W = resolution
    d, c = cfg.depths, cfg.widths
    report = ComplexityReport((H, W))
    rpe_total = 0

    def blocks(C, depth, h, w, window):
        nonlocal rpe_total
        p, m, r = block_cost(cfg, C, h, w, window)
        rpe_total += depth * r
        return depth * p, depth * m

    # analysis
    P = M = 0
    h, w, prev = H, W, 3
    for i in range(4):
        h, w = h // 2, w // 2
        p, m = merge_cost(prev, c[i], h * w)
        bp, bm = blocks(c[i], d[i], h, w, cfg.window_g)
        P, M, prev = P + p + bp, M + m + bm, c[i]
    report.breakdown["g_a"] = (P, M)
    yh, yw = h, w

    P = M = 0
    for i in (4, 5):
        h, w = h // 2, w // 2
        p, m = merge_cost(c[i - 1], c[i], h * w)
        bp, bm = blocks(c[i], d[i], h, w, cfg.window_h)
        P, M = P + p + bp, M + m + bm
    report.breakdown["h_a"] = (P, M)
    zh, zw = h, w

    P = M = 0
    for i, c_out in ((5, c[4]), (4, c[3])):
        bp, bm = blocks(c[i], d[i], h, w, cfg.window_h)
        p, m = split_cost(c[i], c_out, h * w)
        P, M = P + p + bp, M + m + bm
        h, w = 2 * h, 2 * w
    p, m = linear_cost(c[3], 2 * c[3], h * w)
    report.breakdown["h_s"] = (P + p, M + m)

    P = M = 0
    h, w = yh, yw
    for i in (3, 2, 1, 0):
        bp, bm = blocks(c[i], d[i], h, w, cfg.window_g)
        p, m = split_cost(c[i], c[i - 1] if i else 3, h * w, norm=i > 0)
        P, M = P + p + bp, M + m + bm
        h, w = 2 * h, 2 * w
    report.breakdown["g_s"] = (P, M)

    P = M = 0
    sizes = cfg.slice_sizes()
    for i, n in enumerate(sizes):
        p1, m1 = linear_cost(2 * c[3] + sum(sizes[:i]), 2 * n, yh * yw)
        p2, m2 = linear_cost(2 * n, 2 * n, yh * yw)
        P, M = P + p1 + p2, M + m1 + m2
    report.breakdown["charm"] = (P, M)

    dims = (1, 3, 3, 3, 1)
    per_channel = sum(a * b for a, b in zip(dims[:-1], dims[1:]))
    per_channel_params = per_channel + sum(dims[1:]) + sum(dims[1:-1])
    report.breakdown["z_prior"] = (c[5] * per_channel_params, zh * zw * c[5] * per_channel)
    report.rpe_params = rpe_total
    return report


def parameter_breakdown(model):
    """Brute-force parameter count per top-level network from a built model."""
    out = {}
    for name, p in model.named_parameters():
        top = name.split(".", 1)[0]
        out[top] = out.get(top, 0) + p.size
    return out
