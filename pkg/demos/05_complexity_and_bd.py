"""
Counting parameters and comparing RD curves
===========================================
"""

from swinnpe.metrics import bd_metrics, complexity_report
from swinnpe.transforms import CodecConfig

cfg = CodecConfig.paper()
conv = complexity_report(cfg, (256, 256))
base = complexity_report(cfg.replace(projection="linear-rpe"), (256, 256))
print(conv.format("conv-Swin"))
print(base.format("baseline"))
print(f"conv minus baseline: {conv.total_params - base.total_params:+,d} params")

# Bjontegaard deltas: a codec needing 10% more bits everywhere
ref = [(0.12, 27.1), (0.25, 29.8), (0.5, 32.6), (1.0, 35.0)]
test = [(r * 1.1, q) for r, q in ref]
d_psnr, d_rate = bd_metrics(ref, test)
print(f"dPSNR {d_psnr:.3f} dB, drate {d_rate:.2f}%")
