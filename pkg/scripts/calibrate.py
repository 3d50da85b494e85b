"""Desk-scale calibration run mirroring the acceptance fixtures.

Trains steps 0-3 at the desk-scale defaults on 5 sprite clips and reports
reconstruction PSNR against the bicubic baseline, endpoint errors for the
flow net, and wall-clock timings.  Not part of the shipped test suite.
"""

import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from helpers import sprite_clip, translation_clip

from awnet.datamodel import resize_bicubic
from awnet.flow import endpoint_error
from awnet.metrics import psnr
from awnet.recurrent import SynthesisContext, synthesize_sequence
from awnet.simulator import DegradationConfig, make_hsr_lfr, make_lsr_hfr
from awnet.training import (
    STEP_FLOW,
    STEP_FUSION,
    STEP_JOINT,
    PairSampler,
    TrainConfig,
    create_train_state,
    pretrain_flow,
    train_step1_flow,
    train_step2_fusion,
    train_step3_joint,
    save_train_state,
)

ITERS = json.loads(sys.argv[1]) if len(sys.argv) > 1 else {
    "pretrain": 2000, "flow": 2000, "fusion": 5000, "joint": 5000
}
OUT = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("/tmp/calib_state.ckpt")

torch.set_num_threads(1)
clips = [sprite_clip(s) for s in range(5)]
deg = DegradationConfig(n=4, m=8, exposure_frames=1, noise_variance=0.0, seed=0)
state = create_train_state(seed=0)
sampler = PairSampler(clips, n=4, crop=(64, 96))

timings = {}
t = time.time()
cfg1 = TrainConfig(step=STEP_FLOW, iterations=ITERS["flow"], batch_size=1,
                   crop=(64, 96), scale_n=4, seed=0, pretrain_iterations=ITERS["pretrain"])
pretrain_flow(state, sampler, cfg1)
timings["pretrain"] = time.time() - t
print(f"pretrain done in {timings['pretrain']:.0f}s, last loss {state.loss_history[-1]['loss']:.4f}", flush=True)

# flow quality after pretrain
def flow_epe():
    errs = []
    with torch.no_grad():
        for s in range(50, 60):
            d = (int(np.random.default_rng(s).integers(-6, 7)), int(np.random.default_rng(s + 1).integers(-6, 7)))
            clip = translation_clip(s, d)
            ref, tgt = clip[0].pixels, clip[1].pixels
            pred = state.flow_net.estimate(ref, tgt) * 4.0
            gt = torch.tensor([float(-d[0]), float(-d[1])])
            err = torch.linalg.norm(pred - gt, dim=-1)[2:-2, 2:-2].mean()
            errs.append(float(err))
    return float(np.mean(errs))

print(f"EPE after pretrain: {flow_epe():.3f} px", flush=True)

t = time.time()
train_step1_flow(state, sampler, cfg1)
timings["flow"] = time.time() - t
print(f"step1 done in {timings['flow']:.0f}s, EPE now {flow_epe():.3f} px", flush=True)

t = time.time()
cfg2 = TrainConfig(step=STEP_FUSION, iterations=ITERS["fusion"], batch_size=1, crop=(64, 96), scale_n=4, seed=0)
train_step2_fusion(state, sampler, cfg2)
timings["fusion"] = time.time() - t
print(f"step2 done in {timings['fusion']:.0f}s, loss {state.loss_history[-1]['loss']:.4f}", flush=True)

t = time.time()
cfg3 = TrainConfig(step=STEP_JOINT, iterations=ITERS["joint"], batch_size=1, crop=(64, 96), scale_n=4, seed=0)
train_step3_joint(state, sampler, cfg3)
timings["joint"] = time.time() - t
print(f"step3 done in {timings['joint']:.0f}s, loss {state.loss_history[-1]['loss']:.4f}", flush=True)

save_train_state(OUT, state, cfg3)

ctx = SynthesisContext(flow_estimator=state.flow_net, fusion_net=state.fusion_net)
aw, bc = [], []
t = time.time()
for clip in clips:
    hsr = make_hsr_lfr(clip, deg)
    lsr = make_lsr_hfr(clip, deg)
    res = synthesize_sequence(hsr, lsr, ctx)
    aw += [psnr(o.pixels, g.pixels) for o, g in zip(res.video.frames, clip.frames)]
    bc += [psnr(resize_bicubic(l.pixels, Fraction(4)), g.pixels) for l, g in zip(lsr.frames, clip.frames)]
timings["synth"] = time.time() - t
print(f"synthesis in {timings['synth']:.0f}s")
print(f"AWnet mean PSNR: {np.mean(aw):.2f} dB | bicubic: {np.mean(bc):.2f} dB | margin: {np.mean(aw)-np.mean(bc):.2f} dB")
print("timings:", {k: round(v) for k, v in timings.items()})
