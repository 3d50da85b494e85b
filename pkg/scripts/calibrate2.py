"""Recalibration after the correlation fix: flow EPE, step examples, margin."""

import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from helpers import sprite_clip, translation_clip

from awnet.datamodel import resize_bicubic
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
    save_train_state,
    train_step1_flow,
    train_step2_fusion,
    train_step3_joint,
)

torch.set_num_threads(1)

def epe_corpus(n=50, seed0=500):
    vr = np.random.default_rng(123)
    corpus = []
    for s in range(n):
        d = (int(vr.integers(-8, 9)), int(vr.integers(-8, 9)))
        if d == (0, 0):
            d = (4, -3)
        clip = translation_clip(seed0 + s, d, frames=2)
        corpus.append((clip[0].pixels, clip[1].pixels, d))
    return corpus

def mean_epe(net, corpus):
    errs = []
    with torch.no_grad():
        for ref, tgt, d in corpus:
            pred = net.estimate(ref, tgt) * 4.0
            gt = torch.tensor([float(d[0]), float(d[1])])
            errs.append(float(torch.linalg.norm(pred - gt, dim=-1)[1:-1, 1:-1].mean()))
    return float(np.mean(errs))

corpus = epe_corpus()
clips = [sprite_clip(s) for s in range(5)]
deg = DegradationConfig(n=4, m=8, exposure_frames=1, noise_variance=0.0, seed=0)

state = create_train_state(seed=0)
print("untrained EPE:", round(mean_epe(state.flow_net, corpus), 2), flush=True)
sampler = PairSampler(clips, n=4, crop=(64, 96))
cfg1 = TrainConfig(step=STEP_FLOW, iterations=2000, batch_size=1, crop=(64, 96), scale_n=4, seed=0, pretrain_iterations=2000)

t = time.time()
pretrain_flow(state, sampler, cfg1)
print(f"pretrain 2000 (b1): {time.time()-t:.0f}s, EPE {mean_epe(state.flow_net, corpus):.2f}", flush=True)

t = time.time()
train_step1_flow(state, sampler, cfg1)
print(f"step1 2000: {time.time()-t:.0f}s, EPE {mean_epe(state.flow_net, corpus):.2f}", flush=True)

t = time.time()
cfg2 = TrainConfig(step=STEP_FUSION, iterations=5000, batch_size=1, crop=(64, 96), scale_n=4, seed=0)
train_step2_fusion(state, sampler, cfg2)
print(f"step2 5000: {time.time()-t:.0f}s loss {state.loss_history[-1]['loss']:.4f}", flush=True)

t = time.time()
cfg3 = TrainConfig(step=STEP_JOINT, iterations=5000, batch_size=1, crop=(64, 96), scale_n=4, seed=0)
train_step3_joint(state, sampler, cfg3)
print(f"step3 5000: {time.time()-t:.0f}s loss {state.loss_history[-1]['loss']:.4f}", flush=True)
print("EPE after joint:", round(mean_epe(state.flow_net, corpus), 2), flush=True)

save_train_state("/tmp/calib2_state.ckpt", state, cfg3)

ctx = SynthesisContext(flow_estimator=state.flow_net, fusion_net=state.fusion_net)
aw, bc = [], []
for clip in clips:
    hsr = make_hsr_lfr(clip, deg)
    lsr = make_lsr_hfr(clip, deg)
    res = synthesize_sequence(hsr, lsr, ctx)
    aw += [psnr(o.pixels, g.pixels) for o, g in zip(res.video.frames, clip.frames)]
    bc += [psnr(resize_bicubic(l.pixels, Fraction(4)), g.pixels) for l, g in zip(lsr.frames, clip.frames)]
print(f"AWnet {np.mean(aw):.2f} dB | bicubic {np.mean(bc):.2f} dB | margin {np.mean(aw)-np.mean(bc):.2f} dB", flush=True)

# step-1 example: 200 iterations on a 10-triple translation corpus
rng = np.random.default_rng(0)
tclips = []
for s in range(10):
    d = (int(rng.integers(-6, 7)), int(rng.integers(-3, 4)))
    if d == (0, 0):
        d = (3, 1)
    tclips.append(translation_clip(100 + s, d, frames=2, h=48, w=64))
st = create_train_state(seed=1)
ts = PairSampler(tclips, n=4, crop=(48, 64))
cfgp = TrainConfig(step=STEP_FLOW, iterations=0, batch_size=2, crop=(48, 64), scale_n=4, pretrain_iterations=800)
t = time.time()
pretrain_flow(st, ts, cfgp)
n0 = len(st.loss_history)
cfgs1 = TrainConfig(step=STEP_FLOW, iterations=200, batch_size=2, learning_rate=1e-4, crop=(48, 64), scale_n=4, seed=1)
train_step1_flow(st, ts, cfgs1)
losses = [r["loss"] for r in st.loss_history[n0:]]
first, last = np.mean(losses[:20]), np.mean(losses[-20:])
print(f"step1-example: {first:.4f} -> {last:.4f} drop {(1-last/first)*100:.0f}% ({time.time()-t:.0f}s)", flush=True)

# overfit one triple, 500 iterations
clip = sprite_clip(5, frames=2, h=64, w=96)
st2 = create_train_state(seed=0)
s2 = PairSampler([clip], n=4, crop=(64, 96))
cfgp2 = TrainConfig(step=STEP_FLOW, iterations=200, batch_size=2, crop=(64, 96), scale_n=4, pretrain_iterations=800, learning_rate=1e-5)
t = time.time()
pretrain_flow(st2, s2, cfgp2)
train_step1_flow(st2, s2, cfgp2)
cfgo = TrainConfig(step=STEP_FUSION, iterations=500, batch_size=1, crop=(64, 96), scale_n=4, seed=0)
train_step2_fusion(st2, s2, cfgo)
tail = [r["loss"] for r in st2.loss_history[-20:]]
print(f"overfit: last-20 {np.mean(tail):.4f} last {st2.loss_history[-1]['loss']:.4f} ({time.time()-t:.0f}s)", flush=True)
