#!/usr/bin/env python3
"""Late fusion on synthetic data: one model per modality, then average voting.

Each modality sees the same segments but with its own noise and only a noisy
copy of the class cue, so the fused scores tend to beat the single modalities (with the defaults:
about 63-78% per modality, 93% fused).
"""

import argparse

import numpy as np

from tempagg import dataio
from tempagg.evaluate import PredictionMatrix, late_fuse, topk_accuracy
from tempagg.model import ModelConfig, ModelParams, predict_proba
from tempagg.sampler import EPIC100_ANTICIPATION
from tempagg.trainer import TrainConfig, fit

MODALITIES = ("rgb", "flow", "obj")


def degrade(seq, rng, keep):
    """Drop the cue on a random subset of coordinates and add extra noise."""
    f = seq.features.copy()
    mask = rng.random(f.shape[1]) > keep
    f[:, mask] = rng.uniform(0, 1.5, size=(f.shape[0], int(mask.sum())))
    return type(seq).uniform(seq.video_id, seq.modality, f, seq.fps)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=6)
    ap.add_argument("--videos", type=int, default=120)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--keep", type=float, default=0.6, help="fraction of cue coordinates each modality keeps")
    args = ap.parse_args()

    data = dataio.generate_synthetic(args.classes, args.videos, dim=24, segments_per_video=2,
                                     val_videos=args.videos // 4)
    train, val, _ = data.split()
    rng = np.random.default_rng(0)
    cfg = TrainConfig(epochs=args.epochs, lr0=1e-3)
    matrices = []
    for modality in MODALITIES:
        seqs = {s.video_id: degrade(s, rng, args.keep) for s in data.sequences}
        xtr, ytr = dataio.assemble(train, seqs, EPIC100_ANTICIPATION)
        xva, yva = dataio.assemble(val, seqs, EPIC100_ANTICIPATION)
        model = ModelParams.init(ModelConfig(24, args.classes, EPIC100_ANTICIPATION.n_recent,
                                             EPIC100_ANTICIPATION.spanning_scales, hidden=32, proj=32),
                                 np.random.default_rng(1))
        fit(model, xtr, ytr, cfg)
        probs = predict_proba(model, xva).astype(np.float64)
        matrices.append(PredictionMatrix(val.segment_ids, probs / probs.sum(1, keepdims=True)))
        print(f"{modality:5s} val top-1 {topk_accuracy(probs, yva, 1):5.1f}%")
    fused = late_fuse(matrices)
    print(f"fused val top-1 {topk_accuracy(fused.scores, yva, 1):5.1f}%")


if __name__ == "__main__":
    main()
