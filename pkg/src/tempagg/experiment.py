"""The synthetic end-to-end experiment shared by the acceptance test and scripts/."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from .evaluate import topk_accuracy
from .model import ModelConfig, ModelParams, predict_proba
from .sampler import EPIC100_ANTICIPATION, SamplingConfig
from .trainer import EpochStats, TrainConfig, fit


@dataclass(frozen=True)
class SyntheticSetup:
    num_classes: int = 10
    num_videos: int = 100
    segments_per_video: int = 5
    val_videos: int = 20          # 20 videos x 5 segments = 100 val segments, 400 train
    dim: int = 40
    fps: float = 10.0
    data_seed: int = 0
    hidden: int = 512
    proj: int = 512


@dataclass
class SyntheticResult:
    history: list[EpochStats]
    val_top1: list[float]          # after each epoch
    oracle_top1: float
    seconds: float
    num_parameters: int
    train_size: int
    val_size: int
    params: ModelParams | None = field(default=None, repr=False)


def run_synthetic(setup: SyntheticSetup = SyntheticSetup(), train: TrainConfig | None = None,
                  sampling: SamplingConfig | None = None, verbose: bool = False) -> SyntheticResult:
    train = train or TrainConfig.for_task("anticipation")
    sampling = sampling or EPIC100_ANTICIPATION
    data = dataio.generate_synthetic(setup.num_classes, setup.num_videos, fps=setup.fps, dim=setup.dim,
                                     seed=setup.data_seed, segments_per_video=setup.segments_per_video,
                                     val_videos=setup.val_videos)
    seqs = {s.video_id: s for s in data.sequences}
    train_table, val_table, _ = data.split()
    xtr, ytr = dataio.assemble(train_table, seqs, sampling)
    xva, yva = dataio.assemble(val_table, seqs, sampling)
    # the generator's inverse rule, applied to the observed window only
    oracle = [dataio.oracle_label(seqs[r.video_id], r.start - sampling.anticipation_gap - 0.4,
                                  r.start - sampling.anticipation_gap, setup.num_classes)
              for r in val_table]
    oracle_top1 = 100.0 * float(np.mean(np.array(oracle) == yva))

    cfg = ModelConfig(setup.dim, setup.num_classes, sampling.n_recent, sampling.spanning_scales,
                      hidden=setup.hidden, proj=setup.proj, dropout=train.dropout)
    rng = np.random.default_rng(train.seed)
    params = ModelParams.init(cfg, rng)
    val_top1: list[float] = []

    def on_epoch_end(epoch, params, state, rng):
        val_top1.append(topk_accuracy(predict_proba(params, xva), yva, 1))
        if verbose:
            print(f"epoch {epoch:2d} val top-1 {val_top1[-1]:.1f}%", flush=True)

    def log(stats):
        if verbose:
            print(f"epoch {stats.epoch:2d} lr {stats.lr:g} loss {stats.loss:.4f} "
                  f"train acc {stats.train_acc:.1f}%", flush=True)

    t0 = time.perf_counter()
    history = fit(params, xtr, ytr, train, log=log, on_epoch_end=on_epoch_end, rng=rng)
    seconds = time.perf_counter() - t0
    return SyntheticResult(history, val_top1, oracle_top1, seconds, params.num_parameters(),
                           len(ytr), len(yva), params)
