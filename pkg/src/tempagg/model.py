"""Non-local coupling network over recent and spanning snippet sets.

Data flow for one batch::

    recent set r, spanning set at scale K
        -> input projection (shared)
        -> coupling block (r, K): spanning self-attention, recent->spanning
           cross-attention, max-pool + projection per branch
        -> temporal aggregation block r: max over scales, fuse, classify
    ensemble = mean over TABs of softmax(logits)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

NLB_LAYERS = ("theta", "phi", "g", "out")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    n_recent: int
    spanning_scales: tuple[int, ...]
    hidden: int = 512
    proj: int = 512
    dropout: float = 0.3

    def __post_init__(self):
        if min(self.input_dim, self.num_classes, self.n_recent, self.hidden, self.proj) < 1:
            raise ValueError(f"all model widths and counts must be positive: {self}")
        if not self.spanning_scales:
            raise ValueError("at least one spanning scale is required")


class Batch(NamedTuple):
    recent: np.ndarray                 # B x n_recent x K_R x D
    spanning: tuple[np.ndarray, ...]   # per scale: B x K x D

    @classmethod
    def from_samples(cls, samples: Sequence) -> "Batch":
        recent = np.stack([s.recent for s in samples])
        spanning = tuple(np.stack([s.spanning[i] for s in samples])
                         for i in range(len(samples[0].spanning)))
        return cls(recent, spanning)

    def __len__(self):
        return self.recent.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.recent[idx], tuple(s[idx] for s in self.spanning))

    def astype(self, dtype) -> "Batch":
        return Batch(self.recent.astype(dtype, copy=False),
                     tuple(s.astype(dtype, copy=False) for s in self.spanning))


class ModelOutput(NamedTuple):
    tab_logits: list[Tensor]   # one B x C tensor per TAB
    ensemble_probs: Tensor     # B x C


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
        params = cls(config)
        for name, (fan_in, fan_out) in _layer_shapes(config):
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
            b = rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype)
            params.tensors[f"{name}.W"] = Tensor(w, requires_grad=True)
            params.tensors[f"{name}.b"] = Tensor(b, requires_grad=True)
        return params

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = dict(_param_shapes(self.config))
        if set(state) != set(expected):
            missing = sorted(set(expected) - set(state))
            extra = sorted(set(state) - set(expected))
            raise KeyError(f"parameter names differ; missing={missing[:5]} extra={extra[:5]}")
        self.tensors = {}
        for name, shape in expected.items():
            arr = np.asarray(state[name])
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.tensors[name] = Tensor(arr.copy(), requires_grad=True)

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _layer_shapes(cfg: ModelConfig):
    h, p = cfg.hidden, cfg.proj
    yield "input", (cfg.input_dim, h)
    for r in range(cfg.n_recent):
        for s in range(len(cfg.spanning_scales)):
            cb = f"tab{r}.cb{s}"
            for block in ("span", "cross"):
                for layer in NLB_LAYERS:
                    yield f"{cb}.{block}.{layer}", (h, h)
            yield f"{cb}.proj_recent", (h, p)
            yield f"{cb}.proj_span", (h, p)
        yield f"tab{r}.fuse", (2 * p, p)
        yield f"tab{r}.head", (p, cfg.num_classes)


def _param_shapes(cfg: ModelConfig):
    for name, (fan_in, fan_out) in _layer_shapes(cfg):
        yield f"{name}.W", (fan_in, fan_out)
        yield f"{name}.b", (fan_out,)


def linear(params: ModelParams, name: str, x: Tensor) -> Tensor:
    return T.add(T.matmul(x, params[f"{name}.W"]), params[f"{name}.b"])


def nlb_forward(params: ModelParams, prefix: str, query: Tensor, context: Tensor, train: bool,
                rng: np.random.Generator | None, trace: list | None = None) -> Tensor:
    """Embedded-Gaussian non-local block with a residual connection.

    query: B x q x d, context: B x k x d -> B x q x d.
    """
    if query.shape[-1] != context.shape[-1]:
        raise DimensionError(f"query width {query.shape} differs from context width {context.shape}")
    d = query.shape[-1]
    theta = linear(params, f"{prefix}.theta", query)
    phi = linear(params, f"{prefix}.phi", context)
    g = linear(params, f"{prefix}.g", context)
    scores = T.scale(T.matmul(theta, T.transpose(phi)), 1.0 / math.sqrt(d))
    attn = T.softmax_rows(scores)
    if trace is not None:
        trace.append(attn.data)
    y = linear(params, f"{prefix}.out", T.matmul(attn, g))
    return T.add(query, T.dropout(y, params.config.dropout, train, rng))


def cb_forward(params: ModelParams, prefix: str, recent: Tensor, spanning: Tensor, train: bool,
               rng: np.random.Generator | None, trace: list | None = None) -> tuple[Tensor, Tensor]:
    """Coupling block: returns (recent_repr, span_repr), each B x proj."""
    span_ctx = nlb_forward(params, f"{prefix}.span", spanning, spanning, train, rng, trace)
    rec_ctx = nlb_forward(params, f"{prefix}.cross", recent, span_ctx, train, rng, trace)
    recent_repr = T.relu(linear(params, f"{prefix}.proj_recent", T.max_over_axis(rec_ctx, 1)))
    span_repr = T.relu(linear(params, f"{prefix}.proj_span", T.max_over_axis(span_ctx, 1)))
    return recent_repr, span_repr


def tab_forward(params: ModelParams, index: int, recent: Tensor, spanning: Sequence[Tensor],
                train: bool, rng: np.random.Generator | None,
                trace: list | None = None) -> tuple[Tensor, Tensor]:
    """Temporal aggregation block ``index``: returns (fused B x proj, logits B x C)."""
    n_scales = len(params.config.spanning_scales)
    if len(spanning) != n_scales:
        raise DimensionError(f"TAB expects {n_scales} spanning sets, got {len(spanning)}")
    recents, spans = [], []
    for s, span in enumerate(spanning):
        r, sp = cb_forward(params, f"tab{index}.cb{s}", recent, span, train, rng, trace)
        recents.append(r)
        spans.append(sp)
    recent_agg = T.max_over_axis(T.stack(recents, axis=1), 1)
    span_agg = T.max_over_axis(T.stack(spans, axis=1), 1)
    fused = T.relu(linear(params, f"tab{index}.fuse", T.concat([recent_agg, span_agg], axis=1)))
    return fused, linear(params, f"tab{index}.head", fused)


def model_forward(params: ModelParams, batch: Batch, train: bool = False,
                  rng: np.random.Generator | None = None,
                  trace: list | None = None) -> ModelOutput:
    cfg = params.config
    if batch.recent.ndim != 4 or batch.recent.shape[1] != cfg.n_recent:
        raise DimensionError(
            f"model has {cfg.n_recent} TABs but batch carries recent sets of shape {batch.recent.shape}")
    if len(batch.spanning) != len(cfg.spanning_scales):
        raise DimensionError(
            f"model expects {len(cfg.spanning_scales)} spanning scales, got {len(batch.spanning)}")
    dtype = params["input.W"].dtype
    spanning = [linear(params, "input", Tensor(s.astype(dtype, copy=False))) for s in batch.spanning]
    logits = []
    for r in range(cfg.n_recent):
        recent = linear(params, "input", Tensor(batch.recent[:, r].astype(dtype, copy=False)))
        _, tab_logits = tab_forward(params, r, recent, spanning, train, rng, trace)
        logits.append(tab_logits)
    probs = [T.softmax_rows(lg) for lg in logits]
    ensemble = probs[0] if len(probs) == 1 else T.mean(T.stack(probs, axis=0), axis=0)
    return ModelOutput(logits, ensemble)


def ensemble_loss(output: ModelOutput, labels) -> Tensor:
    """Unweighted sum of per-TAB cross-entropies."""
    total = T.cross_entropy(output.tab_logits[0], labels)
    for lg in output.tab_logits[1:]:
        total = T.add(total, T.cross_entropy(lg, labels))
    return total


def predict_proba(params: ModelParams, batch: Batch, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(batch), batch_size):
        sl = batch.take(slice(start, start + batch_size))
        out.append(model_forward(params, sl, train=False).ensemble_probs.data)
    return np.concatenate(out, axis=0)
