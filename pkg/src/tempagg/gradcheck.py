"""Central finite-difference gradient checking.

The numerical side only ever calls the forward function, so it shares no code
path with the analytic gradients it verifies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import Batch, ModelConfig, ModelParams, ensemble_loss, model_forward
from .tensor import Tensor, backward

# below this magnitude both gradients count as zero
ABS_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    name: str
    max_rel_err: float
    coords_checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
    return np.abs(analytic - numeric) / denom


def numerical_grad(f: Callable[[], float], x: np.ndarray, coords: Sequence[tuple[int, ...]],
                   eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. the given coordinates of ``x`` (perturbed in place)."""
    out = np.empty(len(coords))
    for n, c in enumerate(coords):
        orig = x[c]
        x[c] = orig + eps
        fp = f()
        x[c] = orig - eps
        fm = f()
        x[c] = orig
        out[n] = (fp - fm) / (2 * eps)
    return out


def sample_coords(shape: tuple[int, ...], limit: int | None,
                  rng: np.random.Generator) -> list[tuple[int, ...]]:
    total = int(np.prod(shape)) if shape else 1
    if limit is None or total <= limit:
        flat = np.arange(total)
    else:
        flat = rng.choice(total, size=limit, replace=False)
    return [tuple(int(i) for i in np.unravel_index(k, shape)) for k in flat]


def check_gradients(loss_fn: Callable[[], Tensor], inputs: dict[str, Tensor], eps: float = 1e-5,
                    max_coords: int | None = None, seed: int = 0) -> list[GradcheckResult]:
    """Compare backward() against central differences for each named input.

    ``loss_fn`` must rebuild the graph from the current contents of the
    inputs each call and return a scalar tensor; it must be deterministic.
    """
    rng = np.random.default_rng(seed)
    for t in inputs.values():
        t.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
                for k, t in inputs.items()}

    def f() -> float:
        return float(loss_fn().data)

    results = []
    for name, t in inputs.items():
        coords = sample_coords(t.shape, max_coords, rng)
        num = numerical_grad(f, t.data, coords, eps)
        ana = np.array([analytic[name][c] for c in coords])
        err = relative_error(ana, num)
        results.append(GradcheckResult(name, float(err.max()) if err.size else 0.0, len(coords)))
    return results


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum_all(T.mul(out, Tensor(weights)))


def op_checks(seed: int = 0, eps: float = 1e-5) -> list[GradcheckResult]:
    """Gradient check of every differentiable op on random 64-bit inputs."""
    rng = np.random.default_rng(seed)
    f64 = np.float64

    def leaf(shape, data=None):
        arr = rng.standard_normal(shape) if data is None else data
        return Tensor(arr.astype(f64), requires_grad=True)

    def run(name, build, inputs):
        w = rng.standard_normal(build().shape)
        res = check_gradients(lambda: _weighted(build(), w), inputs, eps=eps, seed=seed)
        return GradcheckResult(name, max(r.max_rel_err for r in res), sum(r.coords_checked for r in res))

    results = []
    a, b = leaf((3, 4)), leaf((4, 2))
    results.append(run("matmul", lambda: T.matmul(a, b), {"a": a, "b": b}))
    a3, b3 = leaf((2, 3, 4)), leaf((2, 4, 5))
    results.append(run("matmul_batched", lambda: T.matmul(a3, b3), {"a": a3, "b": b3}))
    a4, w4 = leaf((2, 3, 4)), leaf((4, 3))
    results.append(run("matmul_shared", lambda: T.matmul(a4, w4), {"a": a4, "w": w4}))
    x = leaf((2, 5))
    results.append(run("softmax_rows", lambda: T.softmax_rows(x), {"x": x}))
    xr = leaf((3, 4), _away_from_zero(rng, (3, 4)))
    results.append(run("relu", lambda: T.relu(xr), {"x": xr}))
    p, q = leaf((2, 3, 4)), leaf((4,))
    results.append(run("add_bias", lambda: T.add(p, q), {"a": p, "b": q}))
    p2, q2 = leaf((3, 4)), leaf((3, 4))
    results.append(run("add", lambda: T.add(p2, q2), {"a": p2, "b": q2}))
    results.append(run("mul", lambda: T.mul(p2, q2), {"a": p2, "b": q2}))
    c1, c2 = leaf((2, 1)), leaf((2, 3))
    results.append(run("concat", lambda: T.concat([c1, c2], axis=1), {"a": c1, "b": c2}))
    s1, s2 = leaf((2, 3)), leaf((2, 3))
    results.append(run("stack", lambda: T.stack([s1, s2], axis=1), {"a": s1, "b": s2}))
    xs = leaf((3, 2))
    results.append(run("scale", lambda: T.scale(xs, -2.5), {"x": xs}))
    results.append(run("transpose", lambda: T.transpose(a3), {"x": a3}))
    results.append(run("reshape", lambda: T.reshape(a3, (6, 4)), {"x": a3}))
    results.append(run("mean", lambda: T.mean(a3, axis=1), {"x": a3}))
    # well-separated entries so no +-eps perturbation changes the argmax
    xm = leaf((2, 4, 3), rng.permutation(24).reshape(2, 4, 3) * 0.1)
    results.append(run("max_over_axis", lambda: T.max_over_axis(xm, 1), {"x": xm}))
    xd = leaf((4, 5))

    def drop():
        return T.dropout(xd, 0.3, True, np.random.default_rng(seed + 1))

    results.append(run("dropout", drop, {"x": xd}))
    logits = leaf((3, 5))
    labels = rng.integers(5, size=3)
    res = check_gradients(lambda: T.cross_entropy(logits, labels), {"logits": logits}, eps=eps)
    results.append(GradcheckResult("cross_entropy", res[0].max_rel_err, res[0].coords_checked))
    return results


TINY_MODEL = dict(input_dim=6, num_classes=5, n_recent=2, spanning_scales=(2, 3), hidden=8, proj=8)
TINY_K_RECENT = 2


def model_check(seed: int = 0, eps: float = 1e-5, max_coords: int | None = 12,
                train: bool = True) -> list[GradcheckResult]:
    """Gradient check of loss + ensemble read-out w.r.t. every parameter of a tiny model (64-bit)."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(**TINY_MODEL, dropout=0.3)
    params = ModelParams.init(cfg, rng, dtype=np.float64)
    b = 3
    batch = Batch(rng.standard_normal((b, cfg.n_recent, TINY_K_RECENT, cfg.input_dim)),
                  tuple(rng.standard_normal((b, k, cfg.input_dim)) for k in cfg.spanning_scales))
    labels = rng.integers(cfg.num_classes, size=b)
    readout = rng.standard_normal((b, cfg.num_classes))

    def loss_fn():
        out = model_forward(params, batch, train=train, rng=np.random.default_rng(seed + 7))
        return T.add(ensemble_loss(out, labels), _weighted(out.ensemble_probs, readout))

    return check_gradients(loss_fn, params.tensors, eps=eps, max_coords=max_coords, seed=seed)


def run_suite(seed: int = 0) -> list[GradcheckResult]:
    return op_checks(seed) + [GradcheckResult(f"model:{r.name}", r.max_rel_err, r.coords_checked)
                              for r in model_check(seed)]
