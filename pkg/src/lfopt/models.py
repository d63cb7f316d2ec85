"""Loss families and their gradients.

Three flavors share one flat-parameter interface: L2-regularized logistic
regression and hinge SVM on binary labels, and a one-hidden-layer sigmoid MLP
with softmax output where the L2 term covers the weight matrices but not the
biases.  Evaluators are stateless and safe to call concurrently with distinct
output buffers; the parameter input may be a lock-free snapshot, so nothing
here assumes it is internally consistent beyond finiteness.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import Dataset, SparseVector, dot

KINDS = ("logreg", "svm", "mlp")


class NonFiniteParamsError(ValueError):
    """Parameter vector contains NaN or infinity."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    lam: float
    input_dim: int
    num_classes: int
    hidden_width: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.kind in ("logreg", "svm"):
            if self.num_classes != 2:
                raise ValueError(f"{self.kind} requires num_classes == 2")
        else:
            if self.num_classes < 2:
                raise ValueError("mlp requires num_classes >= 2")
            if self.hidden_width is None or self.hidden_width < 1:
                raise ValueError("mlp requires hidden_width >= 1")


@dataclass(frozen=True)
class ParameterLayout:
    """Named (offset, shape) segments tiling the flat parameter vector."""

    total_dim: int
    segments: tuple[tuple[str, int, tuple[int, ...]], ...]

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        for seg_name, offset, shape in self.segments:
            if seg_name == name:
                size = int(np.prod(shape))
                return params[offset : offset + size].reshape(shape)
        raise KeyError(name)


@lru_cache(maxsize=None)
def layout_for(spec: ModelSpec) -> ParameterLayout:
    if spec.kind in ("logreg", "svm"):
        return ParameterLayout(spec.input_dim, (("w", 0, (spec.input_dim,)),))
    d, h, k = spec.input_dim, spec.hidden_width, spec.num_classes
    segs = []
    offset = 0
    for name, shape in (("W1", (h, d)), ("b1", (h,)), ("W2", (k, h)), ("b2", (k,))):
        segs.append((name, offset, shape))
        offset += int(np.prod(shape))
    return ParameterLayout(offset, tuple(segs))


class GradientBuffer:
    """Flat gradient vector plus an optional sparse support index list.

    When ``support`` is not None it covers every nonzero coordinate and the
    entries outside it are exact zeros, so the dense view stays valid.
    """

    __slots__ = ("values", "support")

    def __init__(self, dim: int) -> None:
        self.values = np.zeros(dim)
        self.support: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def clear(self) -> None:
        if self.support is None:
            self.values[:] = 0.0
        else:
            self.values[self.support] = 0.0
        self.support = None


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Zeros for the linear models; for the MLP, weights drawn from a
    zero-mean Gaussian with variance 0.01 and biases zero."""
    layout = layout_for(spec)
    params = np.zeros(layout.total_dim)
    if spec.kind == "mlp":
        rng = np.random.default_rng(seed)
        for name in ("W1", "W2"):
            view = layout.view(params, name)
            view[:] = rng.normal(0.0, 0.1, size=view.shape)
    return params


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid: separate forms for each sign of z."""
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax; safe for logits up to +-700."""
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def _check_inputs(spec: ModelSpec, params: np.ndarray, instance: SparseVector, label: int) -> None:
    layout = layout_for(spec)
    if params.shape != (layout.total_dim,):
        raise ValueError(f"params length {params.shape} != {layout.total_dim}")
    if instance.dim > spec.input_dim:
        raise ValueError("instance dim exceeds model input_dim")
    if not 0 <= label < spec.num_classes:
        raise ValueError(f"label {label} out of range")
    if not np.all(np.isfinite(params)):
        raise NonFiniteParamsError("non-finite parameter")


def _mlp_forward(spec: ModelSpec, params: np.ndarray, instance: SparseVector):
    layout = layout_for(spec)
    W1 = layout.view(params, "W1")
    b1 = layout.view(params, "b1")
    W2 = layout.view(params, "W2")
    b2 = layout.view(params, "b2")
    if instance.nnz:
        z1 = W1[:, instance.indices] @ instance.values + b1
    else:
        z1 = b1.copy()
    hidden = sigmoid(z1)
    z2 = W2 @ hidden + b2
    return W1, b1, W2, b2, hidden, z2


def loss_single(spec: ModelSpec, params: np.ndarray, instance: SparseVector, label: int) -> float:
    """Per-instance loss including the L2 term (weights only for the MLP)."""
    _check_inputs(spec, params, instance, label)
    if spec.kind == "logreg":
        y = 1.0 if label == 1 else -1.0
        margin = y * dot(instance, params)
        return float(np.logaddexp(0.0, -margin)) + 0.5 * spec.lam * float(params @ params)
    if spec.kind == "svm":
        y = 1.0 if label == 1 else -1.0
        slack = 1.0 - y * dot(instance, params)
        return max(0.0, slack) + 0.5 * spec.lam * float(params @ params)
    W1, _, W2, _, _, z2 = _mlp_forward(spec, params, instance)
    zmax = z2.max()
    logsum = zmax + math.log(np.exp(z2 - zmax).sum())
    reg = 0.5 * spec.lam * (float((W1 * W1).sum()) + float((W2 * W2).sum()))
    return float(logsum - z2[label]) + reg


def grad_single(
    spec: ModelSpec,
    params: np.ndarray,
    instance: SparseVector,
    label: int,
    out: GradientBuffer,
) -> None:
    """Write the per-instance gradient into ``out``.

    For the linear models with lam == 0 the support is exactly the instance's
    support; any regularized or MLP gradient is dense (support None).
    """
    _check_inputs(spec, params, instance, label)
    if out.dim != layout_for(spec).total_dim:
        raise ValueError("gradient buffer has wrong length")

    if spec.kind in ("logreg", "svm"):
        y = 1.0 if label == 1 else -1.0
        margin = y * dot(instance, params)
        if spec.kind == "logreg":
            coef = -_sigmoid_scalar(-margin) * y
        else:
            # Hinge tie-break: the subgradient term only for a strict margin violation.
            coef = -y if 1.0 - margin > 0.0 else 0.0
        if spec.lam > 0.0:
            np.multiply(params, spec.lam, out=out.values)
            out.values[instance.indices] += coef * instance.values
            out.support = None
        else:
            out.clear()
            out.values[instance.indices] = coef * instance.values
            out.support = instance.indices
        return

    W1, _, W2, _, hidden, z2 = _mlp_forward(spec, params, instance)
    layout = layout_for(spec)
    probs = softmax(z2)
    d2 = probs
    d2[label] -= 1.0
    dh = W2.T @ d2
    d1 = dh * hidden * (1.0 - hidden)

    gW1 = layout.view(out.values, "W1")
    gb1 = layout.view(out.values, "b1")
    gW2 = layout.view(out.values, "W2")
    gb2 = layout.view(out.values, "b2")
    np.multiply(W1, spec.lam, out=gW1)
    if instance.nnz:
        gW1[:, instance.indices] += np.outer(d1, instance.values)
    gb1[:] = d1
    np.multiply(W2, spec.lam, out=gW2)
    gW2 += np.outer(d2, hidden)
    gb2[:] = d2
    out.support = None


def _block_loss_grad(
    spec: ModelSpec, params: np.ndarray, data: Dataset, start: int, end: int
) -> tuple[float, np.ndarray]:
    """Sum (not mean) of losses and gradients over instances [start, end)."""
    layout = layout_for(spec)
    X = data.feature_matrix[start:end]
    labels = data.labels[start:end]
    count = end - start
    grad = np.zeros(layout.total_dim)

    if spec.kind in ("logreg", "svm"):
        w = params
        y = data.signed_labels[start:end]
        margins = y * (X @ w)
        if spec.kind == "logreg":
            losses = np.logaddexp(0.0, -margins)
            coefs = -sigmoid(-margins) * y
        else:
            slack = 1.0 - margins
            losses = np.maximum(slack, 0.0)
            coefs = -y * (slack > 0.0)
        grad[:] = X.T @ coefs + count * spec.lam * w
        loss_sum = float(losses.sum()) + count * 0.5 * spec.lam * float(w @ w)
        return loss_sum, grad

    W1 = layout.view(params, "W1")
    b1 = layout.view(params, "b1")
    W2 = layout.view(params, "W2")
    b2 = layout.view(params, "b2")
    Z1 = X @ W1.T + b1
    A = sigmoid(Z1)
    Z2 = A @ W2.T + b2
    zmax = Z2.max(axis=1)
    logsum = zmax + np.log(np.exp(Z2 - zmax[:, None]).sum(axis=1))
    losses = logsum - Z2[np.arange(count), labels]
    P = np.exp(Z2 - logsum[:, None])
    D2 = P
    D2[np.arange(count), labels] -= 1.0
    DH = D2 @ W2
    D1 = DH * A * (1.0 - A)

    layout.view(grad, "W1")[:] = (X.T @ D1).T + count * spec.lam * W1
    layout.view(grad, "b1")[:] = D1.sum(axis=0)
    layout.view(grad, "W2")[:] = D2.T @ A + count * spec.lam * W2
    layout.view(grad, "b2")[:] = D2.sum(axis=0)
    reg = 0.5 * spec.lam * (float((W1 * W1).sum()) + float((W2 * W2).sum()))
    loss_sum = float(losses.sum()) + count * reg
    return loss_sum, grad


def full_loss_and_grad(
    spec: ModelSpec, params: np.ndarray, data: Dataset, parts: int = 1
) -> tuple[float, GradientBuffer]:
    """Exact mean loss and gradient over the whole dataset.

    With parts > 1 the instance range is split into static contiguous blocks
    evaluated on worker threads; per-block sums are combined in block order,
    so the result is bit-deterministic regardless of thread scheduling.
    """
    _check_inputs(spec, params, data.instances[0], int(data.labels[0]))
    if parts < 1:
        raise ValueError("parts must be >= 1")
    n = data.n
    parts = min(parts, n)
    bounds = [((b * n) // parts, ((b + 1) * n) // parts) for b in range(parts)]
    results: list[tuple[float, np.ndarray] | None] = [None] * parts

    if parts == 1:
        results[0] = _block_loss_grad(spec, params, data, 0, n)
    else:
        def run(b: int, s: int, e: int) -> None:
            results[b] = _block_loss_grad(spec, params, data, s, e)

        threads = [threading.Thread(target=run, args=(b, s, e)) for b, (s, e) in enumerate(bounds)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()

    loss_sum = 0.0
    out = GradientBuffer(layout_for(spec).total_dim)
    for res in results:
        assert res is not None
        loss_sum += res[0]
        out.values += res[1]
    out.values /= n
    out.support = None
    return loss_sum / n, out


def lipschitz_bound(spec: ModelSpec, data: Dataset) -> float:
    """Upper bound on the per-instance gradient Lipschitz constant.

    For the SVM only the smooth (regularizer) part is covered; the hinge
    subgradient jump is handled separately through grad_bound.
    """
    if spec.kind == "logreg":
        return float(data.row_norms_sq.max()) / 4.0 + spec.lam
    if spec.kind == "svm":
        return spec.lam
    raise ValueError("lipschitz_bound unsupported for mlp (not globally smooth)")


def grad_bound(spec: ModelSpec, data: Dataset, radius: float) -> float:
    """Bound V with ||grad_i(w)|| <= V for all i and ||w|| <= radius."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if spec.kind in ("logreg", "svm"):
        return float(np.sqrt(data.row_norms_sq.max())) + spec.lam * radius
    raise ValueError("grad_bound unsupported for mlp")
