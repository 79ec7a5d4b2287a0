"""Dense float64 linear algebra and a hand-differentiated embedding MLP.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 in C order.
The network maps inputs through affine layers with ReLU between them and a
final row-wise L2 normalization, so every embedding lies on the unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ContractError, DegenerateInputError, NumericError, ShapeError

# Rows with a norm below this are rejected instead of being padded with an
# epsilon, which keeps the normalization Jacobian exact.
NORM_FLOOR = 1e-12


@numba.njit(cache=True)
def _matmul_kernel(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    # i-k-j order: each out[i, j] still accumulates over k = 0..k-1 in sequence,
    # so results are bitwise equal to the textbook triple loop.
    for i in range(m):
        for t in range(k):
            x = a[i, t]
            for j in range(n):
                out[i, j] += x * b[t, j]
    return out


def as_matrix(x, name="matrix"):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def matmul(a, b):
    """Matrix product with a fixed summation order.

    Each output element is accumulated left to right over the shared
    dimension, which makes the result deterministic and independent of the
    BLAS build.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[1]))
    return _check_finite(_matmul_kernel(a, b), "matmul output")


def l2_normalize(v):
    """Scale ``v`` to unit Euclidean norm.

    A 1-D input is treated as one vector; a 2-D input is normalized row by row.
    """
    v = np.asarray(v, dtype=np.float64)
    norms = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if np.any(norms < NORM_FLOOR):
        raise DegenerateInputError("cannot normalize a (near-)zero vector")
    return v / norms


def l2_normalize_backward(v, grad_out):
    """Vector-Jacobian product of :func:`l2_normalize` at ``v``.

    Returns ``(grad_out - v_hat <v_hat, grad_out>) / ||v||``; the radial
    component of ``grad_out`` is removed. Works row-wise for 2-D inputs.
    """
    v = np.asarray(v, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if v.shape != grad_out.shape:
        raise ShapeError(f"v {v.shape} and grad_out {grad_out.shape} differ")
    norms = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if np.any(norms < NORM_FLOOR):
        raise DegenerateInputError("normalization Jacobian undefined at zero")
    v_hat = v / norms
    radial = np.sum(v_hat * grad_out, axis=-1, keepdims=True)
    return (grad_out - v_hat * radial) / norms


@dataclass
class EmbeddingNet:
    """Feed-forward network ``x -> normalize(W_L relu(... relu(W_1 x + b_1)) + b_L)``.

    ``weights[k]`` has shape (out, in). ``version`` is bumped whenever the
    parameters are changed through :meth:`mark_updated`, which invalidates
    outstanding forward caches.
    """

    weights: list
    biases: list
    version: int = 0

    def __post_init__(self):
        if not self.weights:
            raise ShapeError("network needs at least one layer")
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases differ in length")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} expects {w.shape[1]} inputs, "
                    f"previous layer emits {self.weights[k - 1].shape[0]}"
                )

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def dims(self):
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def parameters(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def mark_updated(self):
        self.version += 1

    def copy(self):
        return EmbeddingNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.version,
        )


@dataclass
class ParamGradients:
    """Gradients laid out exactly like the parameters of an ``EmbeddingNet``."""

    weights: list
    biases: list

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])


@dataclass
class ForwardCache:
    net: EmbeddingNet
    version: int
    activations: list  # inputs to each layer
    preacts: list  # affine outputs of each layer
    used: bool = field(default=False)


def init_params(dims, seed):
    """Build an ``EmbeddingNet`` for the layer widths ``dims`` = [in, h1, ..., D].

    Weights are uniform in +-sqrt(6 / fan_in); biases start at zero.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ShapeError("need an input width and at least one layer width")
    if any(d <= 0 for d in dims):
        raise ShapeError(f"layer widths must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EmbeddingNet(weights, biases)


def net_forward(net, batch):
    """Embed each row of ``batch``; returns ``(embeddings, cache)``."""
    x = as_matrix(batch, "batch")
    if x.shape[1] != net.input_dim:
        raise ShapeError(f"batch has {x.shape[1]} features, net expects {net.input_dim}")
    activations, preacts = [], []
    a = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        activations.append(a)
        z = matmul(a, w.T) + b
        preacts.append(z)
        a = np.maximum(z, 0.0) if k < last else z
    emb = l2_normalize(a)
    return emb, ForwardCache(net, net.version, activations, preacts)


def net_backward(net, cache, grad_embeddings):
    """Parameter gradients given dL/d(embeddings), summed over the batch.

    The cache is consumed: a second call with the same cache, or a call after
    the parameters changed, raises ``ContractError``.
    """
    if cache.net is not net:
        raise ContractError("cache was produced by a different network")
    if cache.used:
        raise ContractError("forward cache already consumed by a backward pass")
    if cache.version != net.version:
        raise ContractError("parameters changed since the forward pass")
    g = as_matrix(grad_embeddings, "grad_embeddings")
    out = cache.preacts[-1]
    if g.shape != out.shape:
        raise ShapeError(f"grad shape {g.shape} does not match embeddings {out.shape}")
    cache.used = True

    g = l2_normalize_backward(out, g)
    n_layers = len(net.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1:
            # ReLU subgradient at exactly 0 is taken as 0
            g = g * (cache.preacts[k] > 0.0)
        gw[k] = matmul(g.T, cache.activations[k])
        gb[k] = g.sum(axis=0)
        if k:
            g = matmul(g, net.weights[k])
    return ParamGradients(gw, gb)
