"""Minimal dense-network engine: forward evaluation, exact reverse-mode
gradients, and Adam updates for small fixed-topology MLPs.

Everything is float64. The hot loops live in a compiled extension with a
NumPy fallback (see ``volcraft._backends``); both obey the same tie-breaks,
notably relu'(0) = 0.

Gradients are returned as ``[(grad_weights, grad_biases), ...]`` mirroring
the layer list, and are gradients of ``output . cotangent`` summed over the
batch when a batch is passed.
"""

from dataclasses import dataclass, field

import numpy as np

from volcraft._backends import kernels
from volcraft.errors import ShapeError, TrainingDivergenceError

IDENTITY = "identity"
RELU = "relu"
SIGMOID = "sigmoid"
SOFTPLUS = "softplus"

ACTIVATION_CODES = {IDENTITY: 0, RELU: 1, SIGMOID: 2, SOFTPLUS: 3}


def _as_matrix(a):
    return np.ascontiguousarray(a, dtype=np.float64)


@dataclass
class LayerParams:
    """One dense layer: out = activation(weights @ in + biases)."""

    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self):
        self.weights = _as_matrix(self.weights)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise ShapeError("weights must be 2-D and biases 1-D")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise ShapeError(
                f"bias length {self.biases.shape[0]} != weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass
class MlpParams:
    """Ordered stack of dense layers with consistent interface dims."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"layer output dim {prev.out_dim} feeds layer expecting {nxt.in_dim}"
                )

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def _kernel_args(self):
        weights = [l.weights for l in self.layers]
        biases = [l.biases for l in self.layers]
        acts = np.array([ACTIVATION_CODES[l.activation] for l in self.layers], dtype=np.int64)
        return weights, biases, acts

    def copy(self):
        return MlpParams(
            [LayerParams(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers]
        )


def init_mlp(layer_dims, activations, rng):
    """Glorot-uniform initialization: U(+-sqrt(6/(fan_in+fan_out))), zero biases.

    ``layer_dims`` is [in, h1, ..., out]; ``activations`` has one entry per
    layer (len(layer_dims) - 1).
    """
    if len(activations) != len(layer_dims) - 1:
        raise ShapeError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(layer_dims, layer_dims[1:], activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(LayerParams(w, np.zeros(fan_out), act))
    return MlpParams(layers)


def _check_input(params, x, batched):
    x = _as_matrix(x)
    if batched:
        if x.ndim != 2 or x.shape[1] != params.in_dim:
            raise ShapeError(f"expected (n, {params.in_dim}) input, got {x.shape}")
    else:
        if x.ndim != 1 or x.shape[0] != params.in_dim:
            raise ShapeError(f"expected length-{params.in_dim} input, got {x.shape}")
    return x


def forward(params, x):
    """Evaluate the network on a single input vector."""
    x = _check_input(params, x, batched=False)
    w, b, acts = params._kernel_args()
    return kernels.mlp_forward(w, b, acts, x[None, :])[0]


def forward_batch(params, x):
    """Evaluate the network on an (n, in_dim) batch; rows are independent."""
    x = _check_input(params, x, batched=True)
    w, b, acts = params._kernel_args()
    return kernels.mlp_forward(w, b, acts, x)


def backward(params, x, output_cotangent):
    """Gradients of output . cotangent w.r.t. every parameter and the input."""
    x = _check_input(params, x, batched=False)
    cot = np.ascontiguousarray(output_cotangent, dtype=np.float64)
    if cot.shape != (params.out_dim,):
        raise ShapeError(f"cotangent must have shape ({params.out_dim},), got {cot.shape}")
    w, b, acts = params._kernel_args()
    gw, gb, gx = kernels.mlp_backward(w, b, acts, x[None, :], cot[None, :])
    return list(zip(gw, gb)), gx[0]


def backward_batch(params, x, output_cotangents):
    """Batched ``backward``: parameter grads are summed over the batch."""
    x = _check_input(params, x, batched=True)
    cot = _as_matrix(output_cotangents)
    if cot.shape != (x.shape[0], params.out_dim):
        raise ShapeError(
            f"cotangents must have shape ({x.shape[0]}, {params.out_dim}), got {cot.shape}"
        )
    w, b, acts = params._kernel_args()
    gw, gb, gx = kernels.mlp_backward(w, b, acts, x, cot)
    return list(zip(gw, gb)), gx


def forward_cached(params, x):
    """Batched forward returning the cache consumed by ``backward_cached``."""
    x = _check_input(params, x, batched=True)
    w, b, acts = params._kernel_args()
    out, inputs, pres = kernels.mlp_forward_cache(w, b, acts, x)
    return out, (inputs, pres)

def backward_cached(params, cache, output_cotangents):
    inputs, pres = cache
    w, _, acts = params._kernel_args()
    gw, gb, gx = kernels.mlp_backward_from_cache(w, acts, inputs, pres, output_cotangents)
    return list(zip(gw, gb)), gx


def zero_grads(params):
    return [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in params.layers]


def add_grads(acc, grads, scale=1.0):
    for (aw, ab), (gw, gb) in zip(acc, grads):
        aw += scale * gw
        ab += scale * gb
    return acc


@dataclass
class AdamState:
    """Adam accumulators mirroring an ``MlpParams``; single-writer."""

    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        m = [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in params.layers]
        v = [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in params.layers]
        return cls(m, v, 0, learning_rate, beta1, beta2, epsilon)


def adam_step(state, params, grads):
    """One Adam update with bias correction, in place on ``params``/``state``.

    Returns (params, state) for chaining. Raises on non-finite gradients.
    """
    if len(grads) != len(params.layers):
        raise ShapeError("gradient list does not mirror the layer list")
    for (gw, gb), layer in zip(grads, params.layers):
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise ShapeError("gradient shapes do not mirror the parameter shapes")
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise TrainingDivergenceError("non-finite gradient in adam_step")
    state.step_count += 1
    c1 = 1.0 - state.beta1 ** state.step_count
    c2 = 1.0 - state.beta2 ** state.step_count
    for (gw, gb), (mw, mb), (vw, vb), layer in zip(
        grads, state.first_moment, state.second_moment, params.layers
    ):
        kernels.adam_update(
            layer.weights.reshape(-1), gw.reshape(-1), mw.reshape(-1), vw.reshape(-1),
            c1, c2, state.learning_rate, state.beta1, state.beta2, state.epsilon,
        )
        kernels.adam_update(
            layer.biases, gb, mb, vb,
            c1, c2, state.learning_rate, state.beta1, state.beta2, state.epsilon,
        )
    return params, state
