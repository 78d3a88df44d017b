"""Minimal dense feedforward engine for the log-density-ratio model.

The only architecture supported is a scalar-output multilayer perceptron
with equal-width hidden layers and leaky-rectifier activations (negative
slope 0.2 by default).  Everything is float64 numpy; the backward passes
(gradients with respect to parameters and with respect to inputs) are
hand-coded, there is no autodiff graph.

Networks are immutable values: ``optimizer_step`` returns fresh
``RatioNetwork`` / ``OptimizerState`` instances instead of mutating.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "RatioNetwork",
    "OptimizerState",
    "network_init",
    "forward",
    "grad_params",
    "grad_input",
    "grad_input_batch",
    "init_optimizer",
    "optimizer_step",
    "checkpoint_dumps",
    "checkpoint_loads",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class RatioNetwork:
    """Scalar-output MLP, weights stored as (fan_out, fan_in) per layer.

    The last affine layer has no activation; all earlier layers are
    followed by a leaky rectifier with negative-branch slope
    ``activation_slope``.
    """

    layer_weights: tuple[np.ndarray, ...]
    layer_biases: tuple[np.ndarray, ...]
    activation_slope: float = 0.2

    def __post_init__(self):
        if len(self.layer_weights) != len(self.layer_biases):
            raise ValueError("weights and biases must pair up layer by layer")
        if len(self.layer_weights) < 1:
            raise ValueError("network needs at least one affine layer")
        if not (0.0 < self.activation_slope < 1.0):
            raise ValueError(f"activation_slope must lie in (0, 1), got {self.activation_slope}")
        for i, (w, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} are incompatible")
            if i > 0 and w.shape[1] != self.layer_weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: fan_in {w.shape[1]} does not match previous fan_out "
                    f"{self.layer_weights[i - 1].shape[0]}"
                )
        if self.layer_weights[-1].shape[0] != 1:
            raise ValueError("final layer must have a single output")
        hidden = {w.shape[0] for w in self.layer_weights[:-1]}
        if len(hidden) > 1:
            raise ValueError(f"hidden layers must share one width, got {sorted(hidden)}")

    @property
    def input_dim(self) -> int:
        return self.layer_weights[0].shape[1]

    @property
    def depth(self) -> int:
        return len(self.layer_weights)

    @property
    def hidden_width(self) -> int:
        return self.layer_weights[0].shape[0] if self.depth > 1 else 1


@dataclass(frozen=True)
class OptimizerState:
    """Adaptive-moment (or plain SGD) state mirroring the network shapes."""

    m_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]
    step_count: int
    learning_rate: float
    moment_decays: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    method: str = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        b1, b2 = self.moment_decays
        if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
            raise ValueError("moment decays must lie in (0, 1)")
        if self.method not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")


def network_init(
    input_dim: int,
    depth: int,
    width: int,
    seed: int,
    activation_slope: float = 0.2,
) -> RatioNetwork:
    """Build a depth-layer MLP: depth-1 hidden layers of ``width``, 1 output.

    Weights are zero-mean normal with std gain/sqrt(fan_in) (leaky-rectifier
    gain); biases start at zero.  Deterministic under ``seed``.
    """
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if depth < 2:
        raise ValueError("depth must be >= 2 (at least one hidden layer)")
    if width < 1:
        raise ValueError("width must be >= 1")
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0 / (1.0 + activation_slope**2))
    dims = [input_dim] + [width] * (depth - 1) + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = gain / np.sqrt(fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return RatioNetwork(tuple(weights), tuple(biases), activation_slope)


def _forward_pass(net: RatioNetwork, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Forward pass over a batch.

    Returns (acts, masks): ``acts[0]`` is the input, ``acts[i + 1]`` the
    output of layer i (activated for hidden layers, raw affine for the
    last); ``masks[i]`` is the activation derivative of hidden layer i (1
    on the non-negative branch, including pre-activations exactly at 0,
    else the leaky slope), computed once here and reused by the backward
    passes.
    """
    acts = [x]
    masks: list[np.ndarray] = []
    a = x
    last = len(net.layer_weights) - 1
    for i, (w, b) in enumerate(zip(net.layer_weights, net.layer_biases)):
        z = a @ w.T
        z += b
        if i < last:
            # z >= 0 (incl. exact kinks) -> 1, else the leaky slope;
            # arithmetic on the bool is much faster than np.where here
            mask = net.activation_slope + (1.0 - net.activation_slope) * (z >= 0.0)
            z *= mask
            masks.append(mask)
        a = z
        acts.append(a)
    return acts, masks


def _forward_acts(net: RatioNetwork, x: np.ndarray) -> list[np.ndarray]:
    return _forward_pass(net, x)[0]


def _as_batch(net: RatioNetwork, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != net.input_dim:
            raise ValueError(f"input length {x.shape[0]} != network input_dim {net.input_dim}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"expected (n, {net.input_dim}) inputs, got shape {x.shape}")
    return x, False


def forward(net: RatioNetwork, x: np.ndarray) -> float | np.ndarray:
    """Evaluate the network: scalar for a single point, (n,) for a batch."""
    xb, single = _as_batch(net, x)
    out = _forward_acts(net, xb)[-1][:, 0]
    return float(out[0]) if single else out


def grad_params(
    net: RatioNetwork,
    output_grads: np.ndarray,
    inputs: np.ndarray,
    _pass: tuple[list[np.ndarray], list[np.ndarray]] | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradient of sum_i g_i * D(x_i) w.r.t. all weights and biases.

    Returns one (dW, db) pair per layer.  ``_pass`` lets callers reuse a
    cached forward pass.
    """
    inputs, _ = _as_batch(net, inputs)
    g = np.asarray(output_grads, dtype=float).reshape(-1)
    if g.shape[0] != inputs.shape[0]:
        raise ValueError(f"{g.shape[0]} output gradients for {inputs.shape[0]} inputs")
    acts, masks = _forward_pass(net, inputs) if _pass is None else _pass
    delta = g[:, None]
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * net.depth  # type: ignore[list-item]
    for i in reversed(range(net.depth)):
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = delta @ net.layer_weights[i]
            delta *= masks[i - 1]
    return grads


def grad_input_batch(net: RatioNetwork, x: np.ndarray) -> np.ndarray:
    """Input gradients for a batch: row i is the gradient of D at x[i]."""
    xb, _ = _as_batch(net, x)
    _, masks = _forward_pass(net, xb)
    delta = np.ones((xb.shape[0], 1))
    for i in reversed(range(net.depth)):
        delta = delta @ net.layer_weights[i]
        if i > 0:
            delta *= masks[i - 1]
    return delta


def grad_input(net: RatioNetwork, x: np.ndarray) -> np.ndarray:
    """Gradient of the network output with respect to a single input point."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("grad_input takes a single point; use grad_input_batch for batches")
    return grad_input_batch(net, x[None, :])[0]


def init_optimizer(
    net: RatioNetwork,
    learning_rate: float = 5e-4,
    moment_decays: tuple[float, float] = (0.9, 0.999),
    epsilon: float = 1e-8,
    method: str = "adam",
) -> OptimizerState:
    zeros_w = tuple(np.zeros_like(w) for w in net.layer_weights)
    zeros_b = tuple(np.zeros_like(b) for b in net.layer_biases)
    return OptimizerState(
        m_weights=zeros_w,
        m_biases=zeros_b,
        v_weights=tuple(np.zeros_like(w) for w in net.layer_weights),
        v_biases=tuple(np.zeros_like(b) for b in net.layer_biases),
        step_count=0,
        learning_rate=learning_rate,
        moment_decays=moment_decays,
        epsilon=epsilon,
        method=method,
    )


def optimizer_step(
    net: RatioNetwork,
    state: OptimizerState,
    grads: list[tuple[np.ndarray, np.ndarray]],
) -> tuple[RatioNetwork, OptimizerState]:
    """One bias-corrected adaptive-moment (or plain SGD) update."""
    if len(grads) != net.depth:
        raise ValueError(f"{len(grads)} gradient pairs for a depth-{net.depth} network")
    for i, ((gw, gb), w, b) in enumerate(zip(grads, net.layer_weights, net.layer_biases)):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ValueError(f"layer {i}: gradient shapes do not mirror parameter shapes")
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise ValueError(f"non-finite gradient in layer {i}")

    t = state.step_count + 1
    lr = state.learning_rate
    if state.method == "sgd":
        new_w = tuple(w - lr * gw for w, (gw, _) in zip(net.layer_weights, grads))
        new_b = tuple(b - lr * gb for b, (_, gb) in zip(net.layer_biases, grads))
        new_state = replace(state, step_count=t)
    else:
        b1, b2 = state.moment_decays
        eps = state.epsilon
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        mw, mb, vw, vb, new_w, new_b = [], [], [], [], [], []
        for w, b, (gw, gb), m_w, m_b, v_w, v_b in zip(
            net.layer_weights,
            net.layer_biases,
            grads,
            state.m_weights,
            state.m_biases,
            state.v_weights,
            state.v_biases,
        ):
            m_w = b1 * m_w + (1.0 - b1) * gw
            m_b = b1 * m_b + (1.0 - b1) * gb
            v_w = b2 * v_w + (1.0 - b2) * gw**2
            v_b = b2 * v_b + (1.0 - b2) * gb**2
            new_w.append(w - lr * (m_w / c1) / (np.sqrt(v_w / c2) + eps))
            new_b.append(b - lr * (m_b / c1) / (np.sqrt(v_b / c2) + eps))
            mw.append(m_w)
            mb.append(m_b)
            vw.append(v_w)
            vb.append(v_b)
        new_state = replace(
            state,
            m_weights=tuple(mw),
            m_biases=tuple(mb),
            v_weights=tuple(vw),
            v_biases=tuple(vb),
            step_count=t,
        )
    new_net = RatioNetwork(tuple(new_w), tuple(new_b), net.activation_slope)
    return new_net, new_state


def checkpoint_dumps(net: RatioNetwork) -> str:
    """Self-describing JSON checkpoint; float round-trip is exact."""
    blob = {
        "format": "entflow-mlp-v1",
        "activation_slope": net.activation_slope,
        "layer_shapes": [list(w.shape) for w in net.layer_weights],
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(net.layer_weights, net.layer_biases)
        ],
    }
    return json.dumps(blob)


def checkpoint_loads(text: str) -> RatioNetwork:
    blob = json.loads(text)
    if blob.get("format") != "entflow-mlp-v1":
        raise ValueError(f"unrecognized checkpoint format {blob.get('format')!r}")
    weights, biases = [], []
    for shape, layer in zip(blob["layer_shapes"], blob["layers"]):
        w = np.array(layer["weight"], dtype=float)
        if list(w.shape) != shape:
            raise ValueError(f"checkpoint weight shape {w.shape} != declared {shape}")
        weights.append(w)
        biases.append(np.array(layer["bias"], dtype=float))
    return RatioNetwork(tuple(weights), tuple(biases), float(blob["activation_slope"]))


def save_checkpoint(net: RatioNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_dumps(net))


def load_checkpoint(path) -> RatioNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return checkpoint_loads(fh.read())
