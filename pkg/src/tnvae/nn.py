"""Dense numerical core: MLPs with exact reverse-mode gradients, Adam, and
diagonal-Gaussian utilities.

Everything runs in float64. All operations are pure given their inputs and
the caller's RngStream; no global random state is touched. Networks and
optimizer states are plain containers owned by one training run at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError, ShapeError, UsageError
from .rng import RngStream

HIDDEN_ACTIVATIONS = ("tanh", "relu", "identity")

# exp() of anything in this band stays comfortably inside float64 range
LOG_VAR_MIN = -30.0
LOG_VAR_MAX = 30.0


# ---------------------------------------------------------------------------
# multilayer perceptron


@dataclass
class MlpNetwork:
    """Fully connected stack: weights[i] has shape (out, in), biases[i] (out,).

    Hidden layers apply `hidden_activation`; the final layer is affine
    (identity output).
    """

    weights: list
    biases: list
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise UsageError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation != "identity":
            raise UsageError("only identity output activation is supported")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias vector per weight matrix")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} mismatch")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i}: in-dimension {w.shape[1]} does not chain with "
                    f"previous out-dimension {self.weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"non-finite parameters in layer {i}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list:
        """Flat parameter list [W0, b0, W1, b1, ...] (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )


def init_mlp(dims, rng: RngStream, hidden_activation="tanh") -> MlpNetwork:
    """Glorot-normal weights, zero biases, for the layer sizes in `dims`."""
    if len(dims) < 2:
        raise UsageError("need at least an input and an output dimension")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(scale * rng.standard_normal((fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(weights, biases, hidden_activation)


def _activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def _activate_grad(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    if name == "relu":
        return (a > 0.0).astype(np.float64)
    return np.ones_like(a)


def forward_pass(net: MlpNetwork, x: np.ndarray):
    """Batched forward pass. Returns (output, cache) for backward_pass.

    `x` is (batch, in_dim); every per-layer intermediate is checked finite.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {h.shape} incompatible with in_dim {net.in_dim}")
    inputs, preacts = [], []
    last = net.n_layers - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            inputs.append(h)
            a = h @ w.T + b
            if not np.isfinite(a).all():
                raise NumericError(f"non-finite pre-activation at layer {i}")
            preacts.append(a)
            h = a if i == last else _activate(net.hidden_activation, a)
    return h, (inputs, preacts)


def backward_pass(net: MlpNetwork, cache, grad_output: np.ndarray):
    """Exact reverse-mode gradients for a cached forward pass.

    Returns (grads, grad_input) where grads mirrors net.parameters().
    """
    inputs, preacts = cache
    dh = np.asarray(grad_output, dtype=np.float64)
    if dh.shape != preacts[-1].shape:
        raise ShapeError("grad_output shape does not match network output")
    grads = [None] * (2 * net.n_layers)
    last = net.n_layers - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(last, -1, -1):
            da = dh if i == last else dh * _activate_grad(net.hidden_activation, preacts[i])
            if not np.isfinite(da).all():
                raise NumericError(f"non-finite gradient at layer {i}")
            grads[2 * i] = da.T @ inputs[i]
            grads[2 * i + 1] = da.sum(axis=0)
            dh = da @ net.weights[i]
    return grads, dh


def mlp_forward(net: MlpNetwork, x: np.ndarray) -> np.ndarray:
    """Forward pass for a single vector or a (batch, in_dim) matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out, _ = forward_pass(net, x[None, :] if single else x)
    return out[0] if single else out


def mlp_gradient(net: MlpNetwork, loss_closure, inputs: np.ndarray):
    """Gradients of a scalar loss of the network outputs.

    `loss_closure(outputs) -> (loss, dloss_doutputs)` supplies the output
    gradient analytically; the rest is exact reverse mode through the net.
    Returns (loss, grads) with grads mirroring net.parameters().
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    out, cache = forward_pass(net, inputs)
    loss, dout = loss_closure(out)
    if not np.isfinite(loss):
        raise NumericError("loss closure returned a non-finite value")
    grads, _ = backward_pass(net, cache, dout)
    return float(loss), grads


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Adam accumulators; shapes mirror the parameter list exactly."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise UsageError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise UsageError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise UsageError("eps must be positive")


def init_adam(params, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
    )


def adam_step(state: AdamState, params, grads):
    """One Adam update with bias correction. Mutates params and state in place."""
    if len(params) != len(state.first_moment) or len(params) != len(grads):
        raise ShapeError("params/grads do not mirror the optimizer state")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# diagonal Gaussians


@dataclass
class DiagGaussian:
    """Diagonal Gaussian over a latent vector: mean and log-variance."""

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_var = np.asarray(self.log_var, dtype=np.float64)
        if self.mean.ndim != 1 or self.log_var.ndim != 1:
            raise ShapeError("mean and log_var must be vectors")
        if self.mean.shape != self.log_var.shape:
            raise ShapeError("mean and log_var must have equal length")
        if not (np.isfinite(self.mean).all() and np.isfinite(self.log_var).all()):
            raise NumericError("non-finite Gaussian parameters")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def clamp_log_var(log_var: np.ndarray) -> np.ndarray:
    """Clamp raw log-variance outputs into the numerically safe band."""
    return np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)


def kl_to_standard_normal(q: DiagGaussian) -> float:
    """KL(q || N(0, I)) in closed form: 0.5 * sum(mu^2 + var - 1 - log var)."""
    val = 0.5 * float(np.sum(q.mean**2 + np.exp(q.log_var) - 1.0 - q.log_var))
    if not np.isfinite(val):
        raise NumericError("KL divergence overflowed")
    # mathematically >= 0; clip float round-off near the prior
    return max(val, 0.0)


def reparameterize(q: DiagGaussian, rng: RngStream) -> np.ndarray:
    """Draw z = mean + exp(log_var / 2) * eps with eps ~ N(0, I) from rng."""
    eps = rng.standard_normal(q.dim)
    return q.mean + np.exp(0.5 * q.log_var) * eps


# ---------------------------------------------------------------------------
# checkpoint text blocks (bit-exact via float hex)


def network_to_lines(net: MlpNetwork, name: str) -> list:
    """Serialize a network as a named text block; floats as C99 hex."""
    lines = [f"[{name}]"]
    lines.append(f"hidden_activation = {net.hidden_activation}")
    lines.append(f"output_activation = {net.output_activation}")
    lines.append(f"n_layers = {net.n_layers}")
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"layer{i}_shape = {w.shape[0]} {w.shape[1]}")
        lines.append(f"layer{i}_w = " + " ".join(v.hex() for v in w.ravel().tolist()))
        lines.append(f"layer{i}_b = " + " ".join(v.hex() for v in b.tolist()))
    return lines


def network_from_lines(lines) -> MlpNetwork:
    """Inverse of network_to_lines; expects the block body (header stripped)."""
    fields = {}
    for line in lines:
        key, _, value = line.partition(" = ")
        fields[key.strip()] = value
    try:
        n_layers = int(fields["n_layers"])
        weights, biases = [], []
        for i in range(n_layers):
            out_dim, in_dim = (int(s) for s in fields[f"layer{i}_shape"].split())
            w = np.array([float.fromhex(h) for h in fields[f"layer{i}_w"].split()])
            b = np.array([float.fromhex(h) for h in fields[f"layer{i}_b"].split()])
            weights.append(w.reshape(out_dim, in_dim))
            biases.append(b)
        return MlpNetwork(
            weights, biases, fields["hidden_activation"], fields["output_activation"]
        )
    except (KeyError, ValueError) as exc:
        raise UsageError(f"malformed network block: {exc}") from exc


def save_network(path, net: MlpNetwork) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(["mlp-checkpoint v1"] + network_to_lines(net, "network")) + "\n")


def load_network(path) -> MlpNetwork:
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0] != "mlp-checkpoint v1":
        raise UsageError(f"{path} is not an mlp checkpoint")
    return network_from_lines(lines[2:])
