"""Dense feed-forward networks with manual backpropagation and Adam.

Everything here is plain numpy in float64. Networks are value objects: the
caller owns them and serializes access.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _apply(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    return z


def _apply_grad(name, z, y, grad):
    # grad of loss w.r.t. pre-activation, given grad w.r.t. activation output y
    if name == "relu":
        return grad * (z > 0.0)
    if name == "tanh":
        return grad * (1.0 - y * y)
    if name == "sigmoid":
        return grad * y * (1.0 - y)
    return grad


class DenseNet:
    """Fully connected network ``layer_sizes[0] -> ... -> layer_sizes[-1]``."""

    def __init__(
        self,
        layer_sizes,
        hidden_activation="relu",
        output_activation="identity",
        rng=None,
        final_layer_scale=1.0,
    ):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = layer_sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        rng = np.random.default_rng() if rng is None else rng
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            b = rng.uniform(-bound, bound, size=n_out)
            if i == len(layer_sizes) - 2:
                w *= final_layer_scale
                b *= final_layer_scale
            self.weights.append(w)
            self.biases.append(b)

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    @property
    def n_layers(self):
        return len(self.weights)

    def params(self):
        """Parameter arrays in a fixed order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params):
        if len(params) != 2 * self.n_layers:
            raise ValueError("parameter list length mismatch")
        for i in range(self.n_layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError(f"shape mismatch in layer {i}")
            self.weights[i] = np.array(w, dtype=np.float64)
            self.biases[i] = np.array(b, dtype=np.float64)

    def copy(self):
        new = object.__new__(DenseNet)
        new.layer_sizes = list(self.layer_sizes)
        new.hidden_activation = self.hidden_activation
        new.output_activation = self.output_activation
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def check_finite(self):
        for i, p in enumerate(self.params()):
            if not np.all(np.isfinite(p)):
                raise NonFiniteError(f"non-finite parameter in array {i}")

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (B, {self.in_dim}), got {x.shape}")
        return x

    def forward(self, x):
        x = self._check_input(x)
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = _apply(self.output_activation if i == last else self.hidden_activation, z)
        return h

    def forward_cached(self, x):
        """Forward pass that keeps what ``backward`` needs.

        Returns ``(output, cache)``; ``cache["pre"][-1]`` is the output
        pre-activation.
        """
        x = self._check_input(x)
        acts = [x]
        pres = []
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            pres.append(z)
            acts.append(_apply(self.output_activation if i == last else self.hidden_activation, z))
        return acts[-1], {"acts": acts, "pre": pres}

    def backward(self, cache, grad_out, grad_pre_out=None):
        """Backpropagate ``grad_out`` (dL/d output) through a cached pass.

        ``grad_pre_out`` is an optional extra gradient w.r.t. the output
        pre-activation (used for penalties on it). Returns
        ``(param_grads, grad_input)`` with ``param_grads`` ordered like
        :meth:`params`.
        """
        acts, pres = cache["acts"], cache["pre"]
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != acts[-1].shape:
            raise ValueError(f"upstream gradient shape {grad_out.shape} != output {acts[-1].shape}")
        grads = [None] * (2 * self.n_layers)
        g = _apply_grad(self.output_activation, pres[-1], acts[-1], grad_out)
        if grad_pre_out is not None:
            g = g + grad_pre_out
        for i in range(self.n_layers - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = _apply_grad(self.hidden_activation, pres[i - 1], acts[i], g)
        return grads, g

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient passed to Adam")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


class Optimizer:
    """Binds a network to its Adam state."""

    def __init__(self, net, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.net = net
        self.state = AdamState.for_params(
            net.params(), learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon
        )

    def step(self, grads):
        params = self.net.params()
        adam_step(params, grads, self.state)
        self.net.check_finite()


class Normalizer:
    """Running mean/std normalizer with clipping in standard-deviation units."""

    def __init__(self, size, clip_range=5.0, eps=1e-2, enabled=True):
        self.size = int(size)
        self.clip_range = float(clip_range)
        self.eps = float(eps)
        self.enabled = bool(enabled)
        self.sum = np.zeros(self.size)
        self.sumsq = np.zeros(self.size)
        self.count = 0.0
        self.mean = np.zeros(self.size)
        self.std = np.ones(self.size)

    def update(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.size)
        self.sum += x.sum(axis=0)
        self.sumsq += (x * x).sum(axis=0)
        self.count += x.shape[0]
        self.mean = self.sum / self.count
        var = np.maximum(self.eps**2, self.sumsq / self.count - self.mean**2)
        self.std = np.sqrt(var)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if not self.enabled:
            return x
        return np.clip((x - self.mean) / self.std, -self.clip_range, self.clip_range)

    def state_arrays(self):
        return {
            "sum": self.sum,
            "sumsq": self.sumsq,
            "count": np.array(self.count),
            "mean": self.mean,
            "std": self.std,
        }

    def load_arrays(self, arrays):
        self.sum = np.array(arrays["sum"], dtype=np.float64)
        self.sumsq = np.array(arrays["sumsq"], dtype=np.float64)
        self.count = float(arrays["count"])
        self.mean = np.array(arrays["mean"], dtype=np.float64)
        self.std = np.array(arrays["std"], dtype=np.float64)


CHECKPOINT_VERSION = 1


def net_arrays(net, prefix):
    out = {f"{prefix}p{i}": p for i, p in enumerate(net.params())}
    out[f"{prefix}meta"] = np.array(json.dumps(net.to_dict()))
    return out


def net_from_arrays(arrays, prefix):
    meta = json.loads(str(arrays[f"{prefix}meta"]))
    net = DenseNet(meta["layer_sizes"], meta["hidden_activation"], meta["output_activation"],
                   rng=np.random.default_rng(0))
    net.set_params([arrays[f"{prefix}p{i}"] for i in range(2 * net.n_layers)])
    return net


def adam_arrays(state, prefix):
    out = {
        f"{prefix}hyper": np.array(
            [state.learning_rate, state.beta1, state.beta2, state.epsilon, state.step_count], dtype=np.float64
        )
    }
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        out[f"{prefix}m{i}"] = m
        out[f"{prefix}v{i}"] = v
    return out


def adam_from_arrays(arrays, prefix, n):
    lr, b1, b2, eps, steps = arrays[f"{prefix}hyper"]
    return AdamState(
        learning_rate=float(lr), beta1=float(b1), beta2=float(b2), epsilon=float(eps),
        step_count=int(steps),
        m=[np.array(arrays[f"{prefix}m{i}"]) for i in range(n)],
        v=[np.array(arrays[f"{prefix}v{i}"]) for i in range(n)],
    )


def save_checkpoint(path, meta, arrays):
    """Write ``arrays`` plus a JSON ``meta`` record (with format version) to an ``.npz`` file."""
    meta = dict(meta, version=CHECKPOINT_VERSION)
    payload = dict(arrays)
    payload["__meta__"] = np.array(json.dumps(meta))
    tmp = f"{path}.tmp.npz"
    np.savez(tmp, **payload)
    os.replace(tmp, path)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    if "__meta__" not in arrays:
        raise ValueError(f"{path} is not a checkpoint (missing metadata)")
    meta = json.loads(str(arrays.pop("__meta__")))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
    return meta, arrays
