"""Small numpy network stack: dense layers, LSTM, ADAM.

Reverse-mode gradients are hand-written per layer. Forward passes push a
backward closure onto a ``GradientTape``; since both networks here are
plain chains, ``backward`` just walks the tape in reverse, collecting
parameter gradients and passing the input gradient down.
"""

from __future__ import annotations

import numpy as np


class TapeReusedError(RuntimeError):
    pass


class TrainingDivergenceError(FloatingPointError):
    """Raised when an optimizer step sees non-finite gradients."""


def sigmoid(z):
    # tanh form is overflow-free and avoids masking
    return 0.5 * np.tanh(0.5 * np.asarray(z, dtype=float)) + 0.5


def softplus(z):
    """log(1 + exp(z)) without overflow."""
    return np.logaddexp(0.0, z)


ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear", "scaled_sigmoid")


def _activate(kind: str, z: np.ndarray, cap: float):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    if kind == "scaled_sigmoid":
        return cap * sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind: str, z: np.ndarray, y: np.ndarray, cap: float):
    if kind == "relu":
        return (z > 0).astype(float)
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "linear":
        return np.ones_like(z)
    if kind == "scaled_sigmoid":
        s = y / cap
        return cap * s * (1.0 - s)
    raise ValueError(f"unknown activation {kind!r}")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class GradientTape:
    """Records backward closures for one forward pass; replayable once."""

    def __init__(self):
        self._ops = []
        self._consumed = False

    def push(self, name: str, backward_fn):
        if self._consumed:
            raise TapeReusedError("tape already consumed by backward()")
        self._ops.append((name, backward_fn))

    def __len__(self):
        return len(self._ops)


def backward(tape: GradientTape, loss_grad):
    """Run the tape in reverse.

    ``loss_grad`` is d(loss)/d(output of the last recorded op). Returns
    ``(param_grads, input_grad)`` where param_grads maps the recording
    op's parameter names to arrays.
    """
    if tape._consumed:
        raise TapeReusedError("tape already consumed by backward()")
    tape._consumed = True
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(loss_grad, dtype=float)
    for _, fn in reversed(tape._ops):
        g, pgrads = fn(g)
        for k, v in pgrads.items():
            grads[k] = grads[k] + v if k in grads else v
    return grads, g


class DenseLayer:
    """y = act(x W^T + b) on row batches; weights are (out, in)."""

    def __init__(self, weights, biases, activation: str = "linear", cap: float = 10.0, name: str = "dense"):
        self.weights = np.asarray(weights, dtype=float)
        self.biases = np.asarray(biases, dtype=float)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(f"{name}: inconsistent shapes {self.weights.shape} / {self.biases.shape}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.cap = cap
        self.name = name

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, activation: str = "linear", cap: float = 10.0, name: str = "dense"):
        w = glorot_uniform(rng, (n_out, n_in), n_in, n_out)
        return cls(w, np.zeros(n_out), activation, cap, name)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.weights": self.weights, f"{self.name}.biases": self.biases}

    def forward(self, x, tape: GradientTape | None = None, activation: str | None = None):
        """Forward on (batch, in) or (in,). ``activation`` overrides the layer's own."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected input width {self.n_in}, got {x.shape[-1]}")
        kind = self.activation if activation is None else activation
        z = x @ self.weights.T + self.biases
        y = _activate(kind, z, self.cap)
        if tape is not None:
            W, name, cap = self.weights, self.name, self.cap

            def back(gy):
                gz = gy * _activation_grad(kind, z, y, cap)
                gz2 = gz.reshape(-1, gz.shape[-1])
                x2 = x.reshape(-1, x.shape[-1])
                return gz @ W, {f"{name}.weights": gz2.T @ x2, f"{name}.biases": gz2.sum(axis=0)}

            tape.push(name, back)
        return y


def dense_forward(layer: DenseLayer, x):
    return layer.forward(x)


class LstmCell:
    """Single-layer LSTM; gate blocks stacked as [input, forget, output, candidate].

    ``weights`` is (..., 4H, in+H) and ``biases`` (..., 4H). Leading
    dimensions index independent cells evaluated side by side (the
    discriminator keeps one cell per sensor channel in one array).
    """

    GATES = ("input", "forget", "output", "candidate")

    def __init__(self, weights, biases, name: str = "lstm"):
        self.weights = np.asarray(weights, dtype=float)
        self.biases = np.asarray(biases, dtype=float)
        h4 = self.weights.shape[-2]
        if h4 % 4 or self.biases.shape != self.weights.shape[:-1]:
            raise ValueError(f"{name}: inconsistent LSTM shapes {self.weights.shape} / {self.biases.shape}")
        self.name = name

    @classmethod
    def init(cls, rng, n_in: int, hidden: int, bank: tuple[int, ...] = (), forget_bias: float = 1.0, name="lstm"):
        w = glorot_uniform(rng, bank + (4 * hidden, n_in + hidden), n_in + hidden, hidden)
        b = np.zeros(bank + (4 * hidden,))
        b[..., hidden:2 * hidden] = forget_bias
        return cls(w, b, name)

    @property
    def hidden_size(self) -> int:
        return self.weights.shape[-2] // 4

    @property
    def input_size(self) -> int:
        return self.weights.shape[-1] - self.hidden_size

    def gate(self, which: str):
        """(weights, biases) views of one gate block."""
        k = self.GATES.index(which)
        H = self.hidden_size
        return self.weights[..., k * H:(k + 1) * H, :], self.biases[..., k * H:(k + 1) * H]

    def cell(self, index: int) -> "LstmCell":
        """View of one cell of a bank; shares memory with the bank."""
        c = LstmCell.__new__(LstmCell)
        c.weights, c.biases, c.name = self.weights[index], self.biases[index], f"{self.name}[{index}]"
        return c

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.weights": self.weights, f"{self.name}.biases": self.biases}

    def forward(self, xs, tape: GradientTape | None = None, h0=None, c0=None, return_state: bool = False):
        """Run the recurrence over xs shaped (..., T, B, in); returns final h (..., B, H)."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim < 3:
            raise ValueError("sequence must be shaped (..., T, B, in)")
        T = xs.shape[-3]
        if T == 0:
            raise ValueError("empty sequence")
        if xs.shape[-1] != self.input_size:
            raise ValueError(f"{self.name}: expected step width {self.input_size}, got {xs.shape[-1]}")
        H, I = self.hidden_size, self.input_size
        W = self.weights
        Wx = W[..., :I]
        Wh = W[..., I:]
        lead = xs.shape[:-3]
        B = xs.shape[-2]
        # input projections for every step at once: (..., T, B, 4H)
        WxT = np.swapaxes(Wx, -1, -2)[..., None, :, :]
        WhT = np.swapaxes(Wh, -1, -2)
        xproj = xs @ WxT + self.biases[..., None, None, :]
        h = np.zeros(lead + (B, H)) if h0 is None else np.asarray(h0, dtype=float)
        c = np.zeros(lead + (B, H)) if c0 is None else np.asarray(c0, dtype=float)
        hs = np.empty(lead + (T + 1, B, H))
        cs = np.empty(lead + (T + 1, B, H))
        acts = np.empty(lead + (T, B, 5 * H))  # i, f, o, g, tanh(c) per step
        hs[..., 0, :, :] = h
        cs[..., 0, :, :] = c
        for t in range(T):
            z = xproj[..., t, :, :] + h @ WhT
            z[..., :3 * H] *= 0.5
            a = acts[..., t, :, :]
            np.tanh(z, out=a[..., :4 * H])
            a[..., :3 * H] *= 0.5
            a[..., :3 * H] += 0.5
            i, f, g = a[..., :H], a[..., H:2 * H], a[..., 3 * H:4 * H]
            c = f * c + i * g
            np.tanh(c, out=a[..., 4 * H:])
            h = a[..., 2 * H:3 * H] * a[..., 4 * H:]
            hs[..., t + 1, :, :] = h
            cs[..., t + 1, :, :] = c
        if tape is not None:
            name = self.name

            def back(gh):
                gh = np.array(gh, dtype=float)
                gc = np.zeros_like(gh)
                gz_all = np.empty(lead + (T, B, 4 * H))
                for t in reversed(range(T)):
                    a = acts[..., t, :, :]
                    i, f, o, g, tc = (a[..., k * H:(k + 1) * H] for k in range(5))
                    gc += gh * o * (1.0 - tc * tc)
                    gz = gz_all[..., t, :, :]
                    gz[..., :H] = gc * g * i * (1 - i)
                    gz[..., H:2 * H] = gc * cs[..., t, :, :] * f * (1 - f)
                    gz[..., 2 * H:3 * H] = gh * tc * o * (1 - o)
                    gz[..., 3 * H:] = gc * i * (1 - g * g)
                    gh = gz @ Wh
                    gc *= f
                # weight gradients for all steps in one product each
                gz_flat = gz_all.reshape(lead + (T * B, 4 * H))
                gzT = np.swapaxes(gz_flat, -1, -2)
                gW_x = gzT @ xs.reshape(lead + (T * B, I))
                gW_h = gzT @ hs[..., :T, :, :].reshape(lead + (T * B, H))
                gb = gz_flat.sum(axis=-2)
                gxs = gz_all @ Wx[..., None, :, :]
                gW = np.concatenate([gW_x, gW_h], axis=-1)
                return gxs, {f"{name}.weights": gW, f"{name}.biases": gb}

            tape.push(name, back)
        if return_state:
            return h, c
        return h


def lstm_forward(cell: LstmCell, sequence):
    """Final hidden state for a list of input vectors (single cell, batch of one)."""
    seq = [np.asarray(v, dtype=float) for v in sequence]
    if not seq:
        raise ValueError("empty sequence")
    xs = np.stack(seq)[:, None, :]
    return cell.forward(xs)[0]


class Adam:
    """ADAM with bias correction; updates parameter arrays in place."""

    def __init__(self, learning_rate: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(f"non-finite gradient for {k}")
            if g.shape != params[k].shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {params[k].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        # lr * (m/bc1) / (sqrt(v/bc2) + eps), rearranged to touch each array fewer times
        step = self.learning_rate * np.sqrt(bc2) / bc1
        eps = self.epsilon * np.sqrt(bc2)
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            denom = np.sqrt(v)
            denom += eps
            np.divide(m, denom, out=denom)
            denom *= step
            params[k] -= denom

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in self.m:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        self.m, self.v = {}, {}
        for key, arr in arrays.items():
            if key.startswith(prefix + ".m."):
                self.m[key[len(prefix) + 3:]] = np.array(arr, dtype=float)
            elif key.startswith(prefix + ".v."):
                self.v[key[len(prefix) + 3:]] = np.array(arr, dtype=float)


def adam_step(state: Adam, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> Adam:
    state.step(params, grads)
    return state
