"""Adversarial training of the source-no-damage discriminator.

The discriminator D runs one LSTM per sensor channel over that channel's
spectral lines (reshaped into a short sequence), concatenates the final
hidden states and maps them through a small dense head to one sigmoid
unit. The generator G is an MLP from a 100-dim standard-normal latent to
a full feature vector bounded in [0, cap].

Training alternates one D step and one G step with ADAM. Every
``eval_interval`` iterations D scores held-out healthy windows and the
source damage windows; the checkpoint with the highest AUC whose scores
all stay below the score cap is kept.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .neural import Adam, DenseLayer, GradientTape, LstmCell, backward, sigmoid, softplus

log = logging.getLogger(__name__)

LATENT_DIM = 100
LN10 = math.log(10.0)
PROB_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"ZSSHMCK1"


class SelectionError(RuntimeError):
    """No logged checkpoint satisfies the score-cap rule."""


def sequence_steps(n_lines: int, preferred: int = 25) -> int:
    """Number of LSTM steps a channel's lines are folded into.

    ``preferred`` when it divides the line count, otherwise the largest
    divisor not above it.
    """
    for steps in range(min(preferred, n_lines), 0, -1):
        if n_lines % steps == 0:
            return steps
    return 1


# ---------------------------------------------------------------- losses


def _clamp(p):
    return np.clip(np.asarray(p, dtype=float), PROB_FLOOR, 1.0 - PROB_FLOOR)


def discriminator_loss(d_real, d_fake) -> float:
    """-mean(ln D(x)) - mean(ln(1 - D(G(z)))) on probabilities."""
    r, f = _clamp(d_real), _clamp(d_fake)
    if r.size == 0 or f.size == 0:
        raise ValueError("empty batch")
    return float(-np.mean(np.log(r)) - np.mean(np.log1p(-f)))


def generator_loss(d_fake) -> float:
    f = _clamp(d_fake)
    if f.size == 0:
        raise ValueError("empty batch")
    return float(-np.mean(np.log(f)))


def discriminator_loss_logits(a_real, a_fake):
    """Loss and logit gradients; -ln(sigmoid(a)) == softplus(-a)."""
    loss = float(np.mean(softplus(-a_real)) + np.mean(softplus(a_fake)))
    g_real = -sigmoid(-a_real) / a_real.size
    g_fake = sigmoid(a_fake) / a_fake.size
    return loss, g_real, g_fake


def generator_loss_logits(a_fake):
    loss = float(np.mean(softplus(-a_fake)))
    return loss, -sigmoid(-a_fake) / a_fake.size


def scores_from_logits(logits) -> np.ndarray:
    """Uncapped -log10(D(x)) computed in logit space."""
    return softplus(-np.asarray(logits, dtype=float)) / LN10


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class Architecture:
    n_channels: int
    n_lines: int
    lstm_hidden: int = 64
    head_hidden: int = 128
    steps: int | None = None
    latent_dim: int = LATENT_DIM
    generator_hidden: tuple[int, ...] = (256, 1024, 3750)
    clip_cap: float = 10.0

    @property
    def seq_steps(self) -> int:
        return self.steps if self.steps is not None else sequence_steps(self.n_lines)

    @property
    def step_width(self) -> int:
        return self.n_lines // self.seq_steps

    @property
    def feature_dim(self) -> int:
        return self.n_channels * self.n_lines

    def generator_layers(self) -> list[int]:
        """Hidden widths of G; the last hidden layer is dropped when the output is small enough."""
        hidden = list(self.generator_hidden)
        if hidden and self.feature_dim <= hidden[-1]:
            hidden = hidden[:-1]
        return hidden

    def to_json(self) -> dict:
        d = asdict(self)
        d["generator_hidden"] = list(self.generator_hidden)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["generator_hidden"] = tuple(d["generator_hidden"])
        return cls(**d)


class Discriminator:
    def __init__(self, arch: Architecture, branches: LstmCell, hidden: DenseLayer, out: DenseLayer):
        if arch.n_lines % arch.seq_steps:
            raise ValueError(f"{arch.seq_steps} steps do not divide {arch.n_lines} lines")
        self.arch = arch
        self.branches = branches
        self.hidden = hidden
        self.out = out

    @classmethod
    def init(cls, arch: Architecture, rng: np.random.Generator) -> "Discriminator":
        N, H = arch.n_channels, arch.lstm_hidden
        branches = LstmCell.init(rng, arch.step_width, H, bank=(N,), name="D.branches")
        hidden = DenseLayer.init(rng, N * H, arch.head_hidden, "relu", name="D.hidden")
        out = DenseLayer.init(rng, arch.head_hidden, 1, "sigmoid", name="D.out")
        return cls(arch, branches, hidden, out)

    def branch(self, channel: int) -> LstmCell:
        return self.branches.cell(channel)

    def params(self) -> dict[str, np.ndarray]:
        return {**self.branches.params(), **self.hidden.params(), **self.out.params()}

    def _as_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        N, L = self.arch.n_channels, self.arch.n_lines
        if x.ndim == 1:
            x = x[None]
        if x.shape[1:] == (N, L):
            return x
        if x.ndim == 2 and x.shape[1] == N * L:
            return x.reshape(-1, N, L)
        raise ValueError(f"feature shape {x.shape[1:]} does not match N={N}, W/2={L}")

    def logits(self, x, tape: GradientTape | None = None) -> np.ndarray:
        """Pre-sigmoid outputs, shape (batch,)."""
        xb = self._as_batch(x)
        B, N, L = xb.shape
        T, I, H = self.arch.seq_steps, self.arch.step_width, self.arch.lstm_hidden
        seq = xb.reshape(B, N, T, I).transpose(1, 2, 0, 3)
        if tape is not None:
            in_shape = np.shape(x)
            tape.push("D.sequence", lambda g: (g.transpose(2, 0, 1, 3).reshape(in_shape), {}))
        h = self.branches.forward(seq, tape)  # (N, B, H)
        merged = h.transpose(1, 0, 2).reshape(B, N * H)
        if tape is not None:
            tape.push("D.merge", lambda g: (g.reshape(B, N, H).transpose(1, 0, 2), {}))
        a = self.hidden.forward(merged, tape)
        z = self.out.forward(a, tape, activation="linear")
        if tape is not None:
            tape.push("D.squeeze", lambda g: (np.asarray(g).reshape(B, 1), {}))
        return z[:, 0]

    def predict_proba(self, x, chunk: int = 512) -> np.ndarray:
        return sigmoid(self.raw_logits(x, chunk))

    def raw_logits(self, x, chunk: int = 512) -> np.ndarray:
        xb = self._as_batch(x)
        if xb.shape[0] == 0:
            return np.zeros(0)
        return np.concatenate([self.logits(xb[i:i + chunk]) for i in range(0, xb.shape[0], chunk)])

    def scores(self, x, chunk: int = 512) -> np.ndarray:
        """Uncapped anomaly scores -log10(D(x))."""
        return scores_from_logits(self.raw_logits(x, chunk))

    def copy(self) -> "Discriminator":
        return copy.deepcopy(self)

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k, arr in self.params().items():
            arr[...] = params[k]


class Generator:
    def __init__(self, arch: Architecture, layers: list[DenseLayer]):
        self.arch = arch
        self.layers = layers

    @classmethod
    def init(cls, arch: Architecture, rng: np.random.Generator) -> "Generator":
        widths = [arch.latent_dim] + arch.generator_layers()
        layers = [
            DenseLayer.init(rng, widths[i], widths[i + 1], "relu", name=f"G.l{i}") for i in range(len(widths) - 1)
        ]
        layers.append(
            DenseLayer.init(rng, widths[-1], arch.feature_dim, "scaled_sigmoid", cap=arch.clip_cap, name="G.out")
        )
        return cls(arch, layers)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def forward(self, z, tape: GradientTape | None = None) -> np.ndarray:
        """Flat fake features (batch, N*W/2)."""
        x = np.asarray(z, dtype=float)
        if x.shape[-1] != self.arch.latent_dim:
            raise ValueError(f"latent width must be {self.arch.latent_dim}")
        for layer in self.layers:
            x = layer.forward(x, tape)
        return x

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.forward(rng.standard_normal((n, self.arch.latent_dim)))

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k, arr in self.params().items():
            arr[...] = params[k]


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    max_iterations: int = 5000
    eval_interval: int = 25
    patience: int = 200
    validation_fraction: float = 0.2
    score_cap: float = 40.0
    seed: int = 0


@dataclass
class TrainingLogEntry:
    iteration: int
    loss_d: float
    loss_g: float
    source_auc: float
    max_score_seen: float

    def as_dict(self) -> dict:
        return asdict(self)


def select_checkpoint(entries: list[TrainingLogEntry], score_cap: float = 40.0) -> int:
    """Index of the highest-AUC entry whose max score stays below the cap.

    Ties go to the earliest entry.
    """
    best = None
    for i, e in enumerate(entries):
        if not e.max_score_seen < score_cap:
            continue
        if best is None or e.source_auc > entries[best].source_auc:
            best = i
    if best is None:
        worst = max((e.max_score_seen for e in entries), default=float("nan"))
        raise SelectionError(
            f"none of {len(entries)} checkpoints keeps all scores below {score_cap} (smallest max score: "
            f"{min((e.max_score_seen for e in entries), default=float('nan')):.3g}, largest: {worst:.3g})"
        )
    return best


def split_healthy(n: int, validation_fraction: float) -> tuple[slice, slice]:
    """Chronological train/validation split of the healthy source windows."""
    n_val = max(1, int(round(n * validation_fraction)))
    if n - n_val < 1:
        raise ValueError(f"{n} healthy windows are too few for a train/validation split")
    return slice(0, n - n_val), slice(n - n_val, n)


@dataclass
class TrainingState:
    arch: Architecture
    config: TrainConfig
    D: Discriminator
    G: Generator
    opt_d: Adam
    opt_g: Adam
    rng: np.random.Generator
    iteration: int = 0
    log: list[TrainingLogEntry] = field(default_factory=list)
    best: Discriminator | None = None
    best_index: int | None = None
    evals_since_improvement: int = 0

    @classmethod
    def fresh(cls, arch: Architecture, config: TrainConfig) -> "TrainingState":
        rng = np.random.default_rng(config.seed)
        D = Discriminator.init(arch, rng)
        G = Generator.init(arch, rng)
        opt = dict(learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
        return cls(arch, config, D, G, Adam(**opt), Adam(**opt), rng)

    @property
    def selected(self) -> TrainingLogEntry | None:
        return None if self.best_index is None else self.log[self.best_index]


def evaluate_source(D: Discriminator, healthy_val: np.ndarray, damage: np.ndarray) -> tuple[float, float]:
    """(AUC, max uncapped score over both sets)."""
    sh = D.scores(healthy_val)
    sd = D.scores(damage)
    auc = metrics.auc_mann_whitney(sh, sd)
    return auc, float(max(sh.max(), sd.max()))


def train_step(state: TrainingState, x_train: np.ndarray) -> tuple[float, float]:
    cfg, rng = state.config, state.rng
    n = x_train.shape[0]
    B = cfg.batch_size
    idx = rng.choice(n, size=B, replace=n < B)
    real = x_train[idx]
    fake = state.G.forward(rng.standard_normal((B, state.arch.latent_dim))).reshape(real.shape)

    tape = GradientTape()
    a = state.D.logits(np.concatenate([real, fake]), tape)
    loss_d, g_real, g_fake = discriminator_loss_logits(a[:B], a[B:])
    grads_d, _ = backward(tape, np.concatenate([g_real, g_fake]))
    state.opt_d.step(state.D.params(), grads_d)

    tape = GradientTape()
    fake = state.G.forward(rng.standard_normal((B, state.arch.latent_dim)), tape)
    a = state.D.logits(fake, tape)
    loss_g, g_a = generator_loss_logits(a)
    grads, _ = backward(tape, g_a)
    state.opt_g.step(state.G.params(), {k: v for k, v in grads.items() if k.startswith("G.")})
    return loss_d, loss_g


def train(
    source_healthy: np.ndarray,
    source_damage: np.ndarray,
    config: TrainConfig | None = None,
    arch: Architecture | None = None,
    state: TrainingState | None = None,
    on_eval=None,
) -> TrainingState:
    """Train (or resume) the GAN and keep the best eligible discriminator.

    Features are shaped (n_windows, N, W/2). Returns the final training
    state; ``state.best`` is the selected discriminator.
    """
    healthy = np.asarray(source_healthy, dtype=float)
    damage = np.asarray(source_damage, dtype=float)
    if healthy.size == 0 or healthy.shape[0] == 0:
        raise ValueError("source healthy feature set is empty")
    if damage.size == 0 or damage.shape[0] == 0:
        raise ValueError("source damage feature set is empty; source labels are required")
    if healthy.shape[1:] != damage.shape[1:]:
        raise ValueError("healthy and damage features differ in shape")
    if state is None:
        config = config or TrainConfig()
        arch = arch or Architecture(n_channels=healthy.shape[1], n_lines=healthy.shape[2])
        state = TrainingState.fresh(arch, config)
    cfg = state.config
    if healthy.shape[1:] != (state.arch.n_channels, state.arch.n_lines):
        raise ValueError("feature shape does not match the model architecture")
    tr, va = split_healthy(healthy.shape[0], cfg.validation_fraction)
    x_train, x_val = healthy[tr], healthy[va]

    while state.iteration < cfg.max_iterations and state.evals_since_improvement < cfg.patience:
        loss_d, loss_g = train_step(state, x_train)
        state.iteration += 1
        if state.iteration % cfg.eval_interval == 0:
            auc, max_score = evaluate_source(state.D, x_val, damage)
            entry = TrainingLogEntry(state.iteration, loss_d, loss_g, auc, max_score)
            state.log.append(entry)
            eligible = max_score < cfg.score_cap
            if eligible and (state.best_index is None or auc > state.log[state.best_index].source_auc):
                state.best_index = len(state.log) - 1
                state.best = state.D.copy()
                state.evals_since_improvement = 0
            else:
                state.evals_since_improvement += 1
            if on_eval is not None:
                on_eval(entry)
            log.debug("iter %d loss_d %.4f loss_g %.4f auc %.4f max_s %.2f", *asdict(entry).values())
    if state.best is None:
        select_checkpoint(state.log, cfg.score_cap)  # raises with diagnostics
    return state


# ---------------------------------------------------------------- checkpoints


def _pack(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """magic | u64 header length | JSON header | raw little-endian float64 arrays.

    The header's "arrays" index gives name, shape and byte offset of each
    array; nothing time-dependent is written, so equal states give equal bytes.
    """
    index, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    head = json.dumps({**header, "arrays": index}, sort_keys=True).encode()
    return CHECKPOINT_MAGIC + len(head).to_bytes(8, "little") + head + b"".join(chunks)


def _unpack(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a checkpoint file")
    n = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16:16 + n].decode())
    body = memoryview(blob)[16 + n:]
    arrays = {}
    for item in header.pop("arrays"):
        count = int(np.prod(item["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=item["offset"])
        arrays[item["name"]] = arr.reshape(item["shape"]).copy()
    return header, arrays


def save_checkpoint(path, state: TrainingState, extra: dict | None = None) -> None:
    """Selected D, full resumable state and a JSON header in one file."""
    if state.best is None:
        raise SelectionError("no selected discriminator to save")
    sel = state.selected
    header = {
        "format": 1,
        "architecture": state.arch.to_json(),
        "train_config": asdict(state.config),
        "seed": state.config.seed,
        "iteration": state.iteration,
        "selected_iteration": sel.iteration,
        "source_auc": sel.source_auc,
        "selected_max_score": sel.max_score_seen,
        "best_index": state.best_index,
        "evals_since_improvement": state.evals_since_improvement,
        "adam_t": [state.opt_d.t, state.opt_g.t],
        "rng_state": state.rng.bit_generator.state,
        "log": [e.as_dict() for e in state.log],
        **(extra or {}),
    }
    arrays = {f"best/{k}": v for k, v in state.best.params().items()}
    arrays.update({f"state/{k}": v for k, v in state.D.params().items()})
    arrays.update({f"state/{k}": v for k, v in state.G.params().items()})
    arrays.update(state.opt_d.state_arrays("opt_d"))
    arrays.update(state.opt_g.state_arrays("opt_g"))
    Path(path).write_bytes(_pack(header, arrays))


def read_checkpoint_header(path) -> dict:
    header, _ = _unpack(Path(path).read_bytes())
    return header


def load_discriminator(path) -> tuple[Discriminator, dict]:
    """Selected discriminator for inference, plus the header."""
    header, arrays = _unpack(Path(path).read_bytes())
    arch = Architecture.from_json(header["architecture"])
    D = Discriminator.init(arch, np.random.default_rng(0))
    D.load_params({k[5:]: v for k, v in arrays.items() if k.startswith("best/")})
    return D, header


def load_training_state(path, max_iterations: int | None = None) -> TrainingState:
    header, arrays = _unpack(Path(path).read_bytes())
    arch = Architecture.from_json(header["architecture"])
    config = TrainConfig(**header["train_config"])
    if max_iterations is not None:
        config.max_iterations = max_iterations
    state = TrainingState.fresh(arch, config)
    state.D.load_params({k[6:]: v for k, v in arrays.items() if k.startswith("state/D.")})
    state.G.load_params({k[6:]: v for k, v in arrays.items() if k.startswith("state/G.")})
    state.opt_d.load_state_arrays("opt_d", arrays, header["adam_t"][0])
    state.opt_g.load_state_arrays("opt_g", arrays, header["adam_t"][1])
    state.rng.bit_generator.state = header["rng_state"]
    state.iteration = header["iteration"]
    state.log = [TrainingLogEntry(**e) for e in header["log"]]
    state.best_index = header["best_index"]
    state.evals_since_improvement = header["evals_since_improvement"]
    best = Discriminator.init(arch, np.random.default_rng(0))
    best.load_params({k[5:]: v for k, v in arrays.items() if k.startswith("best/")})
    state.best = best
    return state


def write_training_log(path, entries: list[TrainingLogEntry]) -> None:
    with Path(path).open("w") as fh:
        for e in entries:
            fh.write(json.dumps(e.as_dict(), sort_keys=True) + "\n")
