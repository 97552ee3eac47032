"""From-scratch stateful LSTM binary sequence classifier.

Two stacked gated-memory layers feed a small ReLU dense layer and a single
sigmoid output.  The classifier scores a whole window with binary
cross-entropy at the final step; streaming callers advance one sample at a
time through :func:`step` with an explicit :class:`RecurrentState`.
Training runs full-window backpropagation through time with inverted
dropout between the hidden layers.  Master weights are float64; batched
training math runs in float32 for speed, while single-stream inference and
gradient checking stay in float64.
"""

from __future__ import annotations

import copy
import enum
import json
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LstmModel",
    "TrainConfig",
    "Optimizer",
    "RecurrentState",
    "TrainingFailedError",
    "NumericOverflowError",
    "ModelFileError",
    "init_model",
    "forward",
    "step",
    "train",
    "gradient_check",
    "save_model",
    "load_model",
    "search",
]

DEFAULT_HIDDEN = (200, 100)
DEFAULT_DENSE = 64
# gate block order within each layer's stacked weight matrix
GATE_ORDER = ("input", "forget", "cell", "output")


class TrainingFailedError(RuntimeError):
    def __init__(self, epoch: int, message: str = "loss diverged"):
        super().__init__(f"training failed at epoch {epoch}: {message}")
        self.epoch = epoch


class NumericOverflowError(RuntimeError):
    def __init__(self, step_index: int):
        super().__init__(f"non-finite activation at step {step_index}")
        self.step_index = step_index


class ModelFileError(RuntimeError):
    def __init__(self, fieldname: str, message: str):
        super().__init__(f"model file error in field {fieldname!r}: {message}")
        self.field = fieldname


class Optimizer(enum.Enum):
    ADAM = "adaptive-moment"
    RMSPROP = "rms-propagation"


@dataclass
class TrainConfig:
    optimizer: Optimizer = Optimizer.ADAM
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ValueError("invalid batch_size/epochs/patience")


@dataclass
class LstmModel:
    """Parameter container; ``params`` maps names to float64 arrays.

    Per layer k: ``lstm{k}_w`` of shape (4*H_k, X_k + H_k) with the four
    gate blocks stacked in GATE_ORDER, and ``lstm{k}_b`` of shape (4*H_k,).
    Head: ``dense_w``/``dense_b`` then ``out_w``/``out_b``.
    """

    input_width: int
    hidden_sizes: tuple[int, ...]
    dense_units: int
    dropout_rate: float
    params: dict[str, np.ndarray]
    channel_names: tuple[str, ...] = ()
    channel_scales: tuple[float, ...] = ()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "LstmModel":
        return LstmModel(
            input_width=self.input_width,
            hidden_sizes=self.hidden_sizes,
            dense_units=self.dense_units,
            dropout_rate=self.dropout_rate,
            params={k: v.copy() for k, v in self.params.items()},
            channel_names=self.channel_names,
            channel_scales=self.channel_scales,
        )


@dataclass
class RecurrentState:
    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, model: LstmModel) -> "RecurrentState":
        return cls(
            h=[np.zeros(n) for n in model.hidden_sizes],
            c=[np.zeros(n) for n in model.hidden_sizes],
        )

    def reset(self) -> None:
        for arr in self.h + self.c:
            arr[:] = 0.0


def init_model(
    input_width: int,
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN,
    dense_units: int = DEFAULT_DENSE,
    dropout_rate: float = 0.2,
    seed: int = 0,
    channel_names: tuple[str, ...] = (),
    channel_scales: tuple[float, ...] = (),
    memory_horizon: int | None = None,
) -> LstmModel:
    """Uniform fan-in initialization; forget-gate biases start at 1.

    ``memory_horizon`` (in samples) switches the gate biases to chrono
    initialization: forget biases drawn as log U(1, horizon) with input
    biases at their negative, so cell memories start with retention times
    spread up to the horizon.  Needed when the decisive evidence spans
    hundreds of samples, e.g. counting pulls across a 2.5 s window.
    """
    if input_width < 1:
        raise ValueError("input_width must be >= 1")
    if not 0 <= dropout_rate < 1:
        raise ValueError("dropout_rate must lie in [0, 1)")
    if memory_horizon is not None and memory_horizon < 2:
        raise ValueError("memory_horizon must be at least 2 samples")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    x = input_width
    for k, h in enumerate(hidden_sizes):
        fan_in = x + h
        bound = 1.0 / np.sqrt(fan_in)
        params[f"lstm{k}_w"] = rng.uniform(-bound, bound, (4 * h, fan_in))
        bias = np.zeros(4 * h)
        if memory_horizon is None:
            bias[h : 2 * h] = 1.0  # forget gate block
        else:
            forget = np.log(rng.uniform(1.0, float(memory_horizon), h))
            bias[h : 2 * h] = forget
            bias[:h] = -forget
        params[f"lstm{k}_b"] = bias
        x = h
    bound = 1.0 / np.sqrt(x)
    params["dense_w"] = rng.uniform(-bound, bound, (dense_units, x))
    params["dense_b"] = np.zeros(dense_units)
    bound = 1.0 / np.sqrt(dense_units)
    params["out_w"] = rng.uniform(-bound, bound, dense_units)
    params["out_b"] = np.zeros(1)
    return LstmModel(
        input_width=input_width,
        hidden_sizes=tuple(hidden_sizes),
        dense_units=dense_units,
        dropout_rate=dropout_rate,
        params=params,
        channel_names=tuple(channel_names),
        channel_scales=tuple(channel_scales),
    )


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _cell_step(w, b, x_t, h_prev, c_prev, hidden: int):
    """One gated-memory update; returns (h, c, gates) for backprop."""
    z = w @ np.concatenate([x_t, h_prev], axis=0) + (
        b if x_t.ndim == 1 else b[:, None]
    )
    i = _sigmoid(z[:hidden])
    f = _sigmoid(z[hidden : 2 * hidden])
    g = np.tanh(z[2 * hidden : 3 * hidden])
    o = _sigmoid(z[3 * hidden :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, g, o, tc)


def _head(model: LstmModel, h_top):
    p = model.params
    a = np.maximum(0.0, p["dense_w"] @ h_top + p["dense_b"])
    return float(_sigmoid(np.atleast_1d(p["out_w"] @ a + p["out_b"][0]))[0])


def step(model: LstmModel, sample, state: RecurrentState) -> tuple[float, RecurrentState]:
    """Advance every layer by one sample; returns the current probability.

    The state is updated in place and also returned for convenience.
    """
    x = np.asarray(sample, float)
    if x.shape != (model.input_width,):
        raise ValueError(
            f"sample width {x.shape} does not match input_width {model.input_width}"
        )
    for k, hidden in enumerate(model.hidden_sizes):
        h, c, _ = _cell_step(
            model.params[f"lstm{k}_w"],
            model.params[f"lstm{k}_b"],
            x,
            state.h[k],
            state.c[k],
            hidden,
        )
        state.h[k] = h
        state.c[k] = c
        x = h
    prob = _head(model, x)
    if not np.isfinite(prob) or not all(
        np.all(np.isfinite(v)) for v in state.h + state.c
    ):
        raise NumericOverflowError(0)
    return prob, state


def forward(
    model: LstmModel,
    sequence,
    state: RecurrentState | None = None,
    training: bool = False,
    rng=None,
) -> tuple[float, RecurrentState]:
    """Score one window; returns P(interaction) from the final step.

    ``state`` carries recurrent memory across calls (stateful contract);
    omit it to start from zeros.  With ``training=True`` inverted dropout
    masks (one per layer boundary, shared across time) are applied.
    """
    data = sequence.data if hasattr(sequence, "data") else np.asarray(sequence, float)
    data = np.asarray(data, float)
    if data.ndim != 2 or data.shape[1] != model.input_width:
        raise ValueError(
            f"sequence shape {data.shape} does not match input_width "
            f"{model.input_width}"
        )
    if state is None:
        state = RecurrentState.zeros(model)
    masks = None
    if training and model.dropout_rate > 0:
        if rng is None:
            rng = np.random.default_rng()
        keep = 1.0 - model.dropout_rate
        masks = [
            (rng.random(n) < keep) / keep for n in model.hidden_sizes
        ]
    prob = _head(model, state.h[-1] * (masks[-1] if masks else 1.0))
    for t in range(len(data)):
        x = data[t]
        if not np.all(np.isfinite(x)):
            raise NumericOverflowError(t)
        for k, hidden in enumerate(model.hidden_sizes):
            h, c, _ = _cell_step(
                model.params[f"lstm{k}_w"],
                model.params[f"lstm{k}_b"],
                x,
                state.h[k],
                state.c[k],
                hidden,
            )
            state.h[k] = h
            state.c[k] = c
            x = h * masks[k] if masks is not None else h
        prob = _head(model, x)
        if not np.isfinite(prob):
            raise NumericOverflowError(t)
    return prob, state


# ---------------------------------------------------------------------------
# Batched training path (float32 compute, float64 master weights).
# ---------------------------------------------------------------------------


def _batch_forward(params32, model, x, masks):
    """x: (T, B, C).  Returns (probs (B,), cache) for backprop."""
    t_len, batch, _ = x.shape
    dtype = params32["out_w"].dtype
    caches = []
    h_layers = []
    inp = x.astype(dtype, copy=False)
    for k, hidden in enumerate(model.hidden_sizes):
        w = params32[f"lstm{k}_w"]
        b = params32[f"lstm{k}_b"][:, None]
        h = np.zeros((hidden, batch), dtype)
        c = np.zeros((hidden, batch), dtype)
        gates = []
        hs = np.empty((t_len, hidden, batch), dtype)
        cs_prev = np.empty((t_len, hidden, batch), dtype)
        xcats = np.empty((t_len, w.shape[1], batch), dtype)
        for t in range(t_len):
            xcat = np.concatenate([inp[t].T if k == 0 else inp[t], h], axis=0)
            z = w @ xcat + b
            i = _sigmoid(z[:hidden])
            f = _sigmoid(z[hidden : 2 * hidden])
            g = np.tanh(z[2 * hidden : 3 * hidden])
            o = _sigmoid(z[3 * hidden :])
            cs_prev[t] = c
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            gates.append((i, f, g, o, tc))
            hs[t] = h
            xcats[t] = xcat
        if masks is not None:
            hs = hs * masks[k][None, :, None]
        caches.append({"gates": gates, "hs": hs, "cs_prev": cs_prev, "xcats": xcats})
        h_layers.append(hs)
        inp = hs
    top = h_layers[-1][-1]  # (H, B) final step, dropout applied
    dense_w = params32["dense_w"]
    a_pre = dense_w @ top + params32["dense_b"][:, None]
    a = np.maximum(0.0, a_pre)
    logits = params32["out_w"] @ a + params32["out_b"][0]
    probs = _sigmoid(logits)
    cache = {"caches": caches, "top": top, "a": a, "a_pre": a_pre}
    return probs, cache


def _batch_backward(params32, model, x, y, probs, cache, masks):
    """Mean binary cross-entropy gradient over the batch."""
    batch = x.shape[1]
    dtype = params32["out_w"].dtype
    grads = {k: np.zeros_like(v) for k, v in params32.items()}
    dlogit = ((probs - y) / batch).astype(dtype)  # (B,)
    a = cache["a"]
    grads["out_w"] = a @ dlogit
    grads["out_b"][0] = dlogit.sum()
    da = np.outer(params32["out_w"], dlogit)
    da[cache["a_pre"] <= 0] = 0.0
    grads["dense_w"] = da @ cache["top"].T
    grads["dense_b"] = da.sum(axis=1)
    dh_next_layer = params32["dense_w"].T @ da  # gradient on top-layer final h

    for k in reversed(range(len(model.hidden_sizes))):
        hidden = model.hidden_sizes[k]
        layer = cache["caches"][k]
        w = params32[f"lstm{k}_w"]
        t_len = x.shape[0]
        dh = np.zeros((hidden, batch), dtype)
        dc = np.zeros((hidden, batch), dtype)
        dw = grads[f"lstm{k}_w"]
        db = grads[f"lstm{k}_b"]
        dx_seq = None
        if k > 0:
            below = model.hidden_sizes[k - 1]
            dx_seq = np.zeros((t_len, below, batch), dtype)
        mask = masks[k][:, None] if masks is not None else None
        for t in reversed(range(t_len)):
            dh_in = np.zeros((hidden, batch), dtype)
            if k == len(model.hidden_sizes) - 1 and t == t_len - 1:
                dh_in = dh_next_layer
            elif k < len(model.hidden_sizes) - 1:
                dh_in = dh_from_above[t]
            if mask is not None:
                dh_in = dh_in * mask
            dh = dh + dh_in
            i, f, g, o, tc = layer["gates"][t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * layer["cs_prev"][t]
            dg = dc * i
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=0,
            )
            dw += dz @ layer["xcats"][t].T
            db += dz.sum(axis=1)
            dxcat = w.T @ dz
            if k > 0:
                dx_seq[t] = dxcat[: model.hidden_sizes[k - 1]]
            dh = dxcat[-hidden:]
            dc = dc * f
        dh_from_above = dx_seq
    return grads


def _as_xy(sequences):
    x = np.stack([np.asarray(s.data, np.float32) for s in sequences], axis=1)
    y = np.array([s.label for s in sequences], np.float32)
    return x, y


def _batch_eval(params32, model, sequences, batch_size=64):
    losses, correct = [], 0
    for lo in range(0, len(sequences), batch_size):
        chunk = sequences[lo : lo + batch_size]
        x, y = _as_xy(chunk)
        probs, _ = _batch_forward(params32, model, x, None)
        eps = 1e-12
        losses.append(
            -np.sum(y * np.log(probs + eps) + (1 - y) * np.log(1 - probs + eps))
        )
        correct += int(np.sum((probs > 0.5) == (y > 0.5)))
    n = max(1, len(sequences))
    return float(np.sum(losses) / n), correct / n


def train(model: LstmModel, data, cfg: TrainConfig | None = None):
    """Train on a DatasetSplit (or (train, validation) lists).

    Returns ``(best_model, history)`` where history holds per-epoch train
    and validation loss/accuracy.  Early-stops when validation loss has not
    improved for ``patience`` epochs; the best-validation snapshot is
    returned.  Zero epochs leaves the model untouched with empty history.
    """
    cfg = cfg or TrainConfig()
    if hasattr(data, "train"):
        train_seqs, val_seqs = list(data.train), list(data.validation)
    else:
        train_seqs, val_seqs = list(data[0]), list(data[1])
    history = {
        "train_loss": [],
        "train_accuracy": [],
        "val_loss": [],
        "val_accuracy": [],
    }
    if cfg.epochs == 0:
        return model.copy(), history
    if not train_seqs or not val_seqs:
        raise ValueError("train and validation sets must be nonempty")

    params32 = {k: v.astype(np.float32) for k, v in model.params.items()}
    moments1 = {k: np.zeros_like(v) for k, v in params32.items()}
    moments2 = {k: np.zeros_like(v) for k, v in params32.items()}
    adam_step = 0
    rng = np.random.default_rng(cfg.seed)
    keep = 1.0 - model.dropout_rate
    best_loss = np.inf
    best_params = None
    best_epoch = -1
    stale = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_seqs))
        epoch_loss = 0.0
        epoch_correct = 0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [train_seqs[i] for i in order[lo : lo + cfg.batch_size]]
            x, y = _as_xy(chunk)
            masks = None
            if model.dropout_rate > 0:
                masks = [
                    ((rng.random(n) < keep) / keep).astype(np.float32)
                    for n in model.hidden_sizes
                ]
            probs, cache = _batch_forward(params32, model, x, masks)
            eps = 1e-12
            loss = -np.sum(
                y * np.log(probs + eps) + (1 - y) * np.log(1 - probs + eps)
            )
            if not np.isfinite(loss):
                raise TrainingFailedError(epoch)
            epoch_loss += float(loss)
            epoch_correct += int(np.sum((probs > 0.5) == (y > 0.5)))
            grads = _batch_backward(params32, model, x, y, probs, cache, masks)
            adam_step += 1
            lr = np.float32(cfg.learning_rate)
            for name, g in grads.items():
                if cfg.optimizer is Optimizer.ADAM:
                    moments1[name] = 0.9 * moments1[name] + 0.1 * g
                    moments2[name] = 0.999 * moments2[name] + 0.001 * g * g
                    m_hat = moments1[name] / (1 - 0.9**adam_step)
                    v_hat = moments2[name] / (1 - 0.999**adam_step)
                    params32[name] -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)
                else:
                    moments2[name] = 0.9 * moments2[name] + 0.1 * g * g
                    params32[name] -= lr * g / (np.sqrt(moments2[name]) + 1e-8)
        val_loss, val_acc = _batch_eval(params32, model, val_seqs)
        if not np.isfinite(val_loss):
            raise TrainingFailedError(epoch)
        history["train_loss"].append(epoch_loss / len(train_seqs))
        history["train_accuracy"].append(epoch_correct / len(train_seqs))
        history["val_loss"].append(val_loss)
        history["val_accuracy"].append(val_acc)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: v.copy() for k, v in params32.items()}
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    trained = model.copy()
    if best_params is not None:
        trained.params = {k: v.astype(np.float64) for k, v in best_params.items()}
    history["best_epoch"] = best_epoch
    return trained, history


def gradient_check(model: LstmModel, sequence, label, epsilon: float = 1e-5) -> float:
    """Max relative error between BPTT and central finite differences.

    Runs in float64 with dropout off; intended for tiny models (≤ 500
    parameters).  Zero-length sequences define zero loss and zero gradient.
    """
    if model.parameter_count() > 500:
        raise ValueError("gradient_check requires a tiny model (<= 500 parameters)")
    data = np.asarray(
        sequence.data if hasattr(sequence, "data") else sequence, np.float64
    )
    y = np.array([float(label)])
    if len(data) == 0:
        return 0.0

    params64 = {k: v.astype(np.float64) for k, v in model.params.items()}
    x = data[:, None, :]

    def loss_of(p):
        probs, _ = _batch_forward(p, model, x, None)
        eps = 1e-300
        return float(
            -np.sum(y * np.log(probs + eps) + (1 - y) * np.log(1 - probs + eps))
        )

    probs, cache = _batch_forward(params64, model, x, None)
    grads = _batch_backward(params64, model, x, y, probs, cache, None)

    worst = 0.0
    for name, g in grads.items():
        flat = params64[name].reshape(-1)
        gflat = np.asarray(g, np.float64).reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + epsilon
            up = loss_of(params64)
            flat[idx] = keep - epsilon
            down = loss_of(params64)
            flat[idx] = keep
            numeric = (up - down) / (2 * epsilon)
            # The 1e-6 floor keeps central-difference round-off noise
            # (~1e-12 in the loss) from dominating the ratio on gradients
            # that are themselves near zero.
            denom = max(abs(numeric) + abs(gflat[idx]), 1e-6)
            worst = max(worst, abs(numeric - gflat[idx]) / denom)
    return worst


def analytic_gradients(model: LstmModel, sequence, label) -> dict[str, np.ndarray]:
    """Float64 BPTT gradients of the single-sequence BCE loss."""
    data = np.asarray(
        sequence.data if hasattr(sequence, "data") else sequence, np.float64
    )
    if len(data) == 0:
        return {k: np.zeros_like(v) for k, v in model.params.items()}
    params64 = {k: v.astype(np.float64) for k, v in model.params.items()}
    x = data[:, None, :]
    y = np.array([float(label)])
    probs, cache = _batch_forward(params64, model, x, None)
    grads = _batch_backward(params64, model, x, y, probs, cache, None)
    return {k: np.asarray(v, np.float64) for k, v in grads.items()}


def search(configs, data, input_width: int, **model_kwargs):
    """Thin hyperparameter loop: train one model per config, return results
    sorted by best validation accuracy."""
    results = []
    for cfg in configs:
        model = init_model(input_width, seed=cfg.seed, **model_kwargs)
        trained, history = train(model, data, cfg)
        best_acc = max(history["val_accuracy"], default=0.0)
        results.append((best_acc, cfg, trained, history))
    results.sort(key=lambda r: -r[0])
    return results


# ---------------------------------------------------------------------------
# Versioned binary persistence: magic line, JSON header line, float64 blobs.
# ---------------------------------------------------------------------------

_MAGIC = b"UAVTID-LSTM v1\n"


def save_model(model: LstmModel, path) -> None:
    header = {
        "input_width": model.input_width,
        "hidden_sizes": list(model.hidden_sizes),
        "dense_units": model.dense_units,
        "dropout_rate": model.dropout_rate,
        "channel_names": list(model.channel_names),
        "channel_scales": list(model.channel_scales),
        "params": {k: list(v.shape) for k, v in model.params.items()},
    }
    with open(path, "wb") as f:
        f.write(_MAGIC)
        blob = json.dumps(header).encode()
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, arr in model.params.items():
            f.write(np.ascontiguousarray(arr, np.float64).tobytes())


def load_model(path, expected_input_width: int | None = None) -> LstmModel:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ModelFileError("magic", "not a model file or unsupported version")
        raw = f.read(4)
        if len(raw) < 4:
            raise ModelFileError("header", "truncated before header length")
        (hlen,) = struct.unpack("<I", raw)
        blob = f.read(hlen)
        if len(blob) < hlen:
            raise ModelFileError("header", "truncated header")
        try:
            header = json.loads(blob)
        except json.JSONDecodeError as exc:
            raise ModelFileError("header", f"corrupt JSON: {exc}") from exc
        for key in ("input_width", "hidden_sizes", "dense_units", "dropout_rate", "params"):
            if key not in header:
                raise ModelFileError(key, "missing from header")
        if (
            expected_input_width is not None
            and header["input_width"] != expected_input_width
        ):
            raise ModelFileError(
                "input_width",
                f"model expects {header['input_width']} channels, "
                f"data provides {expected_input_width}",
            )
        params = {}
        for name, shape in header["params"].items():
            count = int(np.prod(shape))
            raw = f.read(8 * count)
            if len(raw) < 8 * count:
                raise ModelFileError(name, "truncated parameter block")
            params[name] = np.frombuffer(raw, np.float64).reshape(shape).copy()
    return LstmModel(
        input_width=int(header["input_width"]),
        hidden_sizes=tuple(header["hidden_sizes"]),
        dense_units=int(header["dense_units"]),
        dropout_rate=float(header["dropout_rate"]),
        params=params,
        channel_names=tuple(header.get("channel_names", ())),
        channel_scales=tuple(header.get("channel_scales", ())),
    )
