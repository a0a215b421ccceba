"""Network architectures, losses, AdamW and the early-stopping training loop."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T
from .tensor import ConfigurationError, Tape, Tensor

__all__ = [
    "LayerSpec",
    "Network",
    "TrainConfig",
    "TrainReport",
    "AdamW",
    "build_fnn_base",
    "build_cnn_base",
    "build_cnn_fe",
    "build_fnn_pred",
    "mse",
    "mae",
    "adamw_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class LayerSpec:
    """One row of an architecture table."""

    kind: str  # conv | maxpool | fc | flatten
    name: str = ""
    units: int = 0  # output channels (conv) or neurons (fc)
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    activation: str = "none"  # relu | sigmoid | none


def _init_weight(rng: np.random.Generator, shape, fan_in: int, fan_out: int, activation: str) -> np.ndarray:
    if activation == "relu":
        bound = math.sqrt(6.0 / fan_in)
    else:
        bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Network:
    """A feed-forward stack of conv / pool / flatten / FC layers.

    Inputs are batched along the first axis; a single unbatched sample is
    accepted too and the batch axis is dropped from the output.
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Sequence[int], seed: int = 0, name: str = "net"):
        self.specs = list(specs)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.name = name
        self.params: dict[str, Tensor] = {}
        self._shapes: list[tuple[str, tuple[int, ...], tuple[int, ...]]] = []
        self._optimizer: AdamW | None = None
        rng = np.random.default_rng(seed)

        shape = self.input_shape
        for i, spec in enumerate(self.specs):
            label = spec.name or f"L{i + 1}"
            out = self._out_shape(spec, shape, label)
            if spec.kind == "conv":
                kh, kw = spec.kernel
                cin = shape[2]
                fan_in, fan_out = kh * kw * cin, kh * kw * spec.units
                self.params[f"{label}.weight"] = Tensor(
                    _init_weight(rng, (kh, kw, cin, spec.units), fan_in, fan_out, spec.activation),
                    requires_grad=True, name=f"{label}.weight")
                self.params[f"{label}.bias"] = Tensor(np.zeros(spec.units), requires_grad=True, name=f"{label}.bias")
            elif spec.kind == "fc":
                fan_in = shape[0]
                self.params[f"{label}.weight"] = Tensor(
                    _init_weight(rng, (fan_in, spec.units), fan_in, spec.units, spec.activation),
                    requires_grad=True, name=f"{label}.weight")
                self.params[f"{label}.bias"] = Tensor(np.zeros(spec.units), requires_grad=True, name=f"{label}.bias")
            self._shapes.append((label, shape, out))
            shape = out
        self.output_shape = shape

    @staticmethod
    def _out_shape(spec: LayerSpec, shape: tuple[int, ...], label: str) -> tuple[int, ...]:
        if spec.kind in ("conv", "maxpool"):
            if len(shape) != 3:
                raise ConfigurationError(f"{label}: {spec.kind} needs an H x W x C input, got {shape}")
            H, W, C = shape
            (kh, kw), (sh, sw), (ph, pw) = spec.kernel, spec.stride, spec.padding
            Ho = (H + 2 * ph - kh) // sh + 1
            Wo = (W + 2 * pw - kw) // sw + 1
            if Ho < 1 or Wo < 1:
                raise ConfigurationError(f"{label}: non-positive output extent {Ho}x{Wo} from input {shape}")
            return (Ho, Wo, spec.units if spec.kind == "conv" else C)
        if spec.kind == "flatten":
            return (int(np.prod(shape)),)
        if spec.kind == "fc":
            if len(shape) != 1:
                raise ConfigurationError(f"{label}: fc needs a flat input, got {shape}; add a flatten layer")
            return (spec.units,)
        raise ConfigurationError(f"{label}: unknown layer kind {spec.kind!r}")

    # ------------------------------------------------------------------ api
    def layer_shapes(self) -> list[tuple[str, tuple[int, ...], tuple[int, ...]]]:
        """``(layer name, input shape, output shape)`` per layer."""
        return list(self._shapes)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise T.ShapeError(f"{k}: checkpoint shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def clone(self) -> "Network":
        twin = copy.copy(self)
        twin.params = {k: Tensor(p.data.copy(), requires_grad=True, name=p.name) for k, p in self.params.items()}
        twin._optimizer = None
        return twin

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        unbatched = x.ndim == len(self.input_shape)
        if unbatched:
            x = T.reshape(x, (1,) + x.shape)
        if x.shape[1:] != self.input_shape:
            raise T.ShapeError(f"{self.name}: expected input {self.input_shape}, got {x.shape[1:]}")
        h = x
        for (label, _, _), spec in zip(self._shapes, self.specs):
            if spec.kind == "conv":
                h = T.conv2d(h, self.params[f"{label}.weight"], self.params[f"{label}.bias"],
                             stride=spec.stride, padding=spec.padding)
            elif spec.kind == "maxpool":
                h = T.maxpool2d(h, spec.kernel, spec.stride)
            elif spec.kind == "flatten":
                h = T.flatten(h)
            elif spec.kind == "fc":
                h = T.add(T.matmul(h, self.params[f"{label}.weight"]), self.params[f"{label}.bias"])
            if spec.activation != "none":
                h = T.elementwise(h, spec.activation)
        if unbatched:
            h = T.reshape(h, h.shape[1:])
        return h


# ------------------------------------------------------------ architectures

def _fc_stack(widths: Sequence[int], first: int = 1, head: str = "sigmoid") -> list[LayerSpec]:
    specs = []
    for i, w in enumerate(widths):
        act = head if i == len(widths) - 1 else "relu"
        specs.append(LayerSpec("fc", f"F{first + i}", units=w, activation=act))
    return specs


def _cnn_trunk() -> list[LayerSpec]:
    return [
        LayerSpec("conv", "C1", units=8, kernel=(3, 3), stride=(2, 2), padding=(1, 1), activation="relu"),
        LayerSpec("maxpool", "P2", kernel=(2, 2), stride=(2, 2)),
        LayerSpec("conv", "C3", units=32, kernel=(3, 3), stride=(1, 1), padding=(1, 1), activation="relu"),
        LayerSpec("maxpool", "P4", kernel=(2, 2), stride=(2, 2)),
        LayerSpec("conv", "C5", units=16, kernel=(3, 3), stride=(1, 1), padding=(1, 1), activation="relu"),
        LayerSpec("maxpool", "P6", kernel=(2, 2), stride=(2, 2)),
        LayerSpec("flatten", "flatten"),
    ]


IMAGE_SHAPE = (64, 64, 1)


def build_fnn_base(n_inputs: int, seed: int = 0) -> Network:
    """FC n_inputs -> 64 -> 128 -> 64 -> 1; ReLU hidden layers, sigmoid head."""
    if n_inputs < 1:
        raise ConfigurationError("n_inputs must be >= 1")
    return Network(_fc_stack([64, 128, 64, 1]), (n_inputs,), seed, name="FNN-base")


def build_cnn_base(seed: int = 0) -> Network:
    """Three conv/pool stages on a 64x64x1 image, then FC 256 -> 64 -> 1."""
    return Network(_cnn_trunk() + _fc_stack([64, 1], first=7), IMAGE_SHAPE, seed, name="CNN-base")


def build_cnn_fe(seed: int = 0) -> Network:
    """CNN-base trunk with a 64-wide sigmoid feature layer instead of the scalar head."""
    return Network(_cnn_trunk() + _fc_stack([64, 64], first=7), IMAGE_SHAPE, seed, name="CNN-fe")


def build_fnn_pred(n_inputs: int, n_outputs: int = 1, seed: int = 0) -> Network:
    if n_inputs < 1 or n_outputs < 1:
        raise ConfigurationError("n_inputs and n_outputs must be >= 1")
    return Network(_fc_stack([64, 128, 64, n_outputs]), (n_inputs,), seed, name="FNN-pred")


# -------------------------------------------------------------------- losses

def _check_pair(pred: Tensor, truth) -> Tensor:
    truth = truth if isinstance(truth, Tensor) else Tensor(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise T.ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return truth


def mse(pred: Tensor, truth) -> Tensor:
    truth = _check_pair(pred, truth)
    return T.mean(T.square(T.sub(pred, truth)))


def mae(pred: Tensor, truth) -> Tensor:
    truth = _check_pair(pred, truth)
    return T.mean(T.tabs(T.sub(pred, truth)))


# ----------------------------------------------------------------- optimizer

@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ConfigurationError("max_epochs must be >= 0")


class AdamW:
    """Adam with decoupled weight decay. Moment buffers persist across steps."""

    def __init__(self, params: Iterable[Tensor], config: TrainConfig):
        self.params = list(params)
        self.config = config
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        cfg = self.config
        missing = [p.name or str(i) for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise RuntimeError(f"no gradient for parameters {missing[:5]}; call backward before stepping")
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if cfg.weight_decay:
                p.data *= 1.0 - cfg.lr * cfg.weight_decay
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adamw_step(net: Network, config: TrainConfig) -> None:
    """One AdamW update of ``net``; optimizer state lives on the network."""
    if net._optimizer is None or net._optimizer.config is not config:
        net._optimizer = AdamW(net.parameters(), config)
    net._optimizer.step()


# ------------------------------------------------------------------ training

@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    epochs_run: int = 0
    stopped_early: bool = False


def _collect(nets) -> list[Tensor]:
    nets = nets if isinstance(nets, (list, tuple)) else [nets]
    params = []
    for n in nets:
        params.extend(n.parameters())
    return params


def train(
    nets: Network | Sequence[Network],
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    loss_fn: Callable[[np.ndarray], Tensor],
    config: TrainConfig,
    eval_fn: Callable[[np.ndarray], float] | None = None,
    evaluate_initial: bool = False,
) -> TrainReport:
    """Mini-batch AdamW with per-epoch seeded shuffling and early stopping.

    ``loss_fn(batch_indices)`` builds the scalar training loss (it is called
    inside an active tape). ``eval_fn(indices)`` returns the validation loss;
    it defaults to ``loss_fn`` evaluated without recording. When
    ``evaluate_initial`` is set the untrained weights count as epoch 0, so the
    restored model is never worse on validation than the starting point.
    The weights of the best validation epoch are restored at the end.
    """
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    if train_idx.size == 0 or val_idx.size == 0:
        raise ConfigurationError("train and validation splits must be non-empty")
    params = _collect(nets)
    opt = AdamW(params, config)
    rng = np.random.default_rng(config.seed)
    if eval_fn is None:
        def eval_fn(idx):
            return float(loss_fn(idx).item())

    report = TrainReport()
    best_state = [p.data.copy() for p in params]
    if evaluate_initial:
        report.best_val = float(eval_fn(val_idx))
        report.best_epoch = 0
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        order = train_idx[rng.permutation(train_idx.size)]
        total, count = 0.0, 0
        for start in range(0, order.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                loss = loss_fn(batch)
                tape.backward(loss)
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            opt.step()
            total += loss.item() * batch.size
            count += batch.size
        report.train_losses.append(total / count)
        val = float(eval_fn(val_idx))
        report.val_losses.append(val)
        report.epochs_run = epoch
        if val < report.best_val:
            report.best_val = val
            report.best_epoch = epoch
            best_state = [p.data.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                report.stopped_early = True
                break
    for p, s in zip(params, best_state):
        p.data = s
    opt.zero_grad()
    return report


# --------------------------------------------------------------- checkpoints

def save_checkpoint(path, nets: dict[str, Network]) -> None:
    """Write ``<path>`` (tensor records) and ``<path>.manifest`` (one name per record)."""
    path = Path(path)
    names, arrays = [], []
    for prefix, net in nets.items():
        for k, p in net.named_parameters():
            names.append(f"{prefix}/{k}")
            arrays.append(p.data)
    T.save_tensors(path, arrays)
    path.with_name(path.name + ".manifest").write_text("\n".join(names) + "\n")


def load_checkpoint(path, nets: dict[str, Network]) -> None:
    path = Path(path)
    names = path.with_name(path.name + ".manifest").read_text().split()
    arrays = T.load_tensors(path)
    if len(names) != len(arrays):
        raise ValueError("checkpoint manifest and tensor records disagree")
    table = dict(zip(names, arrays))
    for prefix, net in nets.items():
        net.load_state_dict({k: table[f"{prefix}/{k}"] for k in net.params})
