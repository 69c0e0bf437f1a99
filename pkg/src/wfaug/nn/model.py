"""Model assembly: conv blocks, global average pooling, FC head, softmax.

The network consumes (batch, length) real-valued direction sequences and
returns per-class probabilities plus the pooled feature vectors. A versioned
binary checkpoint format captures the architecture and every parameter
tensor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..seeding import derive_rng
from .layers import Conv1D, Dense, GlobalAvgPool, MaxPool2, ReLU

EPS = 1e-12

CHECKPOINT_MAGIC = b"TFWF"
CHECKPOINT_VERSION = 1

POOL_KINDS = ("none", "max2")


@dataclass(frozen=True)
class ConvBlock:
    """One conv stage: convolution, ReLU, optional width-2 max pool."""

    out_channels: int
    kernel: int = 3
    dilation: int = 1
    stride: int = 1
    pool: str = "none"
    causal: bool = True

    def __post_init__(self):
        if self.out_channels < 1:
            raise ValueError("out_channels must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.dilation < 1 or self.stride < 1:
            raise ValueError("dilation and stride must be >= 1")
        if self.pool not in POOL_KINDS:
            raise ValueError(f"pool must be one of {POOL_KINDS}")


@dataclass(frozen=True)
class ModelConfig:
    input_len: int
    num_classes: int
    blocks: tuple
    fc: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "fc", tuple(self.fc))
        if self.input_len < 1:
            raise ValueError("input_len must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.blocks:
            raise ValueError("need at least one conv block")
        if not all(isinstance(b, ConvBlock) for b in self.blocks):
            raise ValueError("blocks must be ConvBlock instances")
        if not self.fc or self.fc[-1] != self.num_classes:
            raise ValueError("final fc width must equal num_classes")


def default_model_config(input_len: int, num_classes: int) -> ModelConfig:
    """Small 4-block network: kernel-3 dilated causal convs (dilations
    1/2/4/8), max-pool after the first two blocks, GAP, one FC layer."""
    return ModelConfig(
        input_len=input_len,
        num_classes=num_classes,
        blocks=(ConvBlock(32, dilation=1, pool="max2"),
                ConvBlock(64, dilation=2, pool="max2"),
                ConvBlock(64, dilation=4),
                ConvBlock(128, dilation=8)),
        fc=(num_classes,),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over the batch of -sum_j target_j * log(prob_j).

    Works for one-hot and mixed (soft) targets alike; probabilities are
    floored at EPS inside the log.
    """
    if probs.shape != targets.shape:
        raise ValueError(f"shape mismatch: probs {probs.shape}, "
                         f"targets {targets.shape}")
    return float(-np.sum(targets * np.log(np.maximum(probs, EPS))) / len(probs))


class Model:
    """The classifier: seeded construction, forward, backward, state copy."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        self.layers = []
        self._gap_index = None
        in_ch = 1
        for i, blk in enumerate(cfg.blocks):
            self.layers.append(Conv1D(
                f"conv{i}", in_ch, blk.out_channels, kernel=blk.kernel,
                dilation=blk.dilation, stride=blk.stride, causal=blk.causal,
                rng=derive_rng(self.seed, "init", "conv", i)))
            self.layers.append(ReLU())
            if blk.pool == "max2":
                self.layers.append(MaxPool2())
            in_ch = blk.out_channels
        self._gap_index = len(self.layers)
        self.layers.append(GlobalAvgPool())
        width = in_ch
        for j, out in enumerate(cfg.fc):
            self.layers.append(Dense(f"fc{j}", width, out,
                                     rng=derive_rng(self.seed, "init", "fc", j)))
            if j < len(cfg.fc) - 1:
                self.layers.append(ReLU())
            width = out

    def forward(self, x: np.ndarray, train: bool = False):
        """Run the net over (B, L) input; returns (probs, features)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_len:
            raise ValueError(f"expected (B, {self.cfg.input_len}) input, "
                             f"got {x.shape}")
        h = x[:, None, :]
        features = None
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, train=train)
            if i == self._gap_index:
                features = h
        return softmax(h), features

    def backward(self, probs: np.ndarray, targets: np.ndarray) -> None:
        """Backpropagate mean cross-entropy; gradients land in each layer."""
        d = (probs - targets) / len(probs)
        for layer in reversed(self.layers):
            d = layer.backward(d)
            for key, g in layer.grads.items():
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(
                        f"non-finite gradient in {layer.name}.{key}")

    def param_items(self):
        for layer in self.layers:
            for key, arr in layer.params.items():
                yield f"{layer.name}.{key}", arr

    def param_grad_items(self):
        for layer in self.layers:
            for key, arr in layer.params.items():
                yield f"{layer.name}.{key}", arr, layer.grads[key]

    def state_copy(self) -> dict:
        return {name: arr.copy() for name, arr in self.param_items()}

    def load_state(self, state: dict) -> None:
        for name, arr in self.param_items():
            arr[...] = state[name]


def decide(probs: np.ndarray):
    """Argmax class per row plus its probability; ties go to the lower index."""
    labels = np.argmax(probs, axis=1)
    return labels, probs[np.arange(len(probs)), labels]


def predict(model: Model, traces: np.ndarray, batch_size: int = 256):
    """Predicted class index and confidence per trace, batched for memory."""
    labels, confs = [], []
    traces = np.asarray(traces)
    for lo in range(0, len(traces), batch_size):
        probs, _ = model.forward(traces[lo:lo + batch_size].astype(np.float64))
        lab, conf = decide(probs)
        labels.append(lab)
        confs.append(conf)
    return np.concatenate(labels), np.concatenate(confs)


class CheckpointError(ValueError):
    pass


def _config_text(model: Model) -> bytes:
    cfg = model.cfg
    lines = [f"input_len={cfg.input_len}",
             f"num_classes={cfg.num_classes}",
             f"seed={model.seed}",
             f"fc={','.join(str(w) for w in cfg.fc)}"]
    for i, b in enumerate(cfg.blocks):
        lines.append(f"block.{i}=out:{b.out_channels},kernel:{b.kernel},"
                     f"dilation:{b.dilation},stride:{b.stride},"
                     f"pool:{b.pool},causal:{int(b.causal)}")
    return "\n".join(lines).encode("utf-8")


def _parse_config_text(text: str):
    fields = {}
    blocks = {}
    for line in text.splitlines():
        key, _, value = line.partition("=")
        if key.startswith("block."):
            parts = dict(p.split(":", 1) for p in value.split(","))
            blocks[int(key.split(".", 1)[1])] = ConvBlock(
                out_channels=int(parts["out"]), kernel=int(parts["kernel"]),
                dilation=int(parts["dilation"]), stride=int(parts["stride"]),
                pool=parts["pool"], causal=bool(int(parts["causal"])))
        else:
            fields[key] = value
    cfg = ModelConfig(
        input_len=int(fields["input_len"]),
        num_classes=int(fields["num_classes"]),
        blocks=tuple(blocks[i] for i in sorted(blocks)),
        fc=tuple(int(w) for w in fields["fc"].split(",")))
    return cfg, int(fields["seed"])


def save_checkpoint(model: Model, path) -> None:
    text = _config_text(model)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        for name, arr in model.param_items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError("not a model checkpoint (bad magic)")
        version = struct.unpack("<I", _read_exact(fh, 4))[0]
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        text_len = struct.unpack("<I", _read_exact(fh, 4))[0]
        cfg, seed = _parse_config_text(_read_exact(fh, text_len).decode("utf-8"))
        model = Model(cfg, seed)
        for name, arr in model.param_items():
            name_len = struct.unpack("<I", _read_exact(fh, 4))[0]
            stored = _read_exact(fh, name_len).decode("utf-8")
            if stored != name:
                raise CheckpointError(f"expected tensor {name!r}, found {stored!r}")
            ndim = struct.unpack("<I", _read_exact(fh, 4))[0]
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            if shape != arr.shape:
                raise CheckpointError(f"tensor {name!r} has shape {shape}, "
                                      f"expected {arr.shape}")
            raw = _read_exact(fh, 8 * int(np.prod(shape)))
            arr[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")
    return model
