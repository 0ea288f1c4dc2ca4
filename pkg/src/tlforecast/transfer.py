"""Checkpoints and source-to-target weight transfer.

A checkpoint is one JSON document (conventionally ``*.ckpt.json``)::

    {
      "format_version": 1,
      "architecture": {"layers": [{"type": "lstm", "input_dim": 6, "hidden_dim": 64}, ...,
                                  {"type": "dense", "input_dim": 32, "output_dim": 1}]},
      "feature_names": [...],
      "scaler": {...} | null,
      "weights": [{"type": "lstm", "trainable": true,
                   "tensors": {"W": {"shape": [256, 6], "data": [...]}, "U": ..., "b": ...}},
                  ...],
      "metadata": {"task": {...}, "seed": 0, "created": "..."}
    }

Tensors are flat row-major lists. Python writes floats with the shortest
repr that round-trips, so reloading reproduces every weight bit for bit.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import ScalerParams
from .lstm import DenseLayer, LSTMLayer, Network, NetworkArchitecture
from .numkernel import SeededRng
from .training import TrainConfig, TrainingReport, train

__all__ = [
    "FORMAT_VERSION",
    "CheckpointError",
    "CorruptCheckpointError",
    "UnsupportedVersionError",
    "TransferError",
    "NetworkCheckpoint",
    "TransferSpec",
    "save_checkpoint",
    "load_checkpoint",
    "adapt_for_target",
    "run_transfer_task",
]

FORMAT_VERSION = 1
MODES = ("trainable", "untrainable")


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    """The file is not a well-formed checkpoint."""


class UnsupportedVersionError(CheckpointError):
    pass


class TransferError(ValueError):
    pass


@dataclass
class NetworkCheckpoint:
    architecture: NetworkArchitecture
    feature_names: tuple[str, ...]
    weights: list[dict[str, np.ndarray]]
    trainable: list[bool]
    scaler: ScalerParams | None = None
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_network(
        cls,
        net: Network,
        feature_names: Sequence[str],
        scaler: ScalerParams | None = None,
        metadata: dict | None = None,
    ) -> "NetworkCheckpoint":
        if len(feature_names) != net.input_dim:
            raise ValueError("feature_names must match the network input width")
        return cls(
            architecture=net.architecture,
            feature_names=tuple(feature_names),
            weights=[{k: v.copy() for k, v in p.items()} for p in net.params()],
            trainable=list(net.trainable),
            scaler=scaler,
            metadata=dict(metadata or {}),
        )

    def to_network(self) -> Network:
        layers = [LSTMLayer(**{k: v.copy() for k, v in w.items()}) for w in self.weights[:-1]]
        layers.append(DenseLayer(**{k: v.copy() for k, v in self.weights[-1].items()}))
        return Network(layers, list(self.trainable))

    def to_dict(self) -> dict:
        specs = self.architecture.layer_specs()
        weights = []
        for spec, w, on in zip(specs, self.weights, self.trainable):
            weights.append(
                {
                    "type": spec["type"],
                    "trainable": bool(on),
                    "tensors": {
                        k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in w.items()
                    },
                }
            )
        return {
            "format_version": self.format_version,
            "architecture": {"layers": specs},
            "feature_names": list(self.feature_names),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "weights": weights,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkCheckpoint":
        if not isinstance(d, dict):
            raise CorruptCheckpointError("checkpoint root must be a JSON object")
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"checkpoint format_version {version!r}; supported: {FORMAT_VERSION}")
        try:
            arch = NetworkArchitecture.from_specs(d["architecture"]["layers"])
            specs = arch.layer_specs()
            if len(d["weights"]) != len(specs):
                raise CorruptCheckpointError("weights do not cover every layer")
            weights, trainable = [], []
            for spec, entry in zip(specs, d["weights"]):
                expected = _expected_shapes(spec)
                tensors = entry["tensors"]
                if set(tensors) != set(expected):
                    raise CorruptCheckpointError(f"layer tensors {sorted(tensors)} != {sorted(expected)}")
                layer = {}
                for name, shape in expected.items():
                    t = tensors[name]
                    if tuple(t["shape"]) != shape:
                        raise CorruptCheckpointError(f"tensor {name} has shape {t['shape']}, expected {list(shape)}")
                    data = np.array(t["data"], dtype=np.float64)
                    if data.size != int(np.prod(shape)):
                        raise CorruptCheckpointError(f"tensor {name} holds {data.size} values for shape {list(shape)}")
                    layer[name] = data.reshape(shape)
                weights.append(layer)
                trainable.append(bool(entry["trainable"]))
            names = tuple(d["feature_names"])
            if len(names) != arch.input_dim:
                raise CorruptCheckpointError("feature_names do not match the input width")
            scaler = None if d.get("scaler") is None else ScalerParams.from_dict(d["scaler"])
            metadata = d.get("metadata") or {}
        except CheckpointError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from exc
        return cls(arch, names, weights, trainable, scaler, dict(metadata), version)


def _expected_shapes(spec: dict) -> dict[str, tuple[int, ...]]:
    if spec["type"] == "lstm":
        h, d = spec["hidden_dim"], spec["input_dim"]
        return {"W": (4 * h, d), "U": (4 * h, h), "b": (4 * h,)}
    return {"W": (1, spec["input_dim"]), "b": (1,)}


def save_checkpoint(
    net: Network | NetworkCheckpoint,
    path,
    feature_names: Sequence[str] | None = None,
    scaler: ScalerParams | None = None,
    meta: dict | None = None,
) -> NetworkCheckpoint:
    """Write a checkpoint atomically (temp file + rename). Returns what was written."""
    if isinstance(net, NetworkCheckpoint):
        ckpt = net
    else:
        if feature_names is None:
            raise ValueError("feature_names are required when saving a Network")
        metadata = {"created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")}
        metadata.update(meta or {})
        ckpt = NetworkCheckpoint.from_network(net, feature_names, scaler, metadata)
    text = json.dumps(ckpt.to_dict(), allow_nan=False)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return ckpt


def load_checkpoint(path) -> NetworkCheckpoint:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: not valid JSON ({exc.msg})") from exc
    return NetworkCheckpoint.from_dict(d)


@dataclass(frozen=True)
class TransferSpec:
    """How a source checkpoint becomes a target-task network.

    ``mode="trainable"`` fine-tunes every layer. ``mode="untrainable"``
    freezes the pre-trained layers above the input-facing LSTM layer; the
    input-facing layer always trains, whether rebuilt or copied.
    """

    mode: str
    target_feature_names: tuple[str, ...]
    target_input_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "target_feature_names", tuple(self.target_feature_names))
        if self.mode not in MODES:
            raise TransferError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.target_input_dim is None:
            object.__setattr__(self, "target_input_dim", len(self.target_feature_names))
        if self.target_input_dim != len(self.target_feature_names):
            raise TransferError("target_input_dim must equal the number of target features")
        if self.target_input_dim < 1:
            raise TransferError("the target feature space is empty")


def adapt_for_target(ckpt: NetworkCheckpoint, spec: TransferSpec, rng: SeededRng | None = None) -> Network:
    """Build the target network from a source checkpoint.

    The layer count never changes. When the target feature list differs from
    the checkpoint's, the first LSTM layer is rebuilt for the new input width
    with fresh Glorot weights drawn from ``rng``; otherwise it is copied.
    Every deeper layer and the Dense head are copied verbatim.
    """
    n_lstm = len(ckpt.architecture.hidden_dims)
    if n_lstm < 2:
        raise TransferError("transfer needs a source network with at least two LSTM layers")
    if rng is None:
        rng = SeededRng(spec.seed)
    src = ckpt.weights
    if spec.target_feature_names == ckpt.feature_names:
        first = LSTMLayer(**{k: v.copy() for k, v in src[0].items()})
    else:
        first = LSTMLayer.glorot(spec.target_input_dim, ckpt.architecture.hidden_dims[0], rng)
    layers = [first]
    layers += [LSTMLayer(**{k: v.copy() for k, v in w.items()}) for w in src[1:-1]]
    layers.append(DenseLayer(**{k: v.copy() for k, v in src[-1].items()}))
    if spec.mode == "trainable":
        mask = [True] * len(layers)
    else:
        mask = [True] + [False] * (len(layers) - 1)
    return Network(layers, mask)


def run_transfer_task(
    source_ckpt: NetworkCheckpoint,
    target_train,
    target_val,
    spec: TransferSpec,
    cfg: TrainConfig = TrainConfig(),
) -> TrainingReport:
    net = adapt_for_target(source_ckpt, spec, SeededRng(spec.seed))
    return train(net, target_train, target_val, cfg)
