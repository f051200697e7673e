"""Q-function approximators: an exact lookup table and a small MLP."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class RegressorDivergence(RuntimeError):
    """Training produced a non-finite loss."""


class Regressor:
    """Interface: ``fit`` replaces all learned state, ``predict`` is pure."""

    kind = "abstract"

    def fit(self, features: np.ndarray, targets: np.ndarray, sample_weight=None) -> "Regressor":
        raise NotImplementedError

    def predict(self, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def fresh(self) -> "Regressor":
        """An untrained copy with the same configuration."""
        raise NotImplementedError


class ExactTable(Regressor):
    """Mean target per distinct feature vector; ``default`` for unseen inputs.

    Only meant for tiny instances where every state-action pair can be
    stored.
    """

    kind = "exact"

    def __init__(self, default: float = 0.0):
        self.default = float(default)
        self.table: dict[bytes, float] = {}

    def fresh(self) -> "ExactTable":
        return ExactTable(self.default)

    def fit(self, features, targets, sample_weight=None):
        features = np.ascontiguousarray(features, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        weights = np.ones(len(targets)) if sample_weight is None else np.asarray(sample_weight, float)
        sums: dict[bytes, float] = {}
        counts: dict[bytes, float] = {}
        first: dict[bytes, float] = {}
        mixed: set[bytes] = set()
        for row, y, w in zip(features, targets.tolist(), weights.tolist()):
            k = row.tobytes()
            sums[k] = sums.get(k, 0.0) + w * y
            counts[k] = counts.get(k, 0.0) + w
            if first.setdefault(k, y) != y:
                mixed.add(k)
        # a key with a single target keeps it exactly (no weighted rounding)
        self.table = {k: (sums[k] / counts[k] if k in mixed else first[k]) for k in sums}
        return self

    def predict(self, features):
        features = np.ascontiguousarray(features, dtype=np.float64)
        get = self.table.get
        return np.array([get(row.tobytes(), self.default) for row in features], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "default": self.default,
            "table": {k.hex(): v for k, v in sorted(self.table.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExactTable":
        out = cls(d.get("default", 0.0))
        out.table = {bytes.fromhex(k): float(v) for k, v in d["table"].items()}
        return out


def huber(residual: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise Huber loss and its derivative with respect to the residual."""
    a = np.abs(residual)
    quad = a <= delta
    loss = np.where(quad, 0.5 * residual**2, delta * (a - 0.5 * delta))
    grad = np.where(quad, residual, delta * np.sign(residual))
    return loss, grad


@dataclass(frozen=True)
class MLPConfig:
    hidden: tuple[int, ...] = (128, 64)
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    huber_delta: float = 1.0
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")


class MLP(Regressor):
    """Dense ReLU network with a linear output, trained on the Huber loss.

    Parameters are float64 and initialised (He-normal) from ``config.seed``
    on every :meth:`fit`, so a fit depends only on the config and the data
    order.
    """

    kind = "mlp"

    def __init__(self, config: MLPConfig | None = None, n_inputs: int | None = None):
        self.config = config if config is not None else MLPConfig()
        self.params: list[np.ndarray] = []
        self.history: list[float] = []
        if n_inputs is not None:
            self.init_params(n_inputs)

    def fresh(self) -> "MLP":
        return MLP(self.config)

    @property
    def n_inputs(self) -> int | None:
        return self.params[0].shape[0] if self.params else None

    def init_params(self, n_inputs: int) -> None:
        rng = np.random.default_rng(self.config.seed)
        sizes = (n_inputs, *self.config.hidden, 1)
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    def _forward(self, X):
        acts = [X]
        h = X
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            z = h @ W + b
            h = np.maximum(z, 0.0) if k < n_layers - 1 else z
            acts.append(h)
        return acts

    def predict(self, features):
        if not self.params:
            raise RuntimeError("MLP used before fit")
        X = np.asarray(features, dtype=np.float64)
        out = np.empty(X.shape[0])
        step = 8192
        for lo in range(0, X.shape[0], step):
            out[lo : lo + step] = self._forward(X[lo : lo + step])[-1][:, 0]
        return out

    def loss_and_grads(self, X, y, weight=None) -> tuple[float, list[np.ndarray]]:
        """(Weighted) mean Huber loss over the batch and its gradient for every parameter."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        acts = self._forward(X)
        residual = acts[-1][:, 0] - y
        loss, dres = huber(residual, self.config.huber_delta)
        w = np.full(X.shape[0], 1.0 / X.shape[0]) if weight is None else weight / np.sum(weight)
        delta = (dres * w)[:, None]
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        n_layers = len(self.params) // 2
        for k in range(n_layers - 1, -1, -1):
            grads[2 * k] = acts[k].T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.params[2 * k].T) * (acts[k] > 0)
        return float(np.sum(loss * w)), grads

    def fit(self, features, targets, sample_weight=None):
        """Train from a fresh initialisation.

        ``sample_weight`` stands for repeated rows: a row of weight ``k``
        counts ``k`` times in the loss.
        """
        cfg = self.config
        X = np.ascontiguousarray(features, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64)
        sw = None if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        self.init_params(X.shape[1])
        rng = np.random.default_rng([cfg.seed, 1])
        m1 = [np.zeros_like(p) for p in self.params]
        m2 = [np.zeros_like(p) for p in self.params]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        self.history = []
        n = X.shape[0]
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                loss, grads = self.loss_and_grads(X[idx], y[idx], None if sw is None else sw[idx])
                if not np.isfinite(loss):
                    raise RegressorDivergence(
                        f"non-finite loss {loss} at epoch {epoch}, sample {lo}; "
                        f"target range [{y.min():.4g}, {y.max():.4g}]"
                    )
                total += loss * idx.size
                step += 1
                if cfg.optimizer == "sgd":
                    for p, g in zip(self.params, grads):
                        p -= cfg.learning_rate * g
                    continue
                lr = cfg.learning_rate * np.sqrt(1 - beta2**step) / (1 - beta1**step)
                for p, g, a, b in zip(self.params, grads, m1, m2):
                    a *= beta1
                    a += (1 - beta1) * g
                    b *= beta2
                    b += (1 - beta2) * g * g
                    p -= lr * a / (np.sqrt(b) + eps)
            self.history.append(total / max(n, 1))
        return self

    # -- persistence: magic, header length, JSON header, raw little-endian float64

    MAGIC = b"EVCMLP01"

    def save(self, path: str | Path) -> None:
        header = json.dumps(
            {
                "config": asdict(self.config),
                "shapes": [list(p.shape) for p in self.params],
                "dtype": "<f8",
            },
            sort_keys=True,
        ).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for p in self.params:
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "MLP":
        raw = Path(path).read_bytes()
        if raw[: len(cls.MAGIC)] != cls.MAGIC:
            raise ValueError(f"{path}: not an MLP weight file")
        off = len(cls.MAGIC)
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = json.loads(raw[off : off + hlen])
        off += hlen
        cfg = header["config"]
        cfg["hidden"] = tuple(cfg["hidden"])
        out = cls(MLPConfig(**cfg))
        for shape in header["shapes"]:
            size = int(np.prod(shape))
            out.params.append(np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy())
            off += 8 * size
        if off != len(raw):
            raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
        return out
