"""Shared machinery for knowledge-sharing methods.

A method defines what a client uploads (its knowledge packet), how the
server fuses packets into global knowledge, how a client applies the
download, and any extra loss terms during local training. Byte
accounting is uniform: 4 bytes per float actually transmitted;
metadata (ids, counts) rides for free.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..errors import AggregationError, MethodInapplicableError
from ..linalg import TruncatedSvd
from ..models import ModelGroup, ModelInstance
from ..optim import Sgd, SgdConfig

logger = logging.getLogger(__name__)

BATCH_SIZE = 10
BYTES_PER_FLOAT = 4


@dataclass(frozen=True)
class MethodConfig:
    lambda_reg: float = 1.0  # prototype/logit regularizer weight
    lambda_kd: float = 1.0  # distillation weight
    temperature: float = 1.0
    server_epochs: int = 100
    server_lr: float = 0.01
    svd_energy: float = 0.95
    margin_cap: float = 100.0
    noise_dim: int = 32
    proto_weighting: str = "per_class"  # or "client_size"

    def __post_init__(self):
        for name in ("lambda_reg", "lambda_kd", "temperature", "server_lr",
                     "svd_energy", "margin_cap"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not (0 < self.svd_energy <= 1):
            raise ValueError(f"svd_energy must be in (0, 1], got {self.svd_energy}")
        if self.server_epochs < 1 or self.noise_dim < 1:
            raise ValueError("server_epochs and noise_dim must be >= 1")
        if self.proto_weighting not in ("per_class", "client_size"):
            raise ValueError(f"unknown proto_weighting '{self.proto_weighting}'")


# ---------------------------------------------------------------------------
# knowledge packets (client -> server) and global knowledge (server -> client)

@dataclass(frozen=True)
class TensorPacket:
    """Raw parameter tensors: classifier heads or whole auxiliary models."""

    tensors: dict[str, np.ndarray]
    sender: int
    train_size: int

    def float_count(self) -> int:
        return int(sum(a.size for a in self.tensors.values()))


@dataclass(frozen=True)
class ClassMapPacket:
    """Per-class mean vectors (features or logits) with sample counts."""

    means: dict[int, np.ndarray]
    counts: dict[int, int]
    sender: int
    train_size: int

    def float_count(self) -> int:
        return int(sum(a.size for a in self.means.values()))


@dataclass(frozen=True)
class SvdPacket:
    """Parameter tensors with every 2-D matrix in truncated SVD form."""

    matrices: dict[str, TruncatedSvd]
    vectors: dict[str, np.ndarray]
    sender: int
    train_size: int

    def float_count(self) -> int:
        total = sum(f.float_count() for f in self.matrices.values())
        total += sum(a.size for a in self.vectors.values())
        return int(total)

    def reconstruct(self) -> dict[str, np.ndarray]:
        out = {n: f.reconstruct().astype(np.float32) for n, f in self.matrices.items()}
        out.update({n: a.copy() for n, a in self.vectors.items()})
        return out


@dataclass(frozen=True)
class GlobalTensors:
    tensors: dict[str, np.ndarray]

    def float_count(self) -> int:
        return int(sum(a.size for a in self.tensors.values()))


@dataclass(frozen=True)
class GlobalClassMap:
    table: dict[int, np.ndarray]

    def float_count(self) -> int:
        return int(sum(a.size for a in self.table.values()))


@dataclass(frozen=True)
class GlobalSvd:
    matrices: dict[str, TruncatedSvd]
    vectors: dict[str, np.ndarray]

    def float_count(self) -> int:
        total = sum(f.float_count() for f in self.matrices.values())
        total += sum(a.size for a in self.vectors.values())
        return int(total)


@dataclass(frozen=True)
class GlobalWithGenerator:
    """Aggregated heads plus the server generator's parameters."""

    head: GlobalTensors
    generator: dict[str, np.ndarray]

    def float_count(self) -> int:
        return self.head.float_count() + int(sum(a.size for a in self.generator.values()))


def byte_size(packet) -> int:
    if packet is None:
        return 0
    return packet.float_count() * BYTES_PER_FLOAT


def aggregate_weighted(packets, weights=None, class_weighting: str = "per_class"):
    """Weighted mean of same-variant packets.

    Tensor packets average per key with the given weights (train sizes by
    default). Class-map packets average per class, weighted either by the
    per-class counts each client reports or by client train size. Classes
    nobody reports are absent; weights renormalize over the packets
    actually received.
    """
    packets = list(packets)
    if not packets:
        raise AggregationError("no packets to aggregate")
    kinds = {type(p) for p in packets}
    if len(kinds) != 1:
        raise AggregationError(f"mixed packet variants: {sorted(k.__name__ for k in kinds)}")
    if weights is None:
        weights = [float(p.train_size) for p in packets]
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(packets) or weights.sum() <= 0:
        raise AggregationError("aggregation weights must match packets and sum > 0")

    first = packets[0]
    if isinstance(first, TensorPacket):
        keys = set(first.tensors)
        for p in packets:
            if set(p.tensors) != keys:
                raise AggregationError(
                    f"senders {first.sender} and {p.sender} disagree on tensor keys"
                )
        out = {}
        total = weights.sum()
        for key in keys:
            shape = first.tensors[key].shape
            acc = np.zeros(shape, dtype=np.float64)
            for p, w in zip(packets, weights):
                if p.tensors[key].shape != shape:
                    raise AggregationError(
                        f"key '{key}': shape {shape} from sender {first.sender} vs "
                        f"{p.tensors[key].shape} from sender {p.sender}"
                    )
                acc += w * p.tensors[key]
            out[key] = (acc / total).astype(np.float32)
        return GlobalTensors(tensors=out)

    if isinstance(first, ClassMapPacket):
        table: dict[int, np.ndarray] = {}
        for cls in sorted({c for p in packets for c in p.means}):
            acc = None
            total = 0.0
            for p, w in zip(packets, weights):
                if cls not in p.means:
                    continue
                wc = float(p.counts[cls]) if class_weighting == "per_class" else float(w)
                vec = p.means[cls]
                if acc is None:
                    acc = np.zeros(vec.shape, dtype=np.float64)
                elif vec.shape != acc.shape:
                    raise AggregationError(
                        f"class {cls}: vector shape {acc.shape} vs {vec.shape} "
                        f"from sender {p.sender}"
                    )
                acc += wc * vec
                total += wc
            if acc is not None and total > 0:
                table[cls] = (acc / total).astype(np.float32)
        if not table:
            raise AggregationError("no classes present in any packet")
        return GlobalClassMap(table=table)

    raise AggregationError(f"cannot aggregate packets of type {type(first).__name__}")


# ---------------------------------------------------------------------------
# local training loop

@dataclass
class LocalStats:
    steps: int = 0
    loss_sum: float = 0.0
    guard_used: bool = False

    @property
    def mean_loss(self) -> float:
        return self.loss_sum / max(self.steps, 1)

    def record(self, loss: float):
        self.steps += 1
        self.loss_sum += loss


def iterate_batches(x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
                    epochs: int, stats: LocalStats):
    """Exactly floor(n / BATCH_SIZE) steps per epoch, remainder dropped.

    Clients with fewer than BATCH_SIZE samples fall back to one full-batch
    step per epoch so nobody sits idle.
    """
    n = len(y)
    steps = n // BATCH_SIZE
    for _ in range(epochs):
        order = rng.permutation(n)
        if steps == 0:
            if not stats.guard_used:
                logger.debug("client has %d < %d samples; using one full batch", n, BATCH_SIZE)
                stats.guard_used = True
            yield x[order], y[order]
            continue
        for s in range(steps):
            sel = order[s * BATCH_SIZE : (s + 1) * BATCH_SIZE]
            yield x[sel], y[sel]


@dataclass
class MethodContext:
    """Everything a method needs to build client- and server-side state."""

    group: ModelGroup
    in_shape: tuple
    num_classes: int
    feature_dim: int
    seed: int
    sgd: SgdConfig
    config: MethodConfig


class ClassMeanTracker:
    """Running per-class means of vectors seen during the local epoch."""

    def __init__(self, dim: int):
        self.dim = dim
        self.sums: dict[int, np.ndarray] = {}
        self.counts: dict[int, int] = {}

    def update(self, labels: np.ndarray, vectors: np.ndarray):
        for cls in np.unique(labels):
            mask = labels == cls
            c = int(cls)
            if c not in self.sums:
                self.sums[c] = np.zeros(self.dim, dtype=np.float64)
                self.counts[c] = 0
            self.sums[c] += vectors[mask].sum(axis=0)
            self.counts[c] += int(mask.sum())

    def means(self) -> dict[int, np.ndarray]:
        return {c: (s / self.counts[c]).astype(np.float32) for c, s in self.sums.items()}


class Method:
    """Base class: plain cross-entropy training, no knowledge exchange."""

    name = "local"
    requires_shared_head = False

    def __init__(self, ctx: MethodContext):
        self.ctx = ctx
        self.cfg = ctx.config
        self.validate_group(ctx.group)

    def validate_group(self, group: ModelGroup):
        if self.requires_shared_head and group.heterogeneous_heads:
            raise MethodInapplicableError(
                self.name, group.name, "clients must share one classifier head shape"
            )

    # --- client side -------------------------------------------------
    def setup_client(self, client):
        """Attach per-client method state (auxiliary models etc.)."""

    def install(self, client, global_knowledge):
        """Apply the downloaded global knowledge before local training."""

    def local_round(self, client, global_knowledge, rng: np.random.Generator,
                    epochs: int):
        stats = LocalStats()
        self.begin_round(client, global_knowledge)
        for xb, yb in iterate_batches(client.train_x, client.train_y, rng, epochs, stats):
            self.train_step(client, xb, yb, global_knowledge, stats)
        return self.make_packet(client, global_knowledge), stats

    def begin_round(self, client, global_knowledge):
        """Reset per-round accumulators."""

    def train_step(self, client, xb, yb, global_knowledge, stats: LocalStats):
        feats, logits = client.model.forward(xb)
        loss = T.cross_entropy(logits, yb)
        for term in self.loss_terms(client, yb, feats, logits, global_knowledge):
            loss = T.add(loss, term)
        loss.backward()
        client.opt.step()
        stats.record(loss.item())
        self.after_step(client, yb, feats, logits)

    def loss_terms(self, client, yb, feats, logits, global_knowledge):
        return []

    def after_step(self, client, yb, feats, logits):
        """Observe detached forward values (for running class means)."""

    def make_packet(self, client, global_knowledge):
        return None

    def predict_logits(self, client, x: np.ndarray) -> np.ndarray:
        return client.model.predict(x)

    # --- server side -------------------------------------------------
    def server_init(self, rng_seed):
        """Create persistent server state for one run."""

    def aggregate(self, packets, round_idx: int):
        """Fuse this round's packets into the next global knowledge."""
        return None

    def download_carrier(self, global_knowledge):
        """What one participant downloads; None means nothing."""
        return global_knowledge


class LocalOnly(Method):
    """No communication at all; the floor every method is measured against."""

    name = "local"


def class_rows_with_targets(yb: np.ndarray, table: dict[int, np.ndarray]):
    """Rows of the batch whose class has an entry in the global table."""
    rows = [i for i, y in enumerate(yb) if int(y) in table]
    if not rows:
        return None, None
    targets = np.stack([table[int(yb[i])] for i in rows])
    return np.asarray(rows, dtype=np.int64), targets


def make_sgd(model: ModelInstance, cfg: SgdConfig) -> Sgd:
    return Sgd(model.params.values(), cfg)
