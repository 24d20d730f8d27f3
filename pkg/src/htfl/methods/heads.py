"""Methods that share classifier-head knowledge.

All three require every client to expose the same head shape, so they
reject head-heterogeneous model groups.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..models import HeadNet, init_params
from ..optim import Sgd, SgdConfig
from ..tensor import Tensor
from .base import (
    ClassMapPacket,
    ClassMeanTracker,
    GlobalTensors,
    GlobalWithGenerator,
    Method,
    TensorPacket,
    aggregate_weighted,
)


def _head_apply(tensors: dict[str, np.ndarray], h: Tensor, head_hidden: int) -> Tensor:
    """Run a head forward with frozen parameter arrays."""
    for i in range(head_hidden):
        h = T.relu(T.add(T.matmul(h, Tensor(tensors[f"head.{i}.w"])), Tensor(tensors[f"head.{i}.b"])))
    return T.add(T.matmul(h, Tensor(tensors["head.out.w"])), Tensor(tensors["head.out.b"]))


class LgFedAvg(Method):
    """Clients train whole models locally but average only their heads."""

    name = "lgfedavg"
    requires_shared_head = True

    def install(self, client, global_knowledge):
        head = global_knowledge.head if isinstance(global_knowledge, GlobalWithGenerator) \
            else global_knowledge
        client.model.load_section("head", head.tensors)

    def make_packet(self, client, global_knowledge):
        return TensorPacket(
            tensors=client.model.export_section("head"),
            sender=client.cid,
            train_size=client.train_size,
        )

    def aggregate(self, packets, round_idx):
        return aggregate_weighted(packets)


class Generator:
    """Conditional feature generator: (noise, one-hot label) -> feature vector."""

    def __init__(self, noise_dim: int, num_classes: int, feature_dim: int, seed):
        in_dim = noise_dim + num_classes
        entries = [
            ("gen.0.w", (in_dim, feature_dim), in_dim),
            ("gen.0.b", (feature_dim,), in_dim),
            ("gen.1.w", (feature_dim, feature_dim), feature_dim),
            ("gen.1.b", (feature_dim,), feature_dim),
        ]
        self.noise_dim = noise_dim
        self.num_classes = num_classes
        self.params = init_params(entries, seed)

    def forward(self, zy: np.ndarray) -> Tensor:
        h = T.relu(T.add(T.matmul(Tensor(zy), self.params["gen.0.w"]), self.params["gen.0.b"]))
        return T.relu(T.add(T.matmul(h, self.params["gen.1.w"]), self.params["gen.1.b"]))

    def export(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}


def generator_features(tensors: dict[str, np.ndarray], zy: np.ndarray) -> np.ndarray:
    """Client-side generator forward with downloaded (frozen) parameters."""
    h = np.maximum(zy @ tensors["gen.0.w"] + tensors["gen.0.b"], 0.0)
    return np.maximum(h @ tensors["gen.1.w"] + tensors["gen.1.b"], 0.0)


def _zy_batch(rng: np.random.Generator, n: int, noise_dim: int, num_classes: int):
    z = rng.standard_normal((n, noise_dim)).astype(np.float32)
    y = rng.integers(0, num_classes, size=n)
    onehot = np.zeros((n, num_classes), dtype=np.float32)
    onehot[np.arange(n), y] = 1.0
    return np.concatenate([z, onehot], axis=1), y


class FedGen(LgFedAvg):
    """Head averaging plus a server-trained generator of class-conditional features.

    The server fits the generator against the frozen uploaded heads; clients
    download it with the global head and add a cross-entropy term on
    generated features, which trains only their heads.
    """

    name = "fedgen"
    requires_shared_head = True
    SERVER_BATCH = 32

    def server_init(self, rng_seed):
        self._seed = rng_seed
        self.generator = Generator(
            self.cfg.noise_dim, self.ctx.num_classes, self.ctx.feature_dim,
            seed=[rng_seed, 0x6E, 0],
        )
        self.gen_opt = Sgd(
            self.generator.params.values(), SgdConfig(learning_rate=self.cfg.server_lr)
        )

    def aggregate(self, packets, round_idx):
        head = aggregate_weighted(packets)
        total = float(sum(p.train_size for p in packets))
        weights = [p.train_size / total for p in packets]
        head_hidden = self.ctx.group.specs[0].head_hidden
        rng = np.random.default_rng([self._seed, 0x6E, 1 + round_idx])
        for _ in range(self.cfg.server_epochs):
            zy, y = _zy_batch(rng, self.SERVER_BATCH, self.cfg.noise_dim, self.ctx.num_classes)
            feats = self.generator.forward(zy)
            loss = None
            for p, w in zip(packets, weights):
                term = T.scale(T.cross_entropy(_head_apply(p.tensors, feats, head_hidden), y), w)
                loss = term if loss is None else T.add(loss, term)
            loss.backward()
            self.gen_opt.step()
        return GlobalWithGenerator(head=head, generator=self.generator.export())

    def loss_terms(self, client, yb, feats, logits, global_knowledge):
        if self.cfg.lambda_reg <= 0 or not isinstance(global_knowledge, GlobalWithGenerator):
            return []
        zy, y = _zy_batch(
            client.method_rng, len(yb), self.cfg.noise_dim, self.ctx.num_classes
        )
        gen_feats = generator_features(global_knowledge.generator, zy)
        gen_logits = client.model.head_forward(Tensor(gen_feats))
        return [T.scale(T.cross_entropy(gen_logits, y), self.cfg.lambda_reg)]


class FedGh(Method):
    """Clients upload class feature prototypes; the server trains the shared head.

    Each round a fresh head is fitted to the received prototype-label pairs,
    weighted by their sample counts, and broadcast back.
    """

    name = "fedgh"
    requires_shared_head = True

    def server_init(self, rng_seed):
        self._seed = rng_seed

    def begin_round(self, client, global_knowledge):
        client.scratch["tracker"] = ClassMeanTracker(self.ctx.feature_dim)

    def after_step(self, client, yb, feats, logits):
        client.scratch["tracker"].update(yb, feats.data)

    def make_packet(self, client, global_knowledge):
        tracker = client.scratch["tracker"]
        return ClassMapPacket(
            means=tracker.means(),
            counts=dict(tracker.counts),
            sender=client.cid,
            train_size=client.train_size,
        )

    def install(self, client, global_knowledge):
        client.model.load_section("head", global_knowledge.tensors)

    def aggregate(self, packets, round_idx):
        protos, labels, counts = [], [], []
        for p in packets:
            for cls in sorted(p.means):
                protos.append(p.means[cls])
                labels.append(cls)
                counts.append(p.counts[cls])
        features = np.stack(protos).astype(np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.float64)
        head_hidden = self.ctx.group.specs[0].head_hidden
        head = HeadNet(
            self.ctx.feature_dim, self.ctx.num_classes, head_hidden,
            seed=[self._seed, 0x64, round_idx],
        )
        opt = Sgd(head.params.values(), SgdConfig(learning_rate=self.cfg.server_lr))
        for _ in range(self.cfg.server_epochs):
            loss = T.cross_entropy(head.forward(features), labels, sample_weights=counts)
            loss.backward()
            opt.step()
        return GlobalTensors(tensors=head.export())
