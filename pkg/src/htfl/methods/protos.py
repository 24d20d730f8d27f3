"""Prototype- and logit-sharing methods.

Clients upload per-class mean vectors gathered during the local epoch;
the server fuses them per class. These carriers are tiny and make no
assumption about client architectures.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..optim import Sgd, SgdConfig
from ..tensor import Tensor
from .base import (
    ClassMapPacket,
    ClassMeanTracker,
    GlobalClassMap,
    Method,
    class_rows_with_targets,
    aggregate_weighted,
)


class _ClassMeanMethod(Method):
    """Common upload/regularize cycle; subclasses pick the vector to track."""

    vector_dim_attr = "feature_dim"

    def _dim(self) -> int:
        return getattr(self.ctx, self.vector_dim_attr)

    def _vectors(self, feats, logits):
        raise NotImplementedError

    def begin_round(self, client, global_knowledge):
        client.scratch["tracker"] = ClassMeanTracker(self._dim())

    def after_step(self, client, yb, feats, logits):
        client.scratch["tracker"].update(yb, self._vectors(feats, logits).data)

    def loss_terms(self, client, yb, feats, logits, global_knowledge):
        if self.cfg.lambda_reg <= 0 or not isinstance(global_knowledge, GlobalClassMap):
            return []
        rows, targets = class_rows_with_targets(yb, global_knowledge.table)
        if rows is None:
            return []
        student = T.gather_rows(self._vectors(feats, logits), rows)
        return [T.scale(T.mse(student, Tensor(targets)), self.cfg.lambda_reg)]

    def make_packet(self, client, global_knowledge):
        tracker = client.scratch["tracker"]
        return ClassMapPacket(
            means=tracker.means(),
            counts=dict(tracker.counts),
            sender=client.cid,
            train_size=client.train_size,
        )

    def aggregate(self, packets, round_idx):
        return aggregate_weighted(packets, class_weighting=self.cfg.proto_weighting)


class Fd(_ClassMeanMethod):
    """Clients exchange per-class mean logits and regularize toward them."""

    name = "fd"
    vector_dim_attr = "num_classes"

    def _vectors(self, feats, logits):
        return logits


class FedProto(_ClassMeanMethod):
    """Clients exchange per-class mean features (prototypes)."""

    name = "fedproto"

    def _vectors(self, feats, logits):
        return feats


class FedTgp(FedProto):
    """Prototype sharing with server-side trainable global prototypes.

    The server keeps one trainable vector per class, initialized from the
    first weighted means and persisted across rounds. Each round it runs a
    margin-based contrastive refinement against the uploaded prototypes:
    softmax cross-entropy over scores -||p - t_j||^2 + margin on the true
    class, margin = min(margin_cap, smallest inter-class distance).
    """

    name = "fedtgp"

    def server_init(self, rng_seed):
        self.table: dict[int, np.ndarray] = {}

    def aggregate(self, packets, round_idx):
        merged = aggregate_weighted(packets, class_weighting=self.cfg.proto_weighting)
        observed = sorted(merged.table)
        if len(observed) < 2:
            # nothing to contrast against; fall back to plain weighted means
            for cls, vec in merged.table.items():
                self.table[cls] = vec.copy()
            return GlobalClassMap(table={c: v.copy() for c, v in self.table.items()})
        for cls, vec in merged.table.items():
            if cls not in self.table:
                self.table[cls] = vec.copy()
        classes = sorted(self.table)
        pos = {c: i for i, c in enumerate(classes)}
        protos, labels = [], []
        for p in packets:
            for cls in sorted(p.means):
                protos.append(p.means[cls])
                labels.append(pos[cls])
        points = np.stack(protos).astype(np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        onehot = np.zeros((len(labels), len(classes)), dtype=np.float32)
        onehot[np.arange(len(labels)), labels] = 1.0

        mat = Tensor(np.stack([self.table[c] for c in classes]), requires_grad=True)
        opt = Sgd([mat], SgdConfig(learning_rate=self.cfg.server_lr))
        for _ in range(self.cfg.server_epochs):
            margin = min(self.cfg.margin_cap, _min_interclass_distance(mat.data))
            scores = T.add(
                T.scale(T.pairwise_sqdist(Tensor(points), mat), -1.0),
                Tensor(onehot * np.float32(margin)),
            )
            loss = T.cross_entropy(scores, labels)
            loss.backward()
            opt.step()
        for c in classes:
            self.table[c] = mat.data[pos[c]].copy()
        return GlobalClassMap(table={c: v.copy() for c, v in self.table.items()})


def _min_interclass_distance(mat: np.ndarray) -> float:
    diff = mat[:, None, :] - mat[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    n = dist.shape[0]
    return float(dist[np.triu_indices(n, k=1)].min())
