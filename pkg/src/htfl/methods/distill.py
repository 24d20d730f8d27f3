"""Mutual-distillation methods.

Every client trains its own model alongside a shared small auxiliary
model; only the auxiliary model travels. Teachers are always detached,
so distillation gradients never leak into the other network.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..linalg import truncated_svd
from ..models import HeadNet, ModelInstance, auxiliary_spec, build
from ..optim import Sgd
from .base import (
    GlobalSvd,
    GlobalTensors,
    LocalStats,
    Method,
    SvdPacket,
    TensorPacket,
    aggregate_weighted,
)


def export_params(model) -> dict[str, np.ndarray]:
    return {n: p.data.copy() for n, p in model.params.items()}


def load_params(model, tensors: dict[str, np.ndarray]):
    for name, tensor in model.params.items():
        tensor.data[...] = tensors[name]


class Fml(Method):
    """Bidirectional logit distillation between the local and auxiliary model."""

    name = "fml"

    def __init__(self, ctx):
        super().__init__(ctx)
        self.aux_spec = auxiliary_spec(ctx.group, ctx.in_shape, ctx.num_classes)

    def setup_client(self, client):
        # one shared init so round-1 aggregation starts from a single point
        client.aux = build(
            self.aux_spec, self.ctx.in_shape, self.ctx.num_classes,
            seed=[self.ctx.seed, 0xA0],
        )
        client.aux_opt = Sgd(client.aux.params.values(), self.ctx.sgd)

    def install(self, client, global_knowledge):
        load_params(client.aux, self._unpack(global_knowledge))

    def _unpack(self, global_knowledge) -> dict[str, np.ndarray]:
        return global_knowledge.tensors

    def distill_terms(self, loss_local, loss_aux, f_l, z_l, f_a, z_a):
        lam, temp = self.cfg.lambda_kd, self.cfg.temperature
        if lam > 0:
            loss_local = T.add(loss_local, T.scale(T.kl_divergence(z_a.detach(), z_l, temp), lam))
            loss_aux = T.add(loss_aux, T.scale(T.kl_divergence(z_l.detach(), z_a, temp), lam))
        return loss_local, loss_aux

    def train_step(self, client, xb, yb, global_knowledge, stats: LocalStats):
        f_l, z_l = client.model.forward(xb)
        f_a, z_a = client.aux.forward(xb)
        loss_local = T.cross_entropy(z_l, yb)
        loss_aux = T.cross_entropy(z_a, yb)
        loss_local, loss_aux = self.distill_terms(loss_local, loss_aux, f_l, z_l, f_a, z_a)
        loss_local.backward()
        loss_aux.backward()
        client.opt.step()
        client.aux_opt.step()
        stats.record(loss_local.item())
        self.after_step_pair(client, yb, f_l, z_l, f_a, z_a)

    def after_step_pair(self, client, yb, f_l, z_l, f_a, z_a):
        pass

    def make_packet(self, client, global_knowledge):
        return TensorPacket(
            tensors=export_params(client.aux),
            sender=client.cid,
            train_size=client.train_size,
        )

    def aggregate(self, packets, round_idx):
        return aggregate_weighted(packets)


class FedKd(Fml):
    """FML plus feature alignment, with SVD-compressed auxiliary transfer.

    Both directions add an MSE term between local and auxiliary features;
    every 2-D auxiliary matrix travels as truncated SVD factors at the
    configured energy, uplink and downlink alike.
    """

    name = "fedkd"

    def distill_terms(self, loss_local, loss_aux, f_l, z_l, f_a, z_a):
        loss_local, loss_aux = super().distill_terms(loss_local, loss_aux, f_l, z_l, f_a, z_a)
        lam = self.cfg.lambda_kd
        if lam > 0:
            loss_local = T.add(loss_local, T.scale(T.mse(f_a.detach(), f_l), lam))
            loss_aux = T.add(loss_aux, T.scale(T.mse(f_l.detach(), f_a), lam))
        return loss_local, loss_aux

    def _compress(self, tensors: dict[str, np.ndarray]):
        matrices, vectors = {}, {}
        for name, arr in tensors.items():
            if arr.ndim == 2:
                matrices[name] = truncated_svd(arr, self.cfg.svd_energy)
            else:
                vectors[name] = arr.copy()
        return matrices, vectors

    def make_packet(self, client, global_knowledge):
        matrices, vectors = self._compress(export_params(client.aux))
        return SvdPacket(
            matrices=matrices, vectors=vectors,
            sender=client.cid, train_size=client.train_size,
        )

    def aggregate(self, packets, round_idx):
        raw = [
            TensorPacket(tensors=p.reconstruct(), sender=p.sender, train_size=p.train_size)
            for p in packets
        ]
        merged = aggregate_weighted(raw)
        matrices, vectors = self._compress(merged.tensors)
        return GlobalSvd(matrices=matrices, vectors=vectors)

    def _unpack(self, global_knowledge) -> dict[str, np.ndarray]:
        out = {n: f.reconstruct().astype(np.float32) for n, f in global_knowledge.matrices.items()}
        out.update(global_knowledge.vectors)
        return out


class FedMrl(Fml):
    """FML plus a private fusion head over both feature vectors.

    The fusion head Linear(2*feature_dim -> C) trains on detached features,
    never travels, and serves as the client's inference path.
    """

    name = "fedmrl"

    def setup_client(self, client):
        super().setup_client(client)
        client.fusion = HeadNet(
            2 * self.ctx.feature_dim, self.ctx.num_classes, 0,
            seed=[self.ctx.seed, 0xF0, client.cid],
        )
        client.fusion_opt = Sgd(client.fusion.params.values(), self.ctx.sgd)

    def after_step_pair(self, client, yb, f_l, z_l, f_a, z_a):
        both = np.concatenate([f_l.data, f_a.data], axis=1)
        loss = T.cross_entropy(client.fusion.forward(both), yb)
        loss.backward()
        client.fusion_opt.step()

    def predict_logits(self, client, x: np.ndarray) -> np.ndarray:
        f_l, _ = client.model.forward(x)
        f_a, _ = client.aux.forward(x)
        both = np.concatenate([f_l.data, f_a.data], axis=1)
        return client.fusion.forward(both).data
