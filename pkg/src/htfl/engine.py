"""Federated round loop.

Each round: sampled participants download the previous global knowledge,
run their local epochs, and upload knowledge packets; the server then
aggregates in ascending client order. All randomness comes from streams
keyed on (seed, purpose, client, round), so results are identical for
any worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .errors import EngineError, MethodInapplicableError
from .metrics import RoundReport, byte_account, evaluate_accuracy, summarize_run
from .methods import MethodConfig, MethodContext, make_method
from .models import ModelInstance, assign_model, build, get_group
from .optim import Sgd, SgdConfig
from .partition import PartitionResult, ScenarioSpec, run_scenario

TAG_INIT = 0x01
TAG_BATCH = 0x02
TAG_PARTICIPATION = 0x03
TAG_METHOD = 0x04


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioSpec
    group: str = "mlp-4"
    method: str = "local"
    feature_dim: int = 512
    rounds: int = 1000
    participation: float = 1.0
    local_epochs: int = 1
    seed: int = 0
    repeats: int = 3
    eval_every: int = 1
    workers: int = 1
    learning_rate: float = 0.01
    momentum: float = 0.0
    record_timing: bool = True
    method_config: MethodConfig = field(default_factory=MethodConfig)

    def __post_init__(self):
        if self.rounds < 1 or self.repeats < 1 or self.eval_every < 1:
            raise ValueError("rounds, repeats and eval_every must be >= 1")
        if not (0.0 < self.participation <= 1.0):
            raise ValueError(f"participation must be in (0, 1], got {self.participation}")
        if self.local_epochs < 1 or self.workers < 1:
            raise ValueError("local_epochs and workers must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def n_clients(self) -> int:
        return self.scenario.n_clients


@dataclass
class ClientState:
    cid: int
    model: ModelInstance
    opt: Sgd
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    aux: ModelInstance | None = None
    aux_opt: Sgd | None = None
    fusion: object | None = None
    fusion_opt: Sgd | None = None
    method_rng: np.random.Generator | None = None
    scratch: dict = field(default_factory=dict)

    @property
    def train_size(self) -> int:
        return len(self.train_y)


def sample_participants(n_clients: int, participation: float, seed: int, round_idx: int):
    """ceil(participation * N) distinct clients, ascending."""
    m = math.ceil(participation * n_clients)
    if m >= n_clients:
        return list(range(n_clients))
    rng = np.random.default_rng([seed, TAG_PARTICIPATION, round_idx])
    return sorted(int(c) for c in rng.choice(n_clients, size=m, replace=False))


class FederatedRun:
    """One full training run: fixed dataset, partition, and seed."""

    def __init__(self, exp: ExperimentSpec, dataset: Dataset, partition: PartitionResult,
                 run_seed: int):
        self.exp = exp
        self.run_seed = run_seed
        group = get_group(exp.group, exp.feature_dim)
        sgd_cfg = SgdConfig(learning_rate=exp.learning_rate, momentum=exp.momentum)
        ctx = MethodContext(
            group=group,
            in_shape=dataset.sample_shape,
            num_classes=dataset.num_classes,
            feature_dim=exp.feature_dim,
            seed=run_seed,
            sgd=sgd_cfg,
            config=exp.method_config,
        )
        self.method = make_method(exp.method, ctx)
        self.clients: list[ClientState] = []
        feats, labels = dataset.features, dataset.labels
        for i in range(exp.n_clients):
            # Clients sharing an architecture share its initial weights, as if
            # the server built one template per spec and shipped copies. Keeps
            # same-spec feature spaces aligned at round 1.
            model = build(
                assign_model(i, group), dataset.sample_shape, dataset.num_classes,
                seed=[run_seed, TAG_INIT, i % len(group.specs)],
            )
            tr, te = partition.client_train[i], partition.client_test[i]
            client = ClientState(
                cid=i,
                model=model,
                opt=Sgd(model.params.values(), sgd_cfg),
                train_x=feats[tr], train_y=labels[tr],
                test_x=feats[te], test_y=labels[te],
            )
            self.method.setup_client(client)
            self.clients.append(client)
        self.method.server_init(run_seed)
        self.global_knowledge = None

    def _train_one(self, cid: int, round_idx: int):
        client = self.clients[cid]
        try:
            if self.global_knowledge is not None:
                self.method.install(client, self.global_knowledge)
        except Exception as exc:  # noqa: BLE001 - annotate with client/stage
            raise EngineError(cid, "install", str(exc)) from exc
        client.method_rng = np.random.default_rng([self.run_seed, TAG_METHOD, cid, round_idx])
        rng = np.random.default_rng([self.run_seed, TAG_BATCH, cid, round_idx])
        try:
            return self.method.local_round(
                client, self.global_knowledge, rng, self.exp.local_epochs
            )
        except Exception as exc:  # noqa: BLE001
            raise EngineError(cid, "local_train", str(exc)) from exc

    def round(self, round_idx: int) -> RoundReport:
        exp = self.exp
        participants = sample_participants(
            exp.n_clients, exp.participation, self.run_seed, round_idx
        )
        t0 = time.perf_counter()
        if exp.workers > 1:
            with ThreadPoolExecutor(max_workers=exp.workers) as pool:
                results = list(pool.map(lambda c: self._train_one(c, round_idx), participants))
        else:
            results = [self._train_one(c, round_idx) for c in participants]
        client_seconds = time.perf_counter() - t0

        packets = [packet for packet, _ in results if packet is not None]
        up_bytes, down_bytes = byte_account(
            packets, self.global_knowledge, len(participants)
        )
        t1 = time.perf_counter()
        if packets:
            try:
                self.global_knowledge = self.method.aggregate(packets, round_idx)
            except Exception as exc:  # noqa: BLE001
                raise EngineError(-1, "aggregate", str(exc)) from exc
        server_seconds = time.perf_counter() - t1

        report = RoundReport(
            round=round_idx,
            upload_bytes=up_bytes,
            download_bytes=down_bytes,
            client_seconds=client_seconds if exp.record_timing else 0.0,
            server_seconds=server_seconds if exp.record_timing else 0.0,
        )
        if round_idx % exp.eval_every == 0:
            per_correct, per_total = [], []
            for client in self.clients:
                logits = self.method.predict_logits(client, client.test_x)
                per_correct.append(int((logits.argmax(axis=1) == client.test_y).sum()))
                per_total.append(len(client.test_y))
            per_acc, weighted, unweighted = evaluate_accuracy(per_correct, per_total)
            report.per_client_acc = per_acc
            report.avg_acc = weighted
            report.unweighted_avg_acc = unweighted
        return report

    def run(self, on_round=None) -> list[RoundReport]:
        reports = []
        for t in range(1, self.exp.rounds + 1):
            report = self.round(t)
            reports.append(report)
            if on_round is not None:
                on_round(report)
        return reports


@dataclass
class ExperimentResult:
    per_repeat: list[list[RoundReport]]
    summary: dict


def run_experiment(exp: ExperimentSpec, dataset_factory, on_round=None) -> ExperimentResult:
    """Run `repeats` full runs with seeds seed, seed+1, ...

    ``dataset_factory(run_seed)`` supplies the dataset for each repeat;
    ``on_round(repeat_idx, report)`` streams per-round results.
    """
    per_repeat = []
    for j in range(exp.repeats):
        run_seed = exp.seed + j
        dataset = dataset_factory(run_seed)
        part, dataset = run_scenario(dataset, exp.scenario, run_seed)
        run = FederatedRun(exp, dataset, part, run_seed)
        callback = (lambda rep, _j=j: on_round(_j, rep)) if on_round else None
        per_repeat.append(run.run(callback))
    return ExperimentResult(per_repeat=per_repeat, summary=summarize_run(per_repeat))


__all__ = [
    "ExperimentSpec", "ClientState", "FederatedRun", "ExperimentResult",
    "run_experiment", "sample_participants", "MethodInapplicableError",
]
