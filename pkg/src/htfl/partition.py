"""Client data partitioning scenarios.

Four scenarios: pathological label skew (few classes per client),
Dirichlet label skew, feature shift (IID labels, per-domain transform),
and real-world grouping by a subject column. Every partitioner assigns
each sample to exactly one client and then splits each client's pool
3:1 into train/test uniformly at random.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .errors import PartitionError

DIRICHLET_REDRAWS = 100
MIN_CLASS_SAMPLES = 2  # every client must end up with >= 2 samples of some class


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str  # pathological | dirichlet | feature_shift | real_world
    n_clients: int
    alpha: float = 0.1
    classes_per_client: int = 2
    shift_domains: int = 1

    def __post_init__(self):
        kinds = ("pathological", "dirichlet", "feature_shift", "real_world")
        if self.kind not in kinds:
            raise PartitionError(f"unknown scenario '{self.kind}', expected one of {kinds}")
        if self.n_clients < 1:
            raise PartitionError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.kind == "dirichlet" and not (self.alpha > 0):
            raise PartitionError(f"alpha must be positive, got {self.alpha}")
        if self.kind == "pathological" and self.classes_per_client < 1:
            raise PartitionError("classes_per_client must be >= 1")
        if self.kind == "feature_shift" and self.shift_domains < 1:
            raise PartitionError("shift_domains must be >= 1")


@dataclass
class PartitionResult:
    client_train: list[np.ndarray]
    client_test: list[np.ndarray]
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def n_clients(self) -> int:
        return len(self.client_train)

    def client_size(self, i: int) -> int:
        return len(self.client_train[i]) + len(self.client_test[i])


def _split_train_test(indices: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """3:1 split, sizes exact up to rounding, both sides non-empty."""
    n = len(indices)
    if n < 2:
        raise PartitionError(f"client received {n} samples; need >= 2 for a train/test split")
    n_train = int(round(0.75 * n))
    n_train = min(max(n_train, 1), n - 1)
    perm = rng.permutation(indices)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _finalize(assign: list[np.ndarray], seed: int, params: dict) -> PartitionResult:
    rng = np.random.default_rng([seed, 0xA11])
    train, test = [], []
    for i, idx in enumerate(assign):
        if len(idx) < 2:
            raise PartitionError(
                f"client {i} received {len(idx)} samples; scenario infeasible for this data"
            )
        tr, te = _split_train_test(np.asarray(idx, dtype=np.int64), rng)
        train.append(tr)
        test.append(te)
    return PartitionResult(client_train=train, client_test=test, seed=seed, params=params)


def _class_indices(ds: Dataset) -> list[np.ndarray]:
    return [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]


def partition_pathological(ds: Dataset, spec: ScenarioSpec, seed: int) -> PartitionResult:
    """Each client holds exactly ``classes_per_client`` labels.

    Label sets are dealt round-robin over a seeded shuffle of the classes,
    and each class's samples are split evenly (+-1) among its holders.
    """
    n, cpc, num_c = spec.n_clients, spec.classes_per_client, ds.num_classes
    if cpc > num_c:
        raise PartitionError(f"classes_per_client={cpc} exceeds {num_c} classes")
    if n * cpc < num_c:
        raise PartitionError(f"{n} clients x {cpc} classes cannot cover {num_c} classes")
    rng = np.random.default_rng([seed, 0xBA])
    shuffled = rng.permutation(num_c)
    holders: dict[int, list[int]] = {c: [] for c in range(num_c)}
    slot = 0
    for i in range(n):
        for _ in range(cpc):
            holders[int(shuffled[slot % num_c])].append(i)
            slot += 1
    assign: list[list[int]] = [[] for _ in range(n)]
    for c in range(num_c):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        for owner, chunk in zip(holders[c], np.array_split(idx, len(holders[c]))):
            assign[owner].extend(chunk.tolist())
    return _finalize(
        [np.array(sorted(a), dtype=np.int64) for a in assign],
        seed,
        {"kind": spec.kind, "classes_per_client": cpc},
    )


def _largest_remainder(quota: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` in proportion to `quota` (sums to 1)."""
    raw = quota * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = raw - counts
        order = np.lexsort((np.arange(len(quota)), -frac))  # ties go to lower index
        counts[order[:short]] += 1
    return counts


def _draw_dirichlet_counts(
    ds: Dataset, n: int, alpha: float, rng: np.random.Generator
) -> np.ndarray:
    counts = np.zeros((ds.num_classes, n), dtype=np.int64)
    for c, idx in enumerate(_class_indices(ds)):
        if len(idx) == 0:
            continue
        q = rng.dirichlet(np.repeat(alpha, n))
        counts[c] = _largest_remainder(q, len(idx))
    return counts


def partition_dirichlet(ds: Dataset, spec: ScenarioSpec, seed: int) -> PartitionResult:
    """Per-class Dirichlet(alpha) allocation over clients.

    Redraws the whole allocation up to DIRICHLET_REDRAWS times until every
    client holds >= 2 samples of at least one class, then falls back to
    moving samples from the largest client.
    """
    n = spec.n_clients
    rng = np.random.default_rng([seed, 0xD1])
    counts = None
    for _ in range(DIRICHLET_REDRAWS):
        cand = _draw_dirichlet_counts(ds, n, spec.alpha, rng)
        if (cand.max(axis=0) >= MIN_CLASS_SAMPLES).all():
            counts = cand
            break
    if counts is None:
        counts = _rebalance(cand)
    assign: list[list[int]] = [[] for _ in range(n)]
    for c, idx in enumerate(_class_indices(ds)):
        if len(idx) == 0:
            continue
        perm = rng.permutation(idx)
        offsets = np.concatenate([[0], np.cumsum(counts[c])])
        for i in range(n):
            assign[i].extend(perm[offsets[i] : offsets[i + 1]].tolist())
    return _finalize(
        [np.array(sorted(a), dtype=np.int64) for a in assign],
        seed,
        {"kind": spec.kind, "alpha": spec.alpha},
    )


def _rebalance(counts: np.ndarray) -> np.ndarray:
    """Move samples from the largest client until every client has a class with >= 2."""
    counts = counts.copy()
    while True:
        deficient = np.flatnonzero(counts.max(axis=0) < MIN_CLASS_SAMPLES)
        if len(deficient) == 0:
            return counts
        target = int(deficient[0])
        sizes = counts.sum(axis=0)
        donor = int(np.argmax(sizes))
        if donor == target or sizes[donor] <= MIN_CLASS_SAMPLES:
            raise PartitionError("cannot rebalance: not enough samples to cover every client")
        cls = int(np.argmax(counts[:, donor]))
        if counts[cls, donor] == 0:
            raise PartitionError("cannot rebalance: donor client has no samples")
        counts[cls, donor] -= 1
        counts[cls, target] += 1


def _even_class_split(ds: Dataset, n: int, rng: np.random.Generator) -> list[list[int]]:
    """Deal every class round-robin so all label histograms match within +-1."""
    assign: list[list[int]] = [[] for _ in range(n)]
    for idx in _class_indices(ds):
        perm = rng.permutation(idx)
        for i in range(n):
            assign[i].extend(perm[i::n].tolist())
    return assign


def feature_shift_transform(dims: int, domain: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(rotation, per-feature scale) for one domain.

    The rotation is shared by all domains; domain 0 keeps unit scale as the
    reference, other domains draw log-uniform scales in [0.5, 2].
    """
    base = np.random.default_rng([seed, 0xF5])
    q, r = np.linalg.qr(base.standard_normal((dims, dims)))
    q = q * np.sign(np.diag(r))[None, :]  # fix reflection ambiguity
    if domain == 0:
        scales = np.ones(dims)
    else:
        drng = np.random.default_rng([seed, 0xF5, domain])
        scales = np.exp(drng.uniform(np.log(0.5), np.log(2.0), size=dims))
    return q, scales


def partition_feature_shift(ds: Dataset, spec: ScenarioSpec, seed: int) -> PartitionResult:
    """IID label split; client i belongs to domain i mod shift_domains.

    The result records the transform seed; ``materialize`` applies the
    domain transform (shared rotation then per-domain scale) to each
    client's feature rows.
    """
    rng = np.random.default_rng([seed, 0xFE])
    assign = _even_class_split(ds, spec.n_clients, rng)
    return _finalize(
        [np.array(sorted(a), dtype=np.int64) for a in assign],
        seed,
        {"kind": spec.kind, "shift_domains": spec.shift_domains, "transform_seed": seed},
    )


def partition_real_world(ds: Dataset, spec: ScenarioSpec, seed: int) -> PartitionResult:
    """One client per group id; extra groups are merged round-robin."""
    if ds.group_ids is None:
        raise PartitionError("real_world scenario requires a dataset with group ids")
    groups = np.unique(ds.group_ids)
    if len(groups) < spec.n_clients:
        raise PartitionError(
            f"{len(groups)} groups cannot fill {spec.n_clients} clients; "
            f"set n_clients to {len(groups)}"
        )
    assign: list[list[int]] = [[] for _ in range(spec.n_clients)]
    for pos, g in enumerate(np.sort(groups)):
        assign[pos % spec.n_clients].extend(np.flatnonzero(ds.group_ids == g).tolist())
    return _finalize(
        [np.array(sorted(a), dtype=np.int64) for a in assign],
        seed,
        {"kind": spec.kind, "n_groups": int(len(groups))},
    )


_PARTITIONERS = {
    "pathological": partition_pathological,
    "dirichlet": partition_dirichlet,
    "feature_shift": partition_feature_shift,
    "real_world": partition_real_world,
}


def run_scenario(ds: Dataset, spec: ScenarioSpec, seed: int) -> tuple[PartitionResult, Dataset]:
    """Partition and, for feature_shift, return the transformed dataset."""
    result = _PARTITIONERS[spec.kind](ds, spec, seed)
    return result, materialize(ds, result, spec)


def materialize(ds: Dataset, result: PartitionResult, spec: ScenarioSpec) -> Dataset:
    if spec.kind != "feature_shift":
        return ds
    flat = ds.features.reshape(ds.n_samples, -1).astype(np.float64)
    out = flat.copy()
    dims = flat.shape[1]
    tseed = result.params["transform_seed"]
    for i in range(result.n_clients):
        domain = i % spec.shift_domains
        rot, scales = feature_shift_transform(dims, domain, tseed)
        rows = np.concatenate([result.client_train[i], result.client_test[i]])
        out[rows] = (flat[rows] @ rot.T) * scales[None, :]
    return Dataset(
        features=out.reshape(ds.features.shape),
        labels=ds.labels.copy(),
        num_classes=ds.num_classes,
        group_ids=None if ds.group_ids is None else ds.group_ids.copy(),
        meta={**ds.meta, "feature_shift_domains": spec.shift_domains},
    )
