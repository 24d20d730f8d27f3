"""Method registry."""

from ..errors import ConfigError
from .base import (
    BATCH_SIZE,
    ClassMapPacket,
    GlobalClassMap,
    GlobalSvd,
    GlobalTensors,
    GlobalWithGenerator,
    LocalOnly,
    LocalStats,
    Method,
    MethodConfig,
    MethodContext,
    SvdPacket,
    TensorPacket,
    aggregate_weighted,
    byte_size,
    iterate_batches,
)
from .distill import FedKd, FedMrl, Fml
from .heads import FedGen, FedGh, LgFedAvg
from .protos import Fd, FedProto, FedTgp

REGISTRY: dict[str, type[Method]] = {
    cls.name: cls
    for cls in (LocalOnly, LgFedAvg, FedGen, FedGh, Fml, FedKd, FedMrl, Fd, FedProto, FedTgp)
}

METHOD_NAMES = tuple(sorted(REGISTRY))


def make_method(name: str, ctx: MethodContext) -> Method:
    if name not in REGISTRY:
        raise ConfigError(f"unknown method '{name}'; known: {list(METHOD_NAMES)}")
    return REGISTRY[name](ctx)
