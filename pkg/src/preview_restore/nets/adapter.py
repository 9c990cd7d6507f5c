"""Low-rank weight adapters for the attention projections."""

import contextlib
import math
from typing import List

import numpy as np

from preview_restore.errors import AdapterError
from preview_restore.tensor import Rng, Tensor
from .attention import Attention
from .layers import Linear
from .module import Module, Parameter


class LowRankAdapter(Module):
    """
    Rank-``r`` delta ``scale * A @ B`` for a ``(d_in, d_out)`` weight.

    ``A`` starts random and ``B`` at zero, so a fresh adapter leaves outputs unchanged.
    """

    def __init__(self, in_features: int, out_features: int, rank: int, scale: float, rng: Rng):
        self.rank, self.scale = rank, float(scale)
        self.A = Parameter(rng.normal((in_features, rank)) / math.sqrt(in_features))
        self.B = Parameter(np.zeros((rank, out_features)))
        self.enabled = False

    def forward(self, x: Tensor) -> Tensor:
        delta = (x @ self.A) @ self.B
        return delta if self.scale == 1.0 else delta * self.scale

    def delta(self) -> np.ndarray:
        return self.scale * (self.A.data @ self.B.data)


def adapted_linears(net: Module) -> List[Linear]:
    """Every attention projection of ``net``."""
    linears = []
    for module in net.modules():
        if isinstance(module, Attention):
            linears.extend([module.to_q, module.to_k, module.to_v, module.to_out])
    return linears


def attach_adapters(net: Module, rank: int, scale: float, rng: Rng) -> List[LowRankAdapter]:
    """Attach a disabled adapter to every attention projection that has none."""
    adapters = []
    for index, linear in enumerate(adapted_linears(net)):
        if linear.adapter is None:
            linear.adapter = LowRankAdapter(linear.in_features, linear.out_features, rank, scale, rng.fork(index))
        adapters.append(linear.adapter)
    if not adapters:
        raise AdapterError("No attention projections to adapt")
    return adapters


def detach_adapters(net: Module):
    for linear in adapted_linears(net):
        linear.adapter = None


def adapters_of(net: Module) -> List[LowRankAdapter]:
    return [linear.adapter for linear in adapted_linears(net) if linear.adapter is not None]


def adapter_parameters(net: Module) -> List[Parameter]:
    return [param for adapter in adapters_of(net) for param in adapter.parameters()]


def adapter_toggle(net: Module, enabled: bool):
    """
    Switch every attached adapter on or off.

    Raises:
        AdapterError: ``net`` has no adapter attached.
    """
    adapters = adapters_of(net)
    if not adapters:
        raise AdapterError("adapter_toggle: no adapter attached")
    for adapter in adapters:
        adapter.enabled = bool(enabled)


def adapters_enabled(net: Module) -> bool:
    adapters = adapters_of(net)
    return bool(adapters) and all(adapter.enabled for adapter in adapters)


@contextlib.contextmanager
def adapter_scope(net: Module, enabled: bool):
    """Toggle adapters for the block and restore their previous states afterwards."""
    adapters = adapters_of(net)
    if not adapters:
        if enabled:
            raise AdapterError("adapter_scope: no adapter attached")
        yield
        return
    previous = [adapter.enabled for adapter in adapters]
    adapter_toggle(net, enabled)
    try:
        yield
    finally:
        for adapter, state in zip(adapters, previous):
            adapter.enabled = state
