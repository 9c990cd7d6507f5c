"""SGD and AdamW over lists of parameter tensors."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from preview_restore.errors import OptimizerStateError
from preview_restore.tensor.tensor import Tensor


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0


def _check_slots(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: Sequence[dict]):
    if len(params) != len(state):
        raise OptimizerStateError(f"optimizer: {len(state)} state slots for {len(params)} parameters")
    if len(params) != len(grads):
        raise OptimizerStateError(f"optimizer: {len(grads)} gradients for {len(params)} parameters")


def sgd_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: Sequence[dict],
             config: OptimizerConfig):
    """In-place ``p -= lr * (g + wd * p)``."""
    _check_slots(params, grads, state)
    for param, grad in zip(params, grads):
        if grad is None:
            continue
        update = grad + config.weight_decay * param.data
        param.data -= (config.lr * update).astype(param.data.dtype)


def adamw_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: Sequence[dict],
               config: OptimizerConfig):
    """In-place AdamW update with bias correction and decoupled weight decay."""
    _check_slots(params, grads, state)
    beta1, beta2 = config.betas
    for param, grad, slot in zip(params, grads, state):
        if grad is None:
            continue
        slot["step"] += 1
        slot["m"] = beta1 * slot["m"] + (1.0 - beta1) * grad
        slot["v"] = beta2 * slot["v"] + (1.0 - beta2) * grad * grad
        m_hat = slot["m"] / (1.0 - beta1 ** slot["step"])
        v_hat = slot["v"] / (1.0 - beta2 ** slot["step"])
        if config.weight_decay:
            param.data -= (config.lr * config.weight_decay * param.data).astype(param.data.dtype)
        param.data -= (config.lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(param.data.dtype)


class _Optimizer:
    def __init__(self, params: Sequence[Tensor], config: OptimizerConfig):
        self.params: List[Tensor] = list(params)
        self.config = config
        self.state: List[dict] = [self._new_slot(p) for p in self.params]

    @staticmethod
    def _new_slot(param: Tensor) -> dict:
        return {"step": 0}

    def zero_grad(self):
        for param in self.params:
            param.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Flat ``{"<index>/<field>": array}`` view for checkpointing."""
        flat = {}
        for index, slot in enumerate(self.state):
            for field, value in slot.items():
                flat[f"{index}/{field}"] = np.asarray(value, dtype=np.float32)
        return flat

    def load_state_dict(self, flat: Dict[str, np.ndarray]):
        for index, slot in enumerate(self.state):
            for field in list(slot):
                key = f"{index}/{field}"
                if key not in flat:
                    raise OptimizerStateError(f"optimizer: missing state entry '{key}'")
                value = flat[key]
                if field == "step":
                    slot[field] = int(value.reshape(-1)[0])
                else:
                    slot[field] = np.array(value, dtype=slot[field].dtype)


class SGD(_Optimizer):
    def step(self):
        sgd_step(self.params, [p.grad for p in self.params], self.state, self.config)


class AdamW(_Optimizer):
    @staticmethod
    def _new_slot(param: Tensor) -> dict:
        return {"step": 0, "m": np.zeros_like(param.data), "v": np.zeros_like(param.data)}

    def step(self):
        adamw_step(self.params, [p.grad for p in self.params], self.state, self.config)
