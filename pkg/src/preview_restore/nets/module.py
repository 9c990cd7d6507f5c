"""Parameter containers shared by every network."""

import hashlib
from collections import OrderedDict
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from preview_restore.errors import CheckpointError
from preview_restore.tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """
    Base class for network blocks.

    Parameters and sub-modules are discovered from instance attributes, including
    lists of modules; names are dotted attribute paths (``levels.0.conv1.weight``).
    """

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, value in vars(self).items():
            child = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Module):
                yield from value.named_modules(child)
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{child}.{index}")

    def modules(self) -> List["Module"]:
        return [module for _, module in self.named_modules()]

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for module_name, module in self.named_modules(prefix):
            for name, value in vars(module).items():
                if isinstance(value, Parameter):
                    yield (f"{module_name}.{name}" if module_name else name), value

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def trainable_parameters(self) -> List[Parameter]:
        return [param for param in self.parameters() if param.requires_grad]

    def parameter_count(self) -> int:
        return int(sum(param.data.size for param in self.parameters()))

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def freeze(self):
        """Stop gradient accumulation into every parameter of this module."""
        for param in self.parameters():
            param.requires_grad = False
            param.grad = None
        return self

    def unfreeze(self):
        for param in self.parameters():
            param.requires_grad = True
        return self

    def state_dict(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, param.data.copy()) for name, param in self.named_parameters(prefix))

    def load_state_dict(self, state: Mapping[str, np.ndarray], prefix: str = "", strict: bool = True):
        """
        Copy arrays into the parameters by name, keeping each parameter's dtype.

        Raises:
            CheckpointError: Missing or unexpected names (strict mode) or shape mismatch.
        """
        own: Dict[str, Parameter] = dict(self.named_parameters(prefix))
        missing = [name for name in own if name not in state]
        if strict:
            unexpected = [name for name in state if name.startswith(prefix) and name not in own]
            if missing or unexpected:
                raise CheckpointError(f"State mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, param in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise CheckpointError(f"Parameter '{name}' has shape {param.shape}, checkpoint holds {value.shape}")
            param.data = value.astype(param.dtype, copy=True)

    def parameter_digest(self, include: Optional[Callable[[str], bool]] = None) -> str:
        """SHA-256 over parameter names, shapes and float32 bytes (optionally only names passing ``include``)."""
        digest = hashlib.sha256()
        for name, param in self.named_parameters():
            if include is not None and not include(name):
                continue
            digest.update(name.encode("utf-8"))
            digest.update(str(param.shape).encode("ascii"))
            digest.update(np.ascontiguousarray(param.data, dtype="<f4").tobytes())
        return digest.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError
