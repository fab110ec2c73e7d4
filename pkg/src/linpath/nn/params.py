"""Flat parameter vectors and their shape manifests.

Every network state is a single 1-D array plus a manifest describing how the
array decomposes into named tensors. The manifest order is the canonical
spec order, so flatten/unflatten is a bijection and two states built from
the same ModelSpec always align element-for-element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from linpath.errors import ShapeMismatchError

ROLE_WEIGHT = "weight"
ROLE_BIAS = "bias"
ROLE_BN_GAIN = "bn-gain"
ROLE_BN_SHIFT = "bn-shift"
ROLE_BN_MEAN = "bn-running-mean"
ROLE_BN_VAR = "bn-running-var"

ROLES = (ROLE_WEIGHT, ROLE_BIAS, ROLE_BN_GAIN, ROLE_BN_SHIFT, ROLE_BN_MEAN, ROLE_BN_VAR)

# Roles subject to weight decay; BN parameters and running statistics never are.
DECAYED_ROLES = frozenset((ROLE_WEIGHT, ROLE_BIAS))
# Roles holding running statistics, overwritten by the training forward pass
# rather than updated by gradients.
STATISTIC_ROLES = frozenset((ROLE_BN_MEAN, ROLE_BN_VAR))


@dataclass(frozen=True)
class TensorSlot:
    name: str
    shape: tuple[int, ...]
    offset: int
    role: str

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def end(self) -> int:
        return self.offset + self.size


class Manifest:
    """Ordered, contiguous layout of named tensors inside a flat vector."""

    def __init__(self, slots):
        self.slots: tuple[TensorSlot, ...] = tuple(slots)
        offset = 0
        by_name = {}
        for slot in self.slots:
            if slot.offset != offset:
                raise ShapeMismatchError(
                    f"slot {slot.name!r} at offset {slot.offset}, expected {offset}")
            if slot.role not in ROLES:
                raise ShapeMismatchError(f"slot {slot.name!r} has unknown role {slot.role!r}")
            if slot.name in by_name:
                raise ShapeMismatchError(f"duplicate tensor name {slot.name!r}")
            by_name[slot.name] = slot
            offset = slot.end
        self.total_size = offset
        self._by_name = by_name

    def __iter__(self):
        return iter(self.slots)

    def __len__(self):
        return len(self.slots)

    def __getitem__(self, name: str) -> TensorSlot:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __eq__(self, other):
        return isinstance(other, Manifest) and self.slots == other.slots

    def __hash__(self):
        return hash(self.slots)

    def names(self):
        return [slot.name for slot in self.slots]

    @staticmethod
    def from_named(slots_spec) -> "Manifest":
        """Build from an ordered (name, shape, role) sequence, assigning offsets."""
        out = []
        offset = 0
        for name, shape, role in slots_spec:
            slot = TensorSlot(name=name, shape=tuple(int(d) for d in shape),
                              offset=offset, role=role)
            out.append(slot)
            offset = slot.end
        return Manifest(out)


@dataclass
class ParamVector:
    """A complete flattened network state: one array, one manifest."""

    values: np.ndarray
    manifest: Manifest

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1:
            raise ShapeMismatchError(f"parameter array must be 1-D, got shape {self.values.shape}")
        if self.values.size != self.manifest.total_size:
            raise ShapeMismatchError(
                f"array length {self.values.size} != manifest size {self.manifest.total_size}")

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def view(self, name: str) -> np.ndarray:
        """Reshaped view of one named tensor; writes through to the flat array."""
        slot = self.manifest[name]
        return self.values[slot.offset:slot.end].reshape(slot.shape)

    def tensors(self) -> dict[str, np.ndarray]:
        return {slot.name: self.view(slot.name) for slot in self.manifest}

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.manifest)

    def role_mask(self, roles) -> np.ndarray:
        """Boolean mask over the flat array selecting slots with the given roles."""
        mask = np.zeros(self.size, dtype=bool)
        for slot in self.manifest:
            if slot.role in roles:
                mask[slot.offset:slot.end] = True
        return mask

    def same_layout(self, other: "ParamVector") -> bool:
        return self.manifest == other.manifest and self.dtype == other.dtype


def flatten(named: dict[str, np.ndarray], manifest: Manifest, dtype=None) -> ParamVector:
    """Pack named tensors into a flat vector in manifest order."""
    missing = [s.name for s in manifest if s.name not in named]
    if missing:
        raise ShapeMismatchError(f"missing tensors: {missing}")
    extra = [n for n in named if n not in manifest]
    if extra:
        raise ShapeMismatchError(f"unexpected tensors: {extra}")
    first = next(iter(named.values()))
    dtype = np.dtype(dtype) if dtype is not None else first.dtype
    flat = np.empty(manifest.total_size, dtype=dtype)
    for slot in manifest:
        arr = np.asarray(named[slot.name])
        if arr.shape != slot.shape:
            raise ShapeMismatchError(
                f"tensor {slot.name!r} has shape {arr.shape}, manifest says {slot.shape}")
        flat[slot.offset:slot.end] = arr.reshape(-1)
    return ParamVector(flat, manifest)


def unflatten(theta: ParamVector) -> dict[str, np.ndarray]:
    """Inverse of flatten; returns views into the flat array."""
    return theta.tensors()


def zeros_like(theta: ParamVector) -> ParamVector:
    return ParamVector(np.zeros(theta.size, dtype=theta.dtype), theta.manifest)
