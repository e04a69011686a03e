"""Named registers, product layouts, and constructors for states over them.

Tensor order is always the order in which registers were added to a layout;
the first register is the most significant index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import qcore
from .qcore import LayoutError, StateVector

NORMALIZE_TOL = 1e-6


@dataclass(frozen=True)
class Register:
    name: str
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.name:
            raise LayoutError("register name must be non-empty")
        if len(self.labels) < 1:
            raise LayoutError(f"register {self.name!r} needs at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise LayoutError(f"register {self.name!r} has duplicate labels")

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(
                f"unknown label {label!r} for register {self.name!r}"
            ) from None


@dataclass(frozen=True)
class SpaceLayout:
    registers: tuple[Register, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "registers", tuple(self.registers))
        names = [r.name for r in self.registers]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate register names in {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.registers)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def position(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LayoutError(f"unknown register {name!r}") from None

    def register(self, name: str) -> Register:
        return self.registers[self.position(name)]

    def concat(self, other: "SpaceLayout") -> "SpaceLayout":
        return SpaceLayout(self.registers + other.registers)

    def sub(self, names: Iterable[str]) -> "SpaceLayout":
        """Layout of the named registers, in the order given."""
        return SpaceLayout(tuple(self.register(n) for n in names))

    def index_of(self, assignment: Mapping[str, str]) -> int:
        missing = set(self.names) - set(assignment)
        extra = set(assignment) - set(self.names)
        if extra:
            raise LayoutError(f"unknown register(s) {sorted(extra)}")
        if missing:
            raise LayoutError(f"assignment misses register(s) {sorted(missing)}")
        idx = 0
        for reg in self.registers:
            idx = idx * reg.dim + reg.index(assignment[reg.name])
        return idx

    def assignment_of(self, index: int) -> dict[str, str]:
        if not 0 <= index < self.size:
            raise LayoutError(f"index {index} out of range for size {self.size}")
        out = {}
        for reg in reversed(self.registers):
            index, k = divmod(index, reg.dim)
            out[reg.name] = reg.labels[k]
        return {n: out[n] for n in self.names}

    def describe(self) -> str:
        return " (x) ".join(f"{r.name}[{','.join(r.labels)}]" for r in self.registers)


def layout(*registers: Register) -> SpaceLayout:
    return SpaceLayout(tuple(registers))


def basis_state(lay: SpaceLayout, assignment: Mapping[str, str]) -> StateVector:
    amps = np.zeros(lay.size, dtype=complex)
    amps[lay.index_of(assignment)] = 1.0
    return StateVector(lay, amps)


def superpose(
    lay: SpaceLayout, terms: Sequence[tuple[object, Mapping[str, str]]]
) -> StateVector:
    """Weighted sum of basis states.

    Amplitudes may be numbers or anything exposing ``value()`` (parsed
    amplitude expressions). The result must already be normalized to within
    ``NORMALIZE_TOL``; it is then renormalized exactly. Anything further off
    is treated as a user error rather than silently fixed.
    """
    if not terms:
        raise ValueError("superpose needs at least one term")
    amps = np.zeros(lay.size, dtype=complex)
    for amp, assignment in terms:
        value = amp.value() if hasattr(amp, "value") else amp
        amps[lay.index_of(assignment)] += complex(value)
    norm = np.linalg.norm(amps)
    if norm == 0.0:
        raise ValueError("superposition is the zero vector")
    if abs(norm - 1.0) > NORMALIZE_TOL:
        raise ValueError(f"superposition has norm {norm:.12g}, expected 1")
    # leave machine-precision deviations alone so exact inputs survive a
    # serialize/parse round trip bit for bit
    if abs(norm - 1.0) > 1e-14:
        amps = amps / norm
    return StateVector(lay, amps)


def extend(
    lay: SpaceLayout, state: StateVector, reg: Register, initial: str
) -> tuple[SpaceLayout, StateVector]:
    """Append a fresh register prepared in one of its basis labels."""
    if state.layout != lay:
        raise LayoutError("state does not live on the given layout")
    if reg.name in lay:
        raise LayoutError(f"register {reg.name!r} already present")
    fresh = basis_state(SpaceLayout((reg,)), {reg.name: initial})
    out = qcore.tensor(state, fresh)
    return out.layout, out
