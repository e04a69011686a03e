"""Dense complex linear algebra over labeled tensor-product spaces.

States and maps carry the layout they live on (see ``registers``); every
operation here checks layouts rather than raw dimensions, so a map built for
(R, F) can never silently act on (S, F).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .registers import SpaceLayout

TOL = 1e-12


class LayoutError(ValueError):
    """Register or dimension mismatch between layouts."""


def _frozen(a, dtype=complex) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    layout: "SpaceLayout"
    amps: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amps).reshape(-1)
        if amps.shape[0] != self.layout.size:
            raise LayoutError(
                f"{amps.shape[0]} amplitudes for layout of size {self.layout.size}"
            )
        if not np.all(np.isfinite(amps)):
            raise ValueError("non-finite amplitude")
        object.__setattr__(self, "amps", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.layout, self.amps / n)

    def tensor(self) -> np.ndarray:
        """Amplitudes reshaped to one axis per register."""
        return self.amps.reshape(self.layout.dims)

    def __repr__(self):
        return f"StateVector({self.layout.names}, norm={self.norm():.6g})"


@dataclass(frozen=True, eq=False)
class LinearMap:
    in_layout: "SpaceLayout"
    out_layout: "SpaceLayout"
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        want = (self.out_layout.size, self.in_layout.size)
        if m.shape != want:
            raise LayoutError(f"matrix shape {m.shape}, layouts require {want}")
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite matrix entry")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other: "LinearMap") -> "LinearMap":
        if other.out_layout != self.in_layout:
            raise LayoutError("cannot compose maps with mismatched layouts")
        return LinearMap(other.in_layout, self.out_layout, self.matrix @ other.matrix)

    def dagger(self) -> "LinearMap":
        return LinearMap(self.out_layout, self.in_layout, self.matrix.conj().T)


def identity(lay: "SpaceLayout") -> LinearMap:
    return LinearMap(lay, lay, np.eye(lay.size, dtype=complex))


def tensor(a: StateVector, b: StateVector) -> StateVector:
    clash = set(a.layout.names) & set(b.layout.names)
    if clash:
        raise LayoutError(f"duplicate register name(s) {sorted(clash)}")
    return StateVector(a.layout.concat(b.layout), np.kron(a.amps, b.amps))


def apply(m: LinearMap, s: StateVector) -> StateVector:
    if m.in_layout != s.layout:
        raise LayoutError(
            f"map expects {m.in_layout.names}, state is on {s.layout.names}"
        )
    return StateVector(m.out_layout, m.matrix @ s.amps)


def inner(a: StateVector, b: StateVector) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    if a.layout != b.layout:
        raise LayoutError("inner product of states on different layouts")
    return complex(np.vdot(a.amps, b.amps))


def expectation(m: LinearMap, s: StateVector) -> complex:
    return inner(s, apply(m, s))


def check_orthonormal(vs: Sequence[StateVector], tol: float = TOL) -> None:
    if not vs:
        raise ValueError("empty vector family")
    lay = vs[0].layout
    if any(v.layout != lay for v in vs):
        raise LayoutError("vectors live on different layouts")
    gram = np.array([[inner(u, v) for v in vs] for u in vs])
    dev = np.abs(gram - np.eye(len(vs)))
    if dev.max() > tol:
        i, j = np.unravel_index(np.argmax(dev), dev.shape)
        raise ValueError(
            f"vectors not orthonormal: <v{i}|v{j}> = {gram[i, j]:.6g} (tolerance {tol:g})"
        )


def projector(vs: Sequence[StateVector], tol: float = TOL) -> LinearMap:
    """Orthogonal projector onto the span of an orthonormal family."""
    check_orthonormal(vs, tol)
    cols = np.stack([v.amps for v in vs], axis=1)
    lay = vs[0].layout
    return LinearMap(lay, lay, cols @ cols.conj().T)


def embed(m: LinearMap, targets: Sequence[str], full: "SpaceLayout") -> LinearMap:
    """Lift a map on ``targets`` to ``full``, acting as identity elsewhere.

    The map must be square on the target registers (same names in and out);
    ``targets`` gives the order of its tensor factors and may differ from the
    order those registers take in ``full``.
    """
    targets = tuple(targets)
    if len(set(targets)) != len(targets):
        raise LayoutError(f"repeated target in {targets}")
    if m.in_layout.names != targets or m.out_layout.names != targets:
        raise LayoutError(
            f"map is defined on {m.in_layout.names}, not on targets {targets}"
        )
    sub = full.sub(targets)  # raises on unknown register
    if sub != m.in_layout:
        raise LayoutError("target registers differ from the map's registers")
    rest = [n for n in full.names if n not in targets]
    rest_size = int(np.prod([full.register(n).dim for n in rest], dtype=np.int64))
    big = np.kron(m.matrix, np.eye(rest_size, dtype=complex))
    # axes of big are ordered (targets..., rest...); permute into full order
    order = list(targets) + rest
    dims = [full.register(n).dim for n in order]
    perm = [order.index(n) for n in full.names]
    k = len(order)
    t = big.reshape(dims + dims).transpose(perm + [p + k for p in perm])
    return LinearMap(full, full, t.reshape(full.size, full.size))


def is_isometry(m: LinearMap, tol: float = TOL) -> bool:
    gram = m.matrix.conj().T @ m.matrix
    return bool(np.abs(gram - np.eye(gram.shape[0])).max() <= tol)


def is_projector(m: LinearMap, tol: float = TOL) -> bool:
    p = m.matrix
    return bool(
        np.abs(p - p.conj().T).max() <= tol and np.abs(p @ p - p).max() <= tol
    )
