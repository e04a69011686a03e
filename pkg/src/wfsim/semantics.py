"""Collapse and relative-state measurement calculi.

Collapse semantics: Born weights from projectors, then the state is replaced
by its normalized projection (conditionalization on the recorded outcome).

Relative-state semantics: a measurement is an isometry that copies the
outcome label into a fresh memory register; probabilities are read off memory
projectors on the uncollapsed global state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import null_space

from . import qcore
from .qcore import TOL, LayoutError, LinearMap, StateVector
from .registers import Register, SpaceLayout, basis_state, extend

NORM_TOL = 1e-10
DIST_TOL = 1e-10
# orthonormality/completeness of declared outcome families
BASIS_TOL = 1e-10


class ZeroProbabilityError(ValueError):
    """Conditioning on an event of probability <= TOL."""


@dataclass(frozen=True, eq=False)
class Measurement:
    """Projective measurement of ``targets`` by ``agent``.

    ``outcomes`` pairs each label with an orthonormal list of vectors on the
    target registers; a list longer than one is a degenerate outcome.
    """

    agent: str
    targets: SpaceLayout
    outcomes: tuple[tuple[str, tuple[StateVector, ...]], ...]
    _projectors: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        outs = tuple((lbl, tuple(vs)) for lbl, vs in self.outcomes)
        object.__setattr__(self, "outcomes", outs)
        labels = [lbl for lbl, _ in outs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate outcome labels in {labels}")
        vecs = [v for _, vs in outs for v in vs]
        if any(not vs for _, vs in outs):
            raise ValueError("every outcome needs at least one vector")
        if any(v.layout != self.targets for v in vecs):
            raise LayoutError("outcome vectors must live on the target layout")
        qcore.check_orthonormal(vecs, BASIS_TOL)
        if len(vecs) != self.targets.size:
            raise ValueError(
                f"outcomes span {len(vecs)} of {self.targets.size} dimensions "
                f"of {self.targets.names}; the family must be complete"
            )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _ in self.outcomes)

    @property
    def target_names(self) -> tuple[str, ...]:
        return self.targets.names

    def vectors(self, label: str) -> tuple[StateVector, ...]:
        for lbl, vs in self.outcomes:
            if lbl == label:
                return vs
        raise LayoutError(f"unknown outcome {label!r} for {self.agent}'s measurement")

    def local_projector(self, label: str) -> LinearMap:
        return qcore.projector(self.vectors(label))

    def projector_on(self, full: SpaceLayout, label: str) -> LinearMap:
        key = (full, label)
        if key not in self._projectors:
            self._projectors[key] = qcore.embed(
                self.local_projector(label), self.target_names, full
            )
        return self._projectors[key]

    @classmethod
    def computational(cls, agent: str, reg: Register) -> "Measurement":
        lay = SpaceLayout((reg,))
        return cls(
            agent,
            lay,
            tuple((lbl, (basis_state(lay, {reg.name: lbl}),)) for lbl in reg.labels),
        )

    @classmethod
    def from_columns(
        cls,
        agent: str,
        targets: SpaceLayout,
        labels: Sequence[str],
        unitary: np.ndarray,
    ) -> "Measurement":
        """One outcome per column of a unitary matrix on the target space."""
        return cls(
            agent,
            targets,
            tuple(
                (lbl, (StateVector(targets, unitary[:, k]),))
                for k, lbl in enumerate(labels)
            ),
        )


@dataclass(frozen=True)
class OutcomeDistribution:
    entries: Mapping[str, float]

    def __post_init__(self):
        for lbl, p in self.entries.items():
            if not -1e-12 <= p <= 1 + 1e-12:
                raise ValueError(f"probability {p!r} for {lbl!r} out of range")
        total = sum(self.entries.values())
        if abs(total - 1.0) > DIST_TOL:
            raise ValueError(f"distribution sums to {total!r}")

    def __getitem__(self, label: str) -> float:
        return self.entries[label]

    def __iter__(self):
        return iter(self.entries)

    def items(self):
        return self.entries.items()


@dataclass(frozen=True, eq=False)
class DilationRecord:
    measurement: Measurement
    memory: Register
    isometry: LinearMap

    @property
    def unitary(self) -> bool:
        return self.isometry.in_layout.size == self.isometry.out_layout.size


def _check_normalized(s: StateVector) -> None:
    n = s.norm()
    if abs(n - 1.0) > NORM_TOL:
        raise ValueError(f"state is not normalized (norm {n:.15g})")


def _real_prob(z: complex) -> float:
    if abs(z.imag) > TOL:
        raise ArithmeticError(f"probability has imaginary part {z.imag:g}")
    return z.real


def born_distribution(s: StateVector, m: Measurement) -> OutcomeDistribution:
    _check_normalized(s)
    for name in m.target_names:
        s.layout.position(name)
    return OutcomeDistribution(
        {
            lbl: _real_prob(qcore.expectation(m.projector_on(s.layout, lbl), s))
            for lbl in m.labels
        }
    )


def collapse(s: StateVector, m: Measurement, outcome: str) -> StateVector:
    """Project on ``outcome`` and renormalize; the projected phase is kept."""
    p = born_distribution(s, m)[outcome]
    if p <= TOL:
        raise ZeroProbabilityError(
            f"outcome {outcome!r} of {m.agent}'s measurement has probability {p:.3g}"
        )
    return qcore.apply(m.projector_on(s.layout, outcome), s).normalized()


def sequential_conditional(
    s: StateVector, m1: Measurement, a: str, m2: Measurement, b: str
) -> float:
    return born_distribution(collapse(s, m1, a), m2)[b]


def memory_register(m: Measurement, name: str | None = None, unitary=False) -> Register:
    name = name or m.agent
    labels = (("ready",) if unitary else ()) + m.labels
    return Register(name, labels)


def dilate(
    m: Measurement,
    lay: SpaceLayout,
    memory: str | None = None,
    unitary: bool = False,
) -> DilationRecord:
    """Isometry ``lay -> lay + memory`` with |a>|rest> -> |a>|rest>|A_a>.

    Degenerate outcomes copy only their label. With ``unitary=True`` the
    memory gains a leading ``ready`` label and the isometry is completed to a
    unitary on ``lay + memory`` that acts as the dilation on ``|ready>``.
    """
    reg = memory_register(m, memory, unitary)
    if reg.name in lay:
        raise LayoutError(f"memory register {reg.name!r} collides with the layout")
    out_lay = lay.concat(SpaceLayout((reg,)))
    k = reg.dim
    cols = np.zeros((lay.size * k, lay.size), dtype=complex)
    for lbl in m.labels:
        e = np.zeros((k, 1), dtype=complex)
        e[reg.index(lbl), 0] = 1.0
        cols += np.kron(m.projector_on(lay, lbl).matrix, e)
    if not unitary:
        return DilationRecord(m, reg, LinearMap(lay, out_lay, cols))

    # columns for |x>|ready> are fixed; fill the rest with an orthonormal
    # basis of the complement, which keeps the full matrix unitary
    full = np.zeros((out_lay.size, out_lay.size), dtype=complex)
    ready = reg.index("ready")
    fixed = [i * k + ready for i in range(lay.size)]
    full[:, fixed] = cols
    free = [j for j in range(out_lay.size) if j not in set(fixed)]
    full[:, free] = null_space(cols.conj().T)
    return DilationRecord(m, reg, LinearMap(out_lay, out_lay, full))


def apply_dilation(rec: DilationRecord, s: StateVector) -> StateVector:
    if rec.unitary:
        lay = rec.isometry.in_layout
        if s.layout != lay:
            _, s = extend(s.layout, s, rec.memory, "ready")
    return qcore.apply(rec.isometry, s)


def label_projector(lay: SpaceLayout, register: str, labels) -> LinearMap:
    """Projector on ``register`` being in any of ``labels``, embedded in ``lay``."""
    reg = lay.register(register)
    if isinstance(labels, str):
        labels = (labels,)
    diag = np.zeros(reg.dim, dtype=complex)
    for lbl in labels:
        diag[reg.index(lbl)] = 1.0
    local = LinearMap(SpaceLayout((reg,)), SpaceLayout((reg,)), np.diag(diag))
    return qcore.embed(local, (register,), lay)


def rs_outcome_probability(s_dilated: StateVector, memory, outcome: str) -> float:
    name = memory.name if isinstance(memory, Register) else memory
    _check_normalized(s_dilated)
    return _real_prob(
        qcore.expectation(label_projector(s_dilated.layout, name, outcome), s_dilated)
    )


def rs_joint(
    s_dilated: StateVector,
    assignments: Sequence[tuple[Sequence[str] | str, LinearMap | str]],
) -> float:
    """Expectation of a product of projectors on disjoint register sets.

    Each assignment is ``(targets, projector)`` with the projector on those
    registers, or ``(register, label)`` as shorthand for a basis projector.
    """
    _check_normalized(s_dilated)
    lay = s_dilated.layout
    seen: set[str] = set()
    total = qcore.identity(lay)
    for targets, proj in assignments:
        if isinstance(targets, str):
            targets = (targets,)
        targets = tuple(targets)
        if seen & set(targets):
            raise LayoutError(f"overlapping targets {sorted(seen & set(targets))}")
        seen |= set(targets)
        if isinstance(proj, str):
            if len(targets) != 1:
                raise LayoutError("label shorthand needs a single register")
            op = label_projector(lay, targets[0], proj)
        else:
            op = qcore.embed(proj, targets, lay)
        total = op @ total
    return _real_prob(qcore.expectation(total, s_dilated))


def rs_conditional(
    s_dilated: StateVector, cond: tuple[str, str], target: tuple[str, str]
) -> float:
    """q(target | cond) read from memory registers of a fully dilated state."""
    t_reg = s_dilated.layout.register(target[0])
    joint = {
        lbl: rs_joint(s_dilated, [(cond[0], cond[1]), (target[0], lbl)])
        for lbl in t_reg.labels
    }
    denom = sum(joint.values())
    if denom <= TOL:
        raise ZeroProbabilityError(
            f"conditioning event {cond[0]}={cond[1]} has probability {denom:.3g}"
        )
    return joint[t_reg.labels[t_reg.index(target[1])]] / denom


def encapsulated_collapse_conditional(
    s: StateVector,
    inner_m: Measurement,
    a: str,
    outer_m: Measurement,
    b: str,
    memory: str | None = None,
    evolve=None,
) -> float:
    """p(b|a) when the inner observer's outcome is treated as definite.

    The inner measurement collapses ``s`` on ``a`` and its observer records
    ``a`` in a fresh memory register, giving the product |a>|A_a>. ``evolve``
    (optional) maps that state forward before the outer Born rule is applied.
    """
    post = collapse(s, inner_m, a)
    reg = memory_register(inner_m, memory)
    if reg.name not in post.layout:
        _, post = extend(post.layout, post, reg, a)
    if evolve is not None:
        post = evolve(post)
    return born_distribution(post, outer_m)[b]


def product_pointer_check(
    outer_m: Measurement, inner: DilationRecord, tol: float = TOL
) -> bool:
    """True iff each outer outcome vector is |a>(x)|A_a> up to phase.

    Outer vectors orthogonal to the whole image of the inner dilation never
    receive weight and are ignored.
    """
    inner_names = set(inner.measurement.target_names)
    mem = inner.memory.name
    outer_names = outer_m.target_names
    if set(outer_names) != inner_names | {mem}:
        raise LayoutError(
            f"outer measurement acts on {outer_names}, expected system + {mem!r}"
        )
    lay = outer_m.targets
    pointers = []
    for lbl, vs in inner.measurement.outcomes:
        mem_vec = basis_state(SpaceLayout((inner.memory,)), {mem: lbl})
        for v in vs:
            prod = qcore.tensor(v, mem_vec)
            pointers.append(_reorder(prod, lay))
    # the image of the dilation on the target space is spanned by the pointers
    image = np.stack([p.amps for p in pointers], axis=1)
    for _, vs in outer_m.outcomes:
        for v in vs:
            overlaps = [abs(qcore.inner(p, v)) ** 2 for p in pointers]
            if max(overlaps) >= 1 - tol:
                continue
            if np.abs(image.conj().T @ v.amps).max() <= tol:
                continue
            return False
    return True


def _reorder(s: StateVector, lay: SpaceLayout) -> StateVector:
    """Same state, registers permuted into the order of ``lay``."""
    if s.layout == lay:
        return s
    perm = [s.layout.position(n) for n in lay.names]
    if sorted(perm) != list(range(len(s.layout.names))) or len(perm) != len(
        s.layout.names
    ):
        raise LayoutError("layouts hold different registers")
    return StateVector(lay, s.tensor().transpose(perm).reshape(-1))
