"""Clocked multi-agent protocols: execution, traces and branch expansion.

A step's memory register is named after its agent and is appended to the
layout when the step runs, whichever policy is used: a unitary step applies
the dilation isometry, a collapse step projects on the chosen outcome and
writes that label into a fresh memory. Both leave the same layout behind, so
unitary and collapse runs can be compared register for register.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from math import sqrt
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import qcore
from .qcore import LayoutError, LinearMap, StateVector
from .registers import Register, SpaceLayout, basis_state, extend, superpose
from .semantics import (
    Measurement,
    ZeroProbabilityError,
    collapse,
    dilate,
    label_projector,
    memory_register,
)

PRUNE_TOL = 1e-12
POLICIES = ("unitary", "collapse")


def time_key(tag: str) -> tuple[int, ...]:
    nums = re.findall(r"\d+", tag)
    if not nums:
        raise ValueError(f"time tag {tag!r} carries no clock digits")
    return tuple(int(n) for n in nums)


def end_tag(tag: str) -> str:
    """Tick at which a step begun at ``tag`` is complete: n:10 -> n:11."""
    m = list(re.finditer(r"\d+", tag))[-1]
    n = str(int(m.group()) + 1).zfill(len(m.group()))
    return tag[: m.start()] + n + tag[m.end() :]


@dataclass(frozen=True, eq=False)
class Preparation:
    """Conditional state preparation of ``register``.

    The register must hold its first basis label when the preparation fires;
    it is rotated to ``state`` by a fixed unitary whose first column is
    ``state``.
    """

    register: str
    state: StateVector
    name: str = ""

    def __post_init__(self):
        if self.state.layout.names != (self.register,):
            raise LayoutError("preparation state must live on its register alone")
        if abs(self.state.norm() - 1.0) > 1e-10:
            raise ValueError(f"preparation of {self.register!r} is not normalized")

    def unitary(self) -> np.ndarray:
        v = self.state.amps
        d = v.shape[0]
        m = np.eye(d, dtype=complex)
        m[:, 0] = v
        q, r = np.linalg.qr(m)
        q[:, 0] *= r[0, 0]
        return q


@dataclass(frozen=True, eq=False)
class Step:
    time: str
    measurement: Measurement
    policy: str = "unitary"
    prep: Mapping[str, Preparation] = field(default_factory=dict)

    def __post_init__(self):
        time_key(self.time)
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        for lbl in self.prep:
            self.measurement.vectors(lbl)
        object.__setattr__(self, "prep", dict(self.prep))

    @property
    def agent(self) -> str:
        return self.measurement.agent

    @property
    def memory(self) -> str:
        return self.measurement.agent

    @property
    def end(self) -> str:
        return end_tag(self.time)

    @property
    def targets(self) -> tuple[str, ...]:
        return self.measurement.target_names


@dataclass(frozen=True)
class Comm:
    time: str
    sender: str
    receiver: str


@dataclass(frozen=True, eq=False)
class Scenario:
    layout: SpaceLayout
    initial: StateVector
    steps: tuple[Step, ...]
    comms: tuple[Comm, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "comms", tuple(self.comms))
        if self.initial.layout != self.layout:
            raise LayoutError("initial state does not live on the scenario layout")
        if abs(self.initial.norm() - 1.0) > 1e-10:
            raise ValueError("initial state is not normalized")
        keys = [time_key(s.time) for s in self.steps]
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise ValueError("step times must be strictly increasing")
        agents = [s.agent for s in self.steps]
        if len(set(agents)) != len(agents):
            raise ValueError("each agent measures at most once")
        # walk the layouts once so bad references fail at construction time
        lay = self.layout
        for step in self.steps:
            sub = lay.sub(step.targets)
            if sub != step.measurement.targets:
                raise LayoutError(
                    f"step {step.time}: target registers differ from the layout's"
                )
            lay = lay.concat(SpaceLayout((memory_register(step.measurement),)))
            for prep in step.prep.values():
                if lay.register(prep.register) != prep.state.layout.registers[0]:
                    raise LayoutError(f"step {step.time}: bad preparation register")
        for c in self.comms:
            for a in (c.sender, c.receiver):
                if a not in agents:
                    raise ValueError(f"communication names unknown agent {a!r}")

    def step(self, key: str) -> Step:
        """Look a step up by end tick, start tick, or agent name."""
        for attr in ("end", "time", "agent"):
            for s in self.steps:
                if getattr(s, attr) == key:
                    return s
        raise KeyError(f"no step at or by {key!r}")

    def index(self, key: str) -> int:
        return self.steps.index(self.step(key))

    def memories(self) -> tuple[str, ...]:
        return tuple(s.memory for s in self.steps)

    def final_layout(self) -> SpaceLayout:
        lay = self.layout
        for s in self.steps:
            lay = lay.concat(SpaceLayout((memory_register(s.measurement),)))
        return lay

    def replace_steps(self, steps: Sequence[Step]) -> "Scenario":
        return Scenario(self.layout, self.initial, tuple(steps), self.comms, self.name)


@dataclass(frozen=True, eq=False)
class Trace:
    scenario: Scenario
    ticks: tuple[tuple[str, StateVector], ...]
    executed: tuple[Step, ...]
    policies: Mapping[str, str]

    @property
    def final(self) -> StateVector:
        return self.ticks[-1][1]

    def state_at(self, tag: str) -> StateVector:
        for t, s in self.ticks:
            if t == tag:
                return s
        raise KeyError(tag)


def _prep_map(step: Step, lay: SpaceLayout) -> LinearMap:
    """Memory-controlled preparation: sum_a |A_a><A_a| (x) U_a on the prep register."""
    mem = lay.register(step.memory)
    by_reg: dict[str, list[tuple[str, Preparation]]] = {}
    for lbl, prep in step.prep.items():
        by_reg.setdefault(prep.register, []).append((lbl, prep))
    total = qcore.identity(lay)
    for reg_name, preps in sorted(by_reg.items()):
        reg = lay.register(reg_name)
        sub = SpaceLayout((mem, reg))
        mat = np.zeros((sub.size, sub.size), dtype=complex)
        prepared = {lbl: p for lbl, p in preps}
        for k, lbl in enumerate(mem.labels):
            e = np.zeros((mem.dim, mem.dim))
            e[k, k] = 1.0
            u = prepared[lbl].unitary() if lbl in prepared else np.eye(reg.dim)
            mat += np.kron(e, u)
        total = qcore.embed(LinearMap(sub, sub, mat), sub.names, lay) @ total
    return total


def apply_step(
    state: StateVector, step: Step, policy: str, choice: str | None = None
) -> StateVector:
    m = step.measurement
    if policy == "unitary":
        state = qcore.apply(dilate(m, state.layout, step.memory).isometry, state)
    elif policy == "collapse":
        if choice is None:
            raise ValueError(f"collapse step {step.time} needs an outcome choice")
        state = collapse(state, m, choice)
        _, state = extend(state.layout, state, memory_register(m, step.memory), choice)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    if step.prep:
        for prep in step.prep.values():
            p0 = qcore.expectation(
                label_projector(
                    state.layout,
                    prep.register,
                    state.layout.register(prep.register).labels[0],
                ),
                state,
            ).real
            if abs(p0 - 1.0) > 1e-10:
                raise ValueError(
                    f"step {step.time}: register {prep.register!r} is not in its "
                    "reference state before preparation"
                )
        state = qcore.apply(_prep_map(step, state.layout), state)
    return state


def run(
    sc: Scenario,
    overrides: Mapping[str, str] | None = None,
    halt_at: str | None = None,
    collapse_choices: Mapping[str, str] | None = None,
    omit: Iterable[str] = (),
) -> Trace:
    """Execute ``sc`` tick by tick.

    ``overrides`` and ``collapse_choices`` are keyed by anything
    ``Scenario.step`` accepts. Steps listed in ``omit`` are skipped outright;
    their memories never appear.
    """
    policies = {s.time: s.policy for s in sc.steps}
    for key, pol in (overrides or {}).items():
        if pol not in POLICIES:
            raise ValueError(f"unknown policy {pol!r}")
        policies[sc.step(key).time] = pol
    choices = {sc.step(k).time: v for k, v in (collapse_choices or {}).items()}
    skip = {sc.step(k).time for k in omit}
    for t in choices:
        if policies[t] != "collapse":
            raise ValueError(f"collapse choice given for non-collapse step {t}")
    last = len(sc.steps) - 1
    if halt_at is not None:
        last = sc.index(halt_at)
    state = sc.initial
    ticks = [("start", state)]
    executed = []
    for step in sc.steps[: last + 1]:
        if step.time in skip:
            continue
        pol = policies[step.time]
        if pol == "collapse" and step.time not in choices:
            raise ValueError(f"no collapse choice for step {step.time}")
        state = apply_step(state, step, pol, choices.get(step.time))
        ticks.append((step.end, state))
        executed.append(step)
    return Trace(sc, tuple(ticks), tuple(executed), policies)


def observable_memories(trace: Trace) -> tuple[str, ...]:
    """Memories of executed steps that no later executed step measured."""
    out = []
    for i, s in enumerate(trace.executed):
        if not any(s.memory in later.targets for later in trace.executed[i + 1 :]):
            out.append(s.memory)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Branch:
    amplitude: complex
    labels: Mapping[str, str]
    annotations: Mapping[str, str]
    residual: StateVector = field(repr=False)

    @property
    def weight(self) -> float:
        return abs(self.amplitude) ** 2


def _canonical_phase(v: np.ndarray) -> complex:
    mags = np.abs(v)
    k = int(np.argmax(mags >= mags.max() * (1 - 1e-9)))
    return v[k] / mags[k]


def branches(
    state: StateVector,
    memories: Sequence[str],
    annotate=None,
) -> list[Branch]:
    """Expand ``state`` in the product basis of the memory registers.

    Each branch's residual vector on the remaining registers is normalized and
    re-phased so its first largest-magnitude entry is real positive; the
    phase goes into the amplitude. Branches come out in label-index
    lexicographic order; ``annotate(labels)`` (optional) supplies annotations.
    """
    lay = state.layout
    pos = [lay.position(m) for m in memories]
    rest = [n for n in lay.names if n not in memories]
    rest_lay = lay.sub(rest)
    t = state.tensor().transpose(pos + [lay.position(n) for n in rest])
    regs = [lay.register(m) for m in memories]
    out = []
    for idx in itertools.product(*(range(r.dim) for r in regs)):
        r = np.asarray(t[idx]).reshape(-1)
        norm = float(np.linalg.norm(r))
        if norm**2 <= PRUNE_TOL:
            continue
        phase = _canonical_phase(r)
        labels = {reg.name: reg.labels[k] for reg, k in zip(regs, idx)}
        out.append(
            Branch(
                amplitude=norm * phase,
                labels=labels,
                annotations=annotate(labels) if annotate else {},
                residual=StateVector(rest_lay, r / (norm * phase)),
            )
        )
    return out


# -- the Frauchiger-Renner protocol ------------------------------------------

R = Register("R", ("h", "t"))
S = Register("S", ("-1/2", "+1/2"))


def _lab_basis(agent: str, sys: Register, mem: Register) -> Measurement:
    """ok/fail on the lab subspace span{|x,x>}, complement lumped as 'other'."""
    lay = SpaceLayout((sys, mem))
    (a, b) = sys.labels
    aa = basis_state(lay, {sys.name: a, mem.name: a}).amps
    bb = basis_state(lay, {sys.name: b, mem.name: b}).amps
    ok = StateVector(lay, (aa - bb) / sqrt(2))
    fail = StateVector(lay, (aa + bb) / sqrt(2))
    other = (
        basis_state(lay, {sys.name: a, mem.name: b}),
        basis_state(lay, {sys.name: b, mem.name: a}),
    )
    return Measurement(agent, lay, (("ok", (ok,)), ("fail", (fail,)), ("other", other)))


def build_fr() -> Scenario:
    lay = SpaceLayout((R, S))
    initial = superpose(
        lay,
        [
            (1 / sqrt(3), {"R": "h", "S": "-1/2"}),
            (sqrt(2 / 3), {"R": "t", "S": "-1/2"}),
        ],
    )
    s_lay = SpaceLayout((S,))
    down = basis_state(s_lay, {"S": "-1/2"})
    right = superpose(s_lay, [(1 / sqrt(2), {"S": "-1/2"}), (1 / sqrt(2), {"S": "+1/2"})])
    fbar = Measurement.computational("Fbar", R)
    f = Measurement.computational("F", S)
    steps = (
        Step(
            "n:00",
            fbar,
            prep={"h": Preparation("S", down, "down"), "t": Preparation("S", right, "right")},
        ),
        Step("n:10", f),
        Step("n:20", _lab_basis("Wbar", R, memory_register(fbar))),
        Step("n:30", _lab_basis("W", S, memory_register(f))),
    )
    return Scenario(lay, initial, steps, (Comm("n:21", "Wbar", "W"),), name="fr")


def lab_state(label: str, sys: Register, mem: Register) -> StateVector:
    """|x>_lab = |x>_sys |x>_mem."""
    return basis_state(SpaceLayout((sys, mem)), {sys.name: label, mem.name: label})


__all__ = [
    "Branch",
    "Comm",
    "Preparation",
    "Scenario",
    "Step",
    "Trace",
    "ZeroProbabilityError",
    "apply_step",
    "branches",
    "build_fr",
    "observable_memories",
    "run",
    "time_key",
]
