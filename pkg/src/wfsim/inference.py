"""Certainty bookkeeping for multi-agent protocols.

Three rules:

* Q: an agent who saw ``x`` is certain of an outcome (or certain it will not
  occur) when the quantum state, conditioned on ``x``, gives probability one
  (or zero).
* C: if X is certain that Y saw ``y`` and Y, having seen ``y``, is certain
  of ``v``, then X is certain of ``v``. Communications copy an agent's
  statements to another agent.
* S: on any single branch, no agent may be certain of ``v`` while being
  certain of not-``v`` or observing something other than ``v``.

Statements are conditional: each carries the memory record (register, label)
it was derived from, and it is only active on branches where that record
holds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

from .qcore import TOL
from .scenario import Branch, Comm, Scenario, run, time_key
from .semantics import (
    Measurement,
    ZeroProbabilityError,
    born_distribution,
    rs_conditional,
    rs_outcome_probability,
)

log = logging.getLogger(__name__)

CERTAIN = "certain"
CERTAIN_NOT = "certain-not"


class ProvenanceCycleError(ValueError):
    pass


class Target(NamedTuple):
    time: str
    agent: str
    outcome: str

    def describe(self, polarity: str = CERTAIN) -> str:
        op = "=" if polarity == CERTAIN else "!="
        return f"{self.agent}{op}{self.outcome}"


@dataclass(frozen=True)
class CertaintyStatement:
    agent: str
    time: str
    target: Target
    polarity: str
    provenance: str
    condition: tuple[str, str] | None = None
    parents: tuple[int, ...] = ()
    note: str = ""

    @property
    def key(self):
        return (self.agent, self.target, self.polarity, self.condition)

    def describe(self) -> str:
        cond = f"{self.condition[0]}={self.condition[1]}" if self.condition else "-"
        return (
            f"{self.agent} @{self.time} [{self.provenance}] given {cond}: "
            f"{self.polarity} {self.target.describe()}"
        )


@dataclass(frozen=True)
class Violation:
    labels: dict
    weight: float
    agent: str
    first: str
    second: str


def _applicable(targets, agent: str, target_agent: str) -> bool:
    """An agent cannot reason about a measurement of its own memory."""
    return target_agent != agent and agent not in targets[target_agent]


def _targets_by_agent(sc: Scenario) -> dict[str, tuple[str, ...]]:
    return {s.agent: s.targets for s in sc.steps}


def q_rule_probabilities(
    sc: Scenario,
    agent: str,
    own_outcome: str,
    target_step: str,
    full_run: bool = False,
) -> dict[str, float] | None:
    """Outcome probabilities of ``target_step`` as ``agent`` evaluates them
    after seeing ``own_outcome``; ``None`` where rule Q does not apply.

    The default evaluation is the halted experiment: the agent's step is
    collapsed on its outcome, every other step before the target runs
    unitarily, and steps that measure the agent's own memory are left out.
    For an earlier target the agent's record-holding state is queried
    directly. ``full_run=True`` instead reads the relative-state conditional
    from the unitary run through the later of the two steps.
    """
    own = sc.step(agent)
    tgt = sc.step(target_step)
    if own is tgt:
        raise ValueError("rule Q needs a target other than the agent's own step")
    if not _applicable(_targets_by_agent(sc), own.agent, tgt.agent):
        return None
    i_own, i_tgt = sc.index(own.agent), sc.index(tgt.agent)
    unitary = {s.time: "unitary" for s in sc.steps}
    if full_run:
        last = sc.steps[max(i_own, i_tgt)].time
        final = run(sc, unitary, halt_at=last).final
        return {
            lbl: rs_conditional(final, (own.memory, own_outcome), (tgt.memory, lbl))
            for lbl in tgt.measurement.labels
        }
    overrides = dict(unitary)
    overrides[own.time] = "collapse"
    choice = {own.time: own_outcome}
    if i_tgt < i_own:
        state = run(sc, overrides, halt_at=own.time, collapse_choices=choice).final
        reg = state.layout.register(tgt.memory)
        return dict(born_distribution(state, Measurement.computational("_", reg)).items())
    omit = [s.time for s in sc.steps[i_own + 1 : i_tgt] if own.memory in s.targets]
    trace = run(
        sc, overrides, halt_at=sc.steps[i_tgt - 1].time, collapse_choices=choice, omit=omit
    )
    try:
        return dict(born_distribution(trace.final, tgt.measurement).items())
    except ZeroProbabilityError:
        raise
    except (KeyError, ValueError) as exc:
        # the target reads a memory whose step was left out
        log.debug("Q not evaluable for %s -> %s: %s", agent, tgt.agent, exc)
        return None


def certainty_Q(
    sc: Scenario,
    agent: str,
    own_outcome: str,
    target_step: str,
    outcome: str | None = None,
    full_run: bool = False,
) -> CertaintyStatement | None:
    """Apply rule Q for ``agent`` having seen ``own_outcome``.

    Returns a ``certain`` statement for an outcome of probability one, a
    ``certain-not`` for a requested ``outcome`` of probability zero, else
    ``None``. See ``q_rule_probabilities`` for how the probabilities are
    evaluated.
    """
    probs = q_rule_probabilities(sc, agent, own_outcome, target_step, full_run)
    if probs is None:
        return None
    own, tgt = sc.step(agent), sc.step(target_step)
    cond = (own.memory, own_outcome)
    if outcome is not None:
        p = probs[outcome]
        if p >= 1 - TOL:
            pol = CERTAIN
        elif p <= TOL:
            pol = CERTAIN_NOT
        else:
            return None
        return CertaintyStatement(
            own.agent, own.end, Target(tgt.time, tgt.agent, outcome), pol, "Q", cond
        )
    for lbl, p in probs.items():
        if p >= 1 - TOL:
            return CertaintyStatement(
                own.agent, own.end, Target(tgt.time, tgt.agent, lbl), CERTAIN, "Q", cond
            )
    return None


def derive_ledger(sc: Scenario, full_run: bool = False) -> list[CertaintyStatement]:
    """Every Q statement any agent can make about any other step."""
    trace = run(sc, overrides={s.time: "unitary" for s in sc.steps})
    ledger = []
    for own in sc.steps:
        state = trace.state_at(own.end)
        for lbl in own.measurement.labels:
            if rs_outcome_probability(state, own.memory, lbl) <= TOL:
                continue
            for tgt in sc.steps:
                if tgt is own:
                    continue
                st = certainty_Q(sc, own.agent, lbl, tgt.agent, full_run=full_run)
                if st is not None:
                    ledger.append(st)
    return ledger


def _check_acyclic(ledger: Sequence[CertaintyStatement]) -> None:
    state = [0] * len(ledger)  # 0 new, 1 on stack, 2 done

    def visit(i, path):
        if state[i] == 1:
            raise ProvenanceCycleError(f"provenance cycle through statements {path + [i]}")
        if state[i] == 2:
            return
        state[i] = 1
        for p in ledger[i].parents:
            if not 0 <= p < len(ledger):
                raise ValueError(f"statement {i} cites missing parent {p}")
            visit(p, path + [i])
        state[i] = 2

    for i in range(len(ledger)):
        visit(i, [])


def chain_certainty(
    ledger: Sequence[CertaintyStatement],
    comms: Sequence[Comm] = (),
    targets: dict[str, tuple[str, ...]] | None = None,
) -> list[CertaintyStatement]:
    """Close ``ledger`` under rule C and the communications.

    ``targets`` maps each agent to the registers its measurement acts on;
    with it, C never hands an agent a conclusion about a measurement of its
    own memory (the same restriction Q obeys).
    """
    out = list(ledger)
    _check_acyclic(out)
    keys = {s.key: i for i, s in enumerate(out)}

    def add(st: CertaintyStatement) -> bool:
        if st.key in keys:
            return False
        keys[st.key] = len(out)
        out.append(st)
        return True

    changed = True
    while changed:
        changed = False
        for i in range(len(out)):
            s1 = out[i]
            if s1.polarity != CERTAIN:
                continue
            y = s1.target
            for j in range(len(out)):
                s2 = out[j]
                if s2.agent != y.agent or s2.condition != (y.agent, y.outcome):
                    continue
                if s2.target.agent == s1.agent:
                    continue
                if targets is not None and not _applicable(
                    targets, s1.agent, s2.target.agent
                ):
                    continue
                changed |= add(
                    CertaintyStatement(
                        s1.agent, s1.time, s2.target, s2.polarity, "C",
                        s1.condition, (i, j),
                    )
                )
        for c in comms:
            for i in range(len(out)):
                s = out[i]
                if s.agent != c.sender or time_key(s.time) > time_key(c.time):
                    continue
                changed |= add(
                    replace(
                        s, agent=c.receiver, time=c.time, provenance="C",
                        parents=(i,), note=f"communicated by {c.sender}",
                    )
                )
    return out


def closed_ledger(sc: Scenario, full_run: bool = False) -> list[CertaintyStatement]:
    return chain_certainty(derive_ledger(sc, full_run), sc.comms, _targets_by_agent(sc))


def active(st: CertaintyStatement, labels: dict) -> bool:
    if st.condition is None:
        return True
    reg, lbl = st.condition
    return labels.get(reg) == lbl


def beliefs(agent: str, labels: dict, ledger: Sequence[CertaintyStatement]):
    return [s for s in ledger if s.agent == agent and active(s, labels)]


def annotate(labels: dict, ledger: Sequence[CertaintyStatement]) -> dict[str, str]:
    """Per-agent annotation text for one branch, a pure function of its inputs."""
    out = {}
    for agent, lbl in labels.items():
        held = sorted({s.target.describe(s.polarity) for s in beliefs(agent, labels, ledger)})
        out[agent] = f"{lbl}, so certain " + "; ".join(held) if held else f"{lbl}, no conclusion"
    return out


def check_single_value(
    branch_list: Sequence[Branch], ledger: Sequence[CertaintyStatement]
) -> list[Violation]:
    """Conflicting certainties held by one agent on one branch.

    An agent's own memory label counts as an observation of its outcome.
    """
    found = []
    for br in branch_list:
        agents = sorted(set(br.labels) | {s.agent for s in ledger if active(s, br.labels)})
        for agent in agents:
            held = beliefs(agent, br.labels, ledger)
            claims = []
            for s in held:
                desc = f"certain {s.target.describe(s.polarity)} [{s.provenance}]"
                claims.append((s.target.agent, s.polarity, s.target.outcome, desc))
            if agent in br.labels:
                obs = br.labels[agent]
                claims.append((agent, "observes", obs, f"observes {agent}={obs}"))
            for a, b in _pairs(claims):
                if _conflict(a, b):
                    found.append(Violation(dict(br.labels), br.weight, agent, a[3], b[3]))
    return found


def _pairs(items):
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            yield items[i], items[j]


def _conflict(a, b) -> bool:
    if a[0] != b[0]:
        return False
    pa, pb = a[1], b[1]
    if pa == CERTAIN_NOT and pb == CERTAIN_NOT:
        return False
    if CERTAIN_NOT in (pa, pb):
        return a[2] == b[2]
    if pa == pb == "observes":
        return False
    return a[2] != b[2]
