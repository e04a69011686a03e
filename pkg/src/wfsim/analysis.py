"""Cross-semantics comparisons, the heads/tails re-measurement reading of the
relative-state conditional, order invariance, and Monte Carlo checks."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import sqrt
from typing import Mapping, Sequence

import numpy as np

from . import qcore
from .qcore import TOL, LayoutError, StateVector
from .registers import SpaceLayout, basis_state
from .scenario import (
    R,
    S,
    Scenario,
    Step,
    Trace,
    _lab_basis,
    apply_step,
    build_fr,
    lab_state,
    observable_memories,
    run,
)
from .semantics import (
    Measurement,
    ZeroProbabilityError,
    born_distribution,
    dilate,
    memory_register,
    product_pointer_check,
    rs_conditional,
    rs_joint,
    rs_outcome_probability,
)

AGREE_TOL = 1e-10


@dataclass(frozen=True)
class ComparisonRow:
    condition: str
    target: str
    p: float
    q: float
    note: str = ""

    @property
    def agree(self) -> bool:
        return abs(self.p - self.q) <= AGREE_TOL


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    pointer_product: bool | None = None
    extras: Mapping[str, float] = field(default_factory=dict)

    def row(self, target: str) -> ComparisonRow:
        for r in self.rows:
            if r.target == target:
                return r
        raise KeyError(target)

    @property
    def all_agree(self) -> bool:
        return all(r.agree for r in self.rows)


def all_unitary(sc: Scenario) -> dict[str, str]:
    return {s.time: "unitary" for s in sc.steps}


# -- p versus q ---------------------------------------------------------------


def _encapsulator(sc: Scenario, cond: Step, target: Step) -> Step | None:
    lo, hi = sc.index(cond.time), sc.index(target.time)
    for s in sc.steps[lo + 1 : hi + 1]:
        if cond.memory in s.targets:
            return s
    return None


def compare_semantics(
    sc: Scenario, condition: tuple[str, str], target: str | None = None
) -> ComparisonReport:
    """Tabulate collapse p(b|a) against relative-state q(b|a).

    ``condition`` is (step key, outcome). p collapses that step on the
    outcome and runs everything else unitarily; q conditions the memory
    records of the all-unitary run. If some step between the two measures
    the conditioning observer's memory, the product-pointer test of that step
    predicts whether the two can agree.
    """
    cstep = sc.step(condition[0])
    a = condition[1]
    tstep = sc.step(target) if target else sc.steps[-1]
    if sc.index(tstep.time) <= sc.index(cstep.time):
        raise ValueError("target step must come after the conditioning step")
    pol = all_unitary(sc)
    pol[cstep.time] = "collapse"
    p_trace = run(sc, pol, halt_at=tstep.time, collapse_choices={cstep.time: a})
    q_state = run(sc, all_unitary(sc), halt_at=tstep.time).final
    enc = _encapsulator(sc, cstep, tstep)
    pointer = None
    note = "non-encapsulated"
    if enc is not None:
        inner = dilate(cstep.measurement, cstep.measurement.targets, cstep.memory)
        try:
            pointer = product_pointer_check(enc.measurement, inner)
            verdict = "yes" if pointer else "no"
        except LayoutError:
            verdict = "n/a"
        note = (
            f"q conditions on memory {cstep.memory} after its measurement by "
            f"{enc.agent}; product-pointer={verdict}"
        )
    rows = []
    for b in tstep.measurement.labels:
        p = rs_outcome_probability(p_trace.final, tstep.memory, b)
        q = rs_conditional(q_state, (cstep.memory, a), (tstep.memory, b))
        rows.append(
            ComparisonRow(f"{cstep.agent}={a}", f"{tstep.agent}={b}", p, q, note)
        )
    return ComparisonReport(tuple(rows), pointer)


# -- the heads/tails re-measurement of the first lab ---------------------------

HT_AGENT = "Wbarbar"


def fr_with_remeasurement(sc: Scenario | None = None) -> Scenario:
    """FR plus a final heads/tails measurement of lab Lbar = (R, Fbar)."""
    sc = sc or build_fr()
    fbar = sc.step("Fbar")
    mem = memory_register(fbar.measurement)
    lay = SpaceLayout((R, mem))
    m = Measurement(
        HT_AGENT,
        lay,
        (
            ("h", (lab_state("h", R, mem),)),
            ("t", (lab_state("t", R, mem),)),
            (
                "other",
                (
                    basis_state(lay, {"R": "h", mem.name: "t"}),
                    basis_state(lay, {"R": "t", mem.name: "h"}),
                ),
            ),
        ),
    )
    return sc.replace_steps(sc.steps + (Step("n:40", m),))


def bw_clarification() -> ComparisonReport:
    """Collapse p(ok_W | t_Fbar) against the relative-state q read from a
    heads/tails re-measurement of Lbar after Wbar's unitary measurement."""
    sc = build_fr()
    pol = all_unitary(sc)
    pol["n:00"] = "collapse"
    p = rs_outcome_probability(
        run(sc, pol, collapse_choices={"n:00": "t"}).final, "W", "ok"
    )
    ext = fr_with_remeasurement(sc)
    final = run(ext, all_unitary(ext)).final
    q_ok_t = rs_joint(final, [("W", "ok"), (HT_AGENT, "t")])
    q_fail_t = rs_joint(final, [("W", "fail"), (HT_AGENT, "t")])
    q_cond = rs_conditional(final, (HT_AGENT, "t"), ("W", "ok"))
    # the same number conditioned on Fbar's own (encapsulated) memory
    q_mem = rs_conditional(run(sc, all_unitary(sc)).final, ("Fbar", "t"), ("W", "ok"))
    rows = (
        ComparisonRow(
            "Fbar=t", "W=ok", p, q_cond,
            "p: Fbar collapses on t, F unitary; q: conditioned on a heads/tails "
            f"re-measurement of Lbar by {HT_AGENT} after Wbar",
        ),
    )
    extras = {
        "q_joint_ok_t": q_ok_t,
        "q_joint_fail_t": q_fail_t,
        "q_joint_sum_t": q_ok_t + q_fail_t,
        "q_cond_on_Fbar_memory": q_mem,
    }
    return ComparisonReport(rows, False, extras)


def record_vs_remeasurement() -> dict[tuple[str, str], float]:
    """Joint distribution of Fbar's pre-Wbar record and the later heads/tails
    re-measurement of that lab, taking the record as a classical copy."""
    ext = fr_with_remeasurement()
    out = {}
    for a in ("h", "t"):
        pol = all_unitary(ext)
        pol["n:00"] = "collapse"
        pa = born_distribution(ext.initial, ext.step("Fbar").measurement)[a]
        final = run(ext, pol, collapse_choices={"n:00": a}).final
        for b in ("h", "t", "other"):
            out[(a, b)] = pa * rs_outcome_probability(final, HT_AGENT, b)
    return out


# -- Healey-form expansion -----------------------------------------------------


def _healey_coefficients() -> dict[tuple[str, str, str], float]:
    """Closed-form coefficients of Phi over {h,t}_Lbar (x) {fail,ok}_Wbar (x) {fail,ok}_L."""
    c = {}
    for lb, sgn in (("h", -1), ("t", +1)):
        c[(lb, "fail", "fail")] = (1 / sqrt(2)) * sqrt(5 / 6) * (3 / sqrt(10))
        c[(lb, "ok", "fail")] = sgn * (1 / sqrt(2)) * sqrt(5 / 6) * (1 / sqrt(10))
        c[(lb, "fail", "ok")] = (1 / sqrt(2)) * (1 / sqrt(6)) * (1 / sqrt(2))
        c[(lb, "ok", "ok")] = -sgn * (1 / sqrt(2)) * (1 / sqrt(6)) * (1 / sqrt(2))
    return c


@dataclass(frozen=True)
class HealeyExpansion:
    coefficients: Mapping[tuple[str, str, str], float]
    extracted: Mapping[tuple[str, str, str], complex]
    max_coefficient_error: float
    recontraction_error: float
    norm: float


def _healey_vector(phi_layout: SpaceLayout, lbar: str, wbar: str, lab: str) -> StateVector:
    fbar = phi_layout.register("Fbar")
    f = phi_layout.register("F")
    lab_l = _lab_basis("W", S, f).vectors(lab)[0]
    lab_lbar = lab_state(lbar, R, fbar)
    mem = basis_state(phi_layout.sub(["Wbar"]), {"Wbar": wbar})
    v = qcore.tensor(qcore.tensor(lab_lbar, lab_l), mem)
    perm = [v.layout.position(n) for n in phi_layout.names]
    return StateVector(phi_layout, v.tensor().transpose(perm).reshape(-1))


def healey_decomposition(phi: StateVector) -> HealeyExpansion:
    """Re-expand the post-Wbar FR state in lab heads/tails, Wbar memory and
    L's ok/fail, checking closed-form coefficients against extraction."""
    want = ("R", "S", "Fbar", "F", "Wbar")
    if phi.layout.names != want:
        raise LayoutError(f"expected the post-Wbar FR state on {want}, got {phi.layout.names}")
    closed = _healey_coefficients()
    extracted = {}
    recon = np.zeros(phi.layout.size, dtype=complex)
    for key, coef in closed.items():
        v = _healey_vector(phi.layout, *key)
        extracted[key] = qcore.inner(v, phi)
        recon += coef * v.amps
    err = max(abs(extracted[k] - closed[k]) for k in closed)
    return HealeyExpansion(
        closed,
        extracted,
        float(err),
        float(np.abs(recon - phi.amps).max()),
        float(np.sqrt(sum(c * c for c in closed.values()))),
    )


# -- order invariance ------------------------------------------------------------


def joint_memory_distribution(trace: Trace) -> dict[tuple[tuple[str, str], ...], float]:
    final = trace.final
    mems = sorted(s.memory for s in trace.executed)
    probs = np.abs(final.tensor()) ** 2
    lay = final.layout
    pos = [lay.position(m) for m in mems]
    rest = tuple(i for i in range(len(lay.names)) if i not in pos)
    marg = probs.sum(axis=rest) if rest else probs
    marg = np.transpose(marg, np.argsort(np.argsort(pos)))
    regs = [lay.register(m) for m in mems]
    out = {}
    for idx in itertools.product(*(range(r.dim) for r in regs)):
        out[tuple((r.name, r.labels[k]) for r, k in zip(regs, idx))] = float(marg[idx])
    return out


def swap_steps(sc: Scenario, step_a: str, step_b: str) -> Scenario:
    """Exchange the contents of two steps' time slots."""
    i, j = sc.index(step_a), sc.index(step_b)
    steps = list(sc.steps)
    a, b = steps[i], steps[j]
    steps[i] = Step(a.time, b.measurement, b.policy, b.prep)
    steps[j] = Step(b.time, a.measurement, a.policy, a.prep)
    return sc.replace_steps(steps)


def order_invariance(sc: Scenario, step_a: str, step_b: str) -> float:
    a, b = sc.step(step_a), sc.step(step_b)
    if a is b:
        return 0.0
    if set(a.targets) & set(b.targets):
        raise LayoutError(f"steps {a.time} and {b.time} act on overlapping registers")
    if a.memory in b.targets or b.memory in a.targets:
        raise LayoutError("one step measures the other's memory")
    d1 = joint_memory_distribution(run(sc, all_unitary(sc)))
    swapped = swap_steps(sc, step_a, step_b)
    d2 = joint_memory_distribution(run(swapped, all_unitary(swapped)))
    return max(abs(d1[k] - d2[k]) for k in d1)


# -- Monte Carlo -------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalDistribution:
    counts: Mapping[tuple[str, ...], int]
    n: int
    seed: int
    agents: tuple[str, ...] = ()

    def __post_init__(self):
        if sum(self.counts.values()) != self.n:
            raise ValueError("counts do not sum to n")

    def frequency(self, outcome: tuple[str, ...]) -> float:
        return self.counts.get(tuple(outcome), 0) / self.n

    def marginal(self, agents: Sequence[str]) -> "EmpiricalDistribution":
        idx = [self.agents.index(a) for a in agents]
        out: dict[tuple[str, ...], int] = {}
        for k, c in self.counts.items():
            kk = tuple(k[i] for i in idx)
            out[kk] = out.get(kk, 0) + c
        return EmpiricalDistribution(out, self.n, self.seed, tuple(agents))


class _OutcomeTree:
    """Memoized Born distributions keyed by the outcome prefix so far."""

    def __init__(self, sc: Scenario, collapse_encapsulated: bool):
        self.sc = sc
        self.sampled = []
        trace = run(sc, all_unitary(sc))
        keep = set(observable_memories(trace))
        for s in sc.steps:
            self.sampled.append(collapse_encapsulated or s.policy == "collapse" or s.memory in keep)
        self.cache: dict[tuple[str, ...], tuple[StateVector, list[str], np.ndarray]] = {}

    def node(self, prefix: tuple[str, ...], k: int, state: StateVector):
        key = prefix + (str(k),)
        if key not in self.cache:
            m = self.sc.steps[k].measurement
            dist = born_distribution(state, m)
            labels = list(m.labels)
            p = np.clip(np.array([dist[l] for l in labels]), 0.0, None)
            self.cache[key] = (state, labels, np.cumsum(p / p.sum()))
        return self.cache[key]

    def sample(self, rng: np.random.Generator) -> tuple[str, ...]:
        state = self.sc.initial
        prefix: tuple[str, ...] = ()
        out = []
        for k, step in enumerate(self.sc.steps):
            if not self.sampled[k]:
                key = prefix + ("u", str(k))
                if key not in self.cache:
                    self.cache[key] = (apply_step(state, step, "unitary"), [], np.empty(0))
                state = self.cache[key][0]
                prefix = key
                continue
            _, labels, cdf = self.node(prefix, k, state)
            lbl = labels[min(int(np.searchsorted(cdf, rng.random(), side="right")), len(labels) - 1)]
            key = prefix + (str(k), lbl)
            if key not in self.cache:
                self.cache[key] = (apply_step(state, step, "collapse", lbl), [], np.empty(0))
            state = self.cache[key][0]
            prefix = key
            out.append(lbl)
        return tuple(out)


def _sample_range(sc, seed, start, stop, collapse_encapsulated):
    tree = _OutcomeTree(sc, collapse_encapsulated)
    counts: dict[tuple[str, ...], int] = {}
    for i in range(start, stop):
        o = tree.sample(np.random.default_rng([seed, i]))
        counts[o] = counts.get(o, 0) + 1
    return counts


def mc_sample(
    sc: Scenario,
    n: int,
    seed: int,
    collapse_encapsulated: bool = False,
    workers: int = 1,
) -> EmpiricalDistribution:
    """Sample ``n`` protocol runs, each from its own (seed, index) stream.

    Steps whose memory a later step measures evolve unitarily and are not
    sampled (collapsing them would change the later statistics); every other
    step samples its outcome from the current state's Born distribution and
    collapses. ``collapse_encapsulated=True`` samples and collapses every
    step instead.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    tree = _OutcomeTree(sc, collapse_encapsulated)
    agents = tuple(s.agent for s, k in zip(sc.steps, tree.sampled) if k)
    if workers <= 1:
        counts = _sample_range(sc, seed, 0, n, collapse_encapsulated)
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        counts = {}
        with ProcessPoolExecutor(workers) as ex:
            futs = [
                ex.submit(_sample_range, sc, seed, int(lo), int(hi), collapse_encapsulated)
                for lo, hi in zip(bounds, bounds[1:])
            ]
            for f in futs:
                for k, c in f.result().items():
                    counts[k] = counts.get(k, 0) + c
    ordered = dict(sorted(counts.items()))
    return EmpiricalDistribution(ordered, n, seed, agents)


def analytic_distribution(sc: Scenario, collapse_encapsulated: bool = False):
    """Exact probabilities of every sampled outcome tuple, by enumeration."""
    tree = _OutcomeTree(sc, collapse_encapsulated)
    out: dict[tuple[str, ...], float] = {}

    def walk(k, state, prob, labels):
        if prob <= TOL:
            return
        if k == len(sc.steps):
            out[tuple(labels)] = out.get(tuple(labels), 0.0) + prob
            return
        step = sc.steps[k]
        if not tree.sampled[k]:
            walk(k + 1, apply_step(state, step, "unitary"), prob, labels)
            return
        for lbl, p in born_distribution(state, step.measurement).items():
            if p > TOL:
                walk(k + 1, apply_step(state, step, "collapse", lbl), prob * p, labels + [lbl])

    walk(0, sc.initial, 1.0, [])
    return out


def sigma_band(p: float, n: int) -> float:
    return sqrt(p * (1 - p) / n)


def total_variation(emp: EmpiricalDistribution, exact: Mapping[tuple[str, ...], float]) -> float:
    keys = set(emp.counts) | set(exact)
    return 0.5 * sum(abs(emp.frequency(k) - exact.get(k, 0.0)) for k in keys)


__all__ = [
    "ComparisonReport",
    "ComparisonRow",
    "EmpiricalDistribution",
    "HealeyExpansion",
    "ZeroProbabilityError",
    "analytic_distribution",
    "bw_clarification",
    "compare_semantics",
    "healey_decomposition",
    "mc_sample",
    "order_invariance",
    "record_vs_remeasurement",
    "sigma_band",
    "total_variation",
]
