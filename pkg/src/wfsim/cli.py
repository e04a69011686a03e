"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 conditioning on a zero-probability
event, 3 single-value violation found with ``--fail-on-violation``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analysis, inference
from .dsl import ScenarioSyntaxError, load_builtin, parse_scenario
from .qcore import LayoutError
from .report import Section, render_kv, render_text
from .scenario import POLICIES, Scenario, branches, observable_memories, run
from .semantics import ZeroProbabilityError, rs_outcome_probability

EXIT_OK, EXIT_USAGE, EXIT_ZERO_PROB, EXIT_VIOLATION = 0, 1, 2, 3
BUILTINS = ("fr",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wfsim", description="Wigner's-friend protocol simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="execute a scenario file or a built-in protocol")
    r.add_argument("scenario", help="path to a .scn file, or 'fr'")
    r.add_argument("--semantics", default=None,
                   help="unitary | collapse | mixed:<time>=<policy>,...")
    r.add_argument("--condition", action="append", default=[], metavar="AGENT=OUTCOME",
                   help="collapse choice for a collapse step; for a unitary step, "
                        "tabulate p against q conditioned on it")
    r.add_argument("--branches", action="store_true")
    r.add_argument("--ledger", action="store_true")
    r.add_argument("--q-full-run", action="store_true",
                   help="with --ledger, also evaluate rule Q on the full unitary run")
    r.add_argument("--clarify", action="store_true")
    r.add_argument("--order-check", metavar="T1,T2")
    r.add_argument("--mc", type=int, metavar="N")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--format", choices=("text", "kv"), default="text")
    r.add_argument("--fail-on-violation", action="store_true")
    r.add_argument("--halt", metavar="TIME")
    return p


def load_scenario(arg: str) -> Scenario:
    if arg in BUILTINS:
        return parse_scenario(load_builtin(arg), arg)
    path = Path(arg)
    if not path.exists():
        raise UsageError(f"no such scenario file: {arg}")
    return parse_scenario(path.read_text(), path.stem)


def _policies(sc: Scenario, text: str | None) -> dict[str, str]:
    pol = {s.time: s.policy for s in sc.steps}
    if text is None:
        return pol
    if text in POLICIES:
        return {t: text for t in pol}
    if text.startswith("mixed:"):
        for item in filter(None, text[len("mixed:"):].split(",")):
            key, eq, val = item.rpartition("=")
            if not eq or val not in POLICIES:
                raise UsageError(f"bad mixed policy item {item!r}")
            try:
                pol[sc.step(key).time] = val
            except KeyError as exc:
                raise UsageError(str(exc)) from None
        return pol
    raise UsageError(f"unknown semantics {text!r}")


def _conditions(sc: Scenario, items) -> list[tuple[str, str]]:
    out = []
    for item in items:
        agent, eq, outcome = item.partition("=")
        if not eq:
            raise UsageError(f"--condition expects AGENT=OUTCOME, got {item!r}")
        try:
            step = sc.step(agent)
        except KeyError as exc:
            raise UsageError(str(exc)) from None
        if outcome not in step.measurement.labels:
            raise UsageError(f"{agent} has no outcome {outcome!r}")
        out.append((step.time, outcome))
    return out


def _outcome_section(trace) -> Section:
    sec = Section("outcome probabilities (memory registers, final state)")
    for step in trace.executed:
        for lbl in step.measurement.labels:
            p = rs_outcome_probability(trace.final, step.memory, lbl)
            sec.add(record="outcome", step=step.time, agent=step.agent, outcome=lbl, p=p)
    return sec


def _branch_section(trace, ledger) -> tuple[Section, list]:
    mems = observable_memories(trace)
    brs = branches(trace.final, mems, lambda l: inference.annotate(l, ledger))
    sec = Section(f"branches over memories {','.join(mems)}")
    for i, b in enumerate(brs):
        rec = dict(record="branch", index=i)
        rec.update({f"mem_{k}": v for k, v in b.labels.items()})
        rec.update(amplitude=b.amplitude, weight=b.weight)
        rec.update({f"note_{k}": v for k, v in b.annotations.items()})
        sec.records.append(rec)
    return sec, brs


def _ledger_sections(sc, ledger, violations, full_run: bool) -> list[Section]:
    led = Section("certainty ledger (rules Q and C)")
    for i, s in enumerate(ledger):
        led.add(
            record="statement", id=i, agent=s.agent, time=s.time,
            given="-" if s.condition is None else f"{s.condition[0]}={s.condition[1]}",
            polarity=s.polarity, target=f"{s.target.agent}={s.target.outcome}",
            target_step=s.target.time, rule=s.provenance,
            parents=",".join(map(str, s.parents)) or "-",
        )
    out = [led]
    if full_run:
        cmp_ = Section("rule Q: halted experiment vs full unitary run")
        for s in ledger:
            if s.provenance != "Q":
                continue
            q = inference.q_rule_probabilities(
                sc, s.agent, s.condition[1], s.target.agent, full_run=True
            )
            p = inference.q_rule_probabilities(sc, s.agent, s.condition[1], s.target.agent)
            cmp_.add(
                record="q_rule", agent=s.agent, given=f"{s.condition[0]}={s.condition[1]}",
                target=f"{s.target.agent}={s.target.outcome}",
                halted=p[s.target.outcome], full_run=q[s.target.outcome],
            )
        out.append(cmp_)
    vio = Section("single-value violations")
    for v in violations:
        vio.add(
            record="violation",
            branch=",".join(f"{k}={x}" for k, x in v.labels.items()),
            weight=v.weight, agent=v.agent, first=v.first, second=v.second,
        )
    out.append(vio)
    return out


def _compare_section(sc, cond) -> Section:
    rep = analysis.compare_semantics(sc, cond)
    sec = Section(f"p (collapse) vs q (relative state) given {rep.rows[0].condition}")
    sec.notes.append(rep.rows[0].note)
    for r in rep.rows:
        sec.add(record="compare", condition=r.condition, target=r.target,
                p=r.p, q=r.q, agree=r.agree)
    return sec


def _clarify_section() -> Section:
    rep = analysis.bw_clarification()
    sec = Section("clarification: p(ok_W | t_Fbar) vs q(ok_W | t_Lbar)")
    row = rep.rows[0]
    sec.notes.append(row.note)
    sec.add(record="clarify", quantity="p(W=ok | Fbar=t)", value=row.p)
    sec.add(record="clarify", quantity="q(W=ok, Lbar=t)", value=rep.extras["q_joint_ok_t"])
    sec.add(record="clarify", quantity="q(W=fail, Lbar=t)", value=rep.extras["q_joint_fail_t"])
    sec.add(record="clarify", quantity="q(W=ok, Lbar=t)+q(W=fail, Lbar=t)",
            value=rep.extras["q_joint_sum_t"])
    sec.add(record="clarify", quantity="q(W=ok | Lbar=t)", value=row.q)
    sec.add(record="clarify", quantity="q(W=ok | memory Fbar=t)",
            value=rep.extras["q_cond_on_Fbar_memory"])
    sec.add(record="clarify", quantity="|p - q|", value=abs(row.p - row.q))
    return sec


def _mc_section(sc, n, seed, workers) -> Section:
    emp = analysis.mc_sample(sc, n, seed, workers=workers)
    exact = analysis.analytic_distribution(sc)
    sec = Section(f"Monte Carlo, n={n}, seed={seed}, outcomes of {','.join(emp.agents)}")
    sec.notes.append("band: |freq - p| <= 4 sigma, sigma = sqrt(p(1-p)/n)")
    for key in sorted(set(exact) | set(emp.counts)):
        p = exact.get(key, 0.0)
        sigma = analysis.sigma_band(p, n)
        freq = emp.frequency(key)
        sec.add(record="mc", outcome=",".join(key), count=emp.counts.get(key, 0),
                freq=freq, p=p, sigma=sigma, within_4sigma=abs(freq - p) <= 4 * sigma)
    return sec


def execute(args) -> tuple[str, int]:
    sc = load_scenario(args.scenario)
    pol = _policies(sc, args.semantics)
    conds = _conditions(sc, args.condition)
    choices = {t: o for t, o in conds if pol[t] == "collapse"}
    compare = [(t, o) for t, o in conds if pol[t] != "collapse"]
    if args.halt is not None:
        try:
            sc.step(args.halt)
        except KeyError:
            raise UsageError(f"halt time {args.halt!r} is not in the schedule") from None
    halt_idx = sc.index(args.halt) if args.halt else len(sc.steps) - 1
    for s in sc.steps[: halt_idx + 1]:
        if pol[s.time] == "collapse" and s.time not in choices:
            raise UsageError(f"step {s.time} ({s.agent}) collapses; give --condition {s.agent}=<outcome>")

    trace = run(sc, pol, args.halt, choices)
    header = Section("run")
    header.notes.append(f"scenario {sc.name}; tensor order {','.join(trace.final.layout.names)}")
    header.notes.append(
        "policies " + ",".join(f"{s.time}={pol[s.time]}" for s in trace.executed)
    )
    sections = [header, _outcome_section(trace)]

    code = EXIT_OK
    need_ledger = args.branches or args.ledger or args.fail_on_violation
    if need_ledger:
        ledger = inference.closed_ledger(sc)
        bsec, brs = _branch_section(trace, ledger)
        violations = inference.check_single_value(brs, ledger)
        if args.branches:
            sections.append(bsec)
        if args.ledger:
            sections.extend(_ledger_sections(sc, ledger, violations, args.q_full_run))
        if args.fail_on_violation and violations:
            code = EXIT_VIOLATION
    for cond in compare:
        sections.append(_compare_section(sc, cond))
    if args.clarify:
        sections.append(_clarify_section())
    if args.order_check:
        t1, _, t2 = args.order_check.partition(",")
        try:
            dev = analysis.order_invariance(sc, t1, t2)
        except KeyError as exc:
            raise UsageError(str(exc)) from None
        sec = Section(f"order invariance {t1} <-> {t2}")
        sec.add(record="order", step_a=t1, step_b=t2, max_deviation=dev, within_1e_12=dev <= 1e-12)
        sections.append(sec)
    if args.mc is not None:
        if args.mc < 1:
            raise UsageError("--mc needs N >= 1")
        sections.append(_mc_section(sc, args.mc, args.seed, args.workers))

    render = render_kv if args.format == "kv" else render_text
    return render(sections), code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        text, code = execute(args)
    except UsageError as exc:
        print(f"wfsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ZeroProbabilityError as exc:
        print(f"wfsim: zero-probability conditioning: {exc}", file=sys.stderr)
        return EXIT_ZERO_PROB
    except (ScenarioSyntaxError, LayoutError) as exc:
        print(f"wfsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
