"""Print the four-agent protocol end to end: branches, ledger, violations and
the collapse vs relative-state comparison.

    python3 scripts/fr_report.py [--halt n:21]
"""

import argparse

from wfsim.analysis import bw_clarification, compare_semantics, healey_decomposition
from wfsim.inference import annotate, check_single_value, closed_ledger
from wfsim.report import nice
from wfsim.scenario import branches, build_fr, observable_memories, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--halt", default=None, help="stop after this step, e.g. n:21")
    args = ap.parse_args()

    sc = build_fr()
    ledger = closed_ledger(sc)
    trace = run(sc, halt_at=args.halt)
    mems = observable_memories(trace)
    brs = branches(trace.final, mems, lambda l: annotate(l, ledger))

    print(f"branches over {', '.join(mems)}")
    for b in brs:
        labels = ", ".join(f"{k}={v}" for k, v in b.labels.items())
        print(f"  {labels:<24} weight {nice(b.weight):>6}  amplitude {b.amplitude.real:+.6f}")
        for agent, note in b.annotations.items():
            print(f"      {agent}: {note}")

    print(f"\nledger: {len(ledger)} certainty statements")
    for i, s in enumerate(ledger):
        parents = f"  from {list(s.parents)}" if s.parents else ""
        print(f"  {i:>2} {s.describe()}{parents}")

    found = check_single_value(brs, ledger)
    print(f"\nsingle-value violations: {len(found)}")
    for v in found:
        labels = ", ".join(f"{k}={x}" for k, x in v.labels.items())
        print(f"  branch {labels} (weight {nice(v.weight)}): {v.agent} holds "
              f"'{v.first}' and '{v.second}'")

    row = compare_semantics(sc, ("Fbar", "t")).row("W=ok")
    bw = bw_clarification().rows[0]
    print("\ncollapse vs relative state, given Fbar=t")
    print(f"  p(W=ok) = {nice(row.p)}   q(W=ok) = {nice(row.q)}   ({row.note})")
    print(f"  q(W=ok | Lbar=t) from a heads/tails re-measurement = {nice(bw.q)}")

    h = healey_decomposition(run(sc, halt_at="n:21").final)
    print(f"\nre-expansion at n:21: coefficient error {h.max_coefficient_error:.1e}, "
          f"re-contraction error {h.recontraction_error:.1e}")


if __name__ == "__main__":
    main()
