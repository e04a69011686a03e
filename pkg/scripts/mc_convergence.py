"""Monte Carlo convergence on the four-agent protocol.

Prints, for a ladder of sample sizes, the total-variation distance to the
exact joint of (Wbar, W) and the largest per-outcome deviation in units of
the binomial sigma. With --collapse-all the encapsulated steps are sampled
too, which destroys the interference and moves (ok, ok) to 1/4.

    python3 scripts/mc_convergence.py --seed 0 --max-exp 5
"""

import argparse
import math

from wfsim.analysis import analytic_distribution, mc_sample, sigma_band, total_variation
from wfsim.scenario import build_fr


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-exp", type=int, default=5, help="largest n is 10**max_exp")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--collapse-all", action="store_true")
    args = ap.parse_args()

    sc = build_fr()
    exact = analytic_distribution(sc, collapse_encapsulated=args.collapse_all)
    print("exact: " + "  ".join(f"{','.join(k)}={p:.6f}" for k, p in exact.items()))
    print(f"{'n':>8} {'TV':>10} {'5*sqrt(k/n)':>12} {'max z':>7}")
    for e in range(2, args.max_exp + 1):
        n = 10**e
        emp = mc_sample(sc, n, args.seed, workers=args.workers,
                        collapse_encapsulated=args.collapse_all)
        tv = total_variation(emp, exact)
        z = max(abs(emp.frequency(k) - p) / sigma_band(p, n) for k, p in exact.items() if 0 < p < 1)
        print(f"{n:>8} {tv:>10.5f} {5 * math.sqrt(len(exact) / n):>12.5f} {z:>7.2f}")


if __name__ == "__main__":
    main()
