"""Monte Carlo recovery of the injected station effects.

Simulates station panels, fits the static DiD (Adj and Post phases) and the
group-time ATT, and prints coverage of the injected truth.

    python3 scripts/mc_recovery.py --reps 100
"""

import argparse
import time

import numpy as np

from smokeshift import frames, staggered, synth
from smokeshift.hdfe import DesignSpec, estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gta-reps", type=int, default=199, help="bootstrap draws per GTA fit")
    ap.add_argument("--skip-gta", action="store_true")
    args = ap.parse_args()

    truth = synth.GroundTruth()
    spec = DesignSpec("concentration", ["unit", "t"], "unit")
    rows = []
    t0 = time.perf_counter()
    for r in range(args.reps):
        w = synth.simulate(synth.SimConfig(seed=args.seed + r, effects=truth), individuals=False)
        fr = w.station_frame()
        tab = estimate(fr, spec)
        row = {}
        for term, b in (("inside_adj", truth.beta_adj), ("inside_post", truth.beta_post)):
            row[term] = (tab.coef(term), tab.se(term), abs(tab.coef(term) - b) < 2 * tab.se(term))
        if not args.skip_gta:
            o = staggered.estimate_gta(frames.gta_panel(fr, "concentration"), include_pre=False,
                                       reps=args.gta_reps, seed=r).overall
            row["gta"] = (o.estimate, o.se, None)
        rows.append(row)
    wall = time.perf_counter() - t0

    print(f"{args.reps} reps in {wall:.1f} s")
    for term, b in (("inside_adj", truth.beta_adj), ("inside_post", truth.beta_post)):
        est = np.array([r[term][0] for r in rows])
        se = np.array([r[term][1] for r in rows])
        cover = np.mean([r[term][2] for r in rows])
        print(f"{term:12s} truth {b:7.2f}  mean {est.mean():7.2f}  sd {est.std():5.2f}  "
              f"mean se {se.mean():5.2f}  within 2 SE {cover:.1%}")
    if not args.skip_gta:
        est = np.array([r["gta"][0] for r in rows])
        print(f"{'gta overall':12s} mean {est.mean():7.2f}  sd {est.std():5.2f}  "
              f"(a mix of adjustment and operational months)")


if __name__ == "__main__":
    main()
