"""Re-estimate one simulated station data set across control groups,
event-window trims and trend modes, printing a coefficient table."""

import argparse
from dataclasses import replace

from smokeshift import synth
from smokeshift.hdfe import DesignSpec, estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=11_011)
    ap.add_argument("--cbs", type=int, default=30)
    args = ap.parse_args()

    w = synth.simulate(synth.SimConfig(seed=args.seed, n_cbs=args.cbs, n_stations_per_cb=4), individuals=False)
    fr = w.station_frame()
    base = DesignSpec("concentration", ["unit", "t"], "unit")
    variants = [("baseline", base)]
    variants += [(f"control {c}", replace(base, control_group=c)) for c in ("drop_outside_adopting", "drop_non_adopting")]
    variants += [(f"trim {t}", replace(base, trim=t)) for t in (24, 48, None)]
    variants += [(f"trends {m}", replace(base, trend_mode=m)) for m in ("None", "CBSpecific", "UnitSpecific")]
    print(f"injected inside_post {w.truth.beta_post}")
    print(f"{'specification':30s} {'coef':>8s} {'se':>6s} {'n':>7s}")
    for name, spec in variants:
        tab = estimate(fr, spec)
        print(f"{name:30s} {tab.coef('inside_post'):8.2f} {tab.se('inside_post'):6.2f} {tab.n_obs:7d}")


if __name__ == "__main__":
    main()
