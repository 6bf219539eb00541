"""Downwind regions of a single square SCA under each construction.

Prints region areas and whether probe points east and west of the SCA fall
inside, and optionally writes the three regions as GeoJSON.

    python3 scripts/plume_demo.py --side 500 --wind 3 0 --out regions.geojson
"""

import argparse
from pathlib import Path

from smokeshift import io
from smokeshift.plume import PlumeConfig, simulated_downwind
from smokeshift.spatial import Point, Polygon, WindVector, point_in_polygon, polygon_area
from smokeshift.spatial import scaled_polygon_downwind, triangle_downwind
from smokeshift.timing import TreatmentSchedule, YearMonth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--side", type=float, default=500.0, help="SCA side length in metres")
    ap.add_argument("--wind", type=float, nargs=2, default=(3.0, 0.0), metavar=("U_EAST", "V_NORTH"))
    ap.add_argument("--threshold", type=float, default=0.05, help="contour level as a fraction of the maximum")
    ap.add_argument("--out", type=Path, help="write regions as a GeoJSON feature collection")
    args = ap.parse_args()

    h = args.side / 2
    sca = TreatmentSchedule("S", "CB", Polygon.box(-h, -h, h, h), YearMonth(1960, 1), YearMonth(1961, 5))
    wind = WindVector(*args.wind)
    regions = {
        "simulated": simulated_downwind(sca, wind, PlumeConfig(contour_threshold_fraction=args.threshold)),
        "triangle": triangle_downwind(sca, wind),
        "scaled_polygon": scaled_polygon_downwind(sca, wind),
    }
    probes = {f"{d} {k} km": Point(s * k * 1000, 0) for k in (1, 2, 4) for d, s in (("east", 1), ("west", -1))}
    for name, poly in regions.items():
        hits = [p for p, pt in probes.items() if point_in_polygon(pt, poly)]
        print(f"{name:15s} area {polygon_area(poly) / 1e6:6.2f} km2  contains: {', '.join(hits) or '-'}")
    if args.out:
        feats = [{"type": "Feature", "properties": {"method": k},
                  "geometry": {"type": "Polygon", "coordinates": v.to_coords()}} for k, v in regions.items()]
        io.write_geojson({"type": "FeatureCollection", "features": feats}, args.out)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
