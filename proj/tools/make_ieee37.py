#!/usr/bin/env python3
"""Writes data/feeders/ieee37_balanced.feeder.

Balanced positive-sequence reduction of the IEEE 37-node test feeder:

* topology and segment lengths follow the published line-segment table;
* each underground cable configuration is reduced to its positive-sequence
  impedance (self minus mean mutual term of the phase impedance matrix);
* spot loads are summed over phases;
* the substation transformer is kept as a branch from an ideal source bus;
* the regulator is replaced by a fixed source voltage (SOURCE_PU);
* 709-775 (the in-line transformer) becomes a short low-impedance branch;
* one inverter per load bus, rated (1 + oversize) * penetration * p_load.

All values are per unit on V_BASE_KV / S_BASE_MVA. --scale multiplies the
line impedances (not the transformer) for sensitivity studies.
"""

import argparse
import pathlib

V_BASE_KV = 4.8
S_BASE_MVA = 2.5
IMPEDANCE_SCALE = 1.0
SOURCE_PU = 1.05
PENETRATION = 0.5
OVERSIZE = 0.10

# Positive-sequence ohms per mile.
CONFIG_Z = {
    "721": (0.2414, 0.2341),
    "722": (0.3125, 0.3299),
    "723": (0.8066, 0.4600),
    "724": (1.5747, 0.5020),
    "XFM": (0.0500, 0.1500),  # ohms total, not per mile
}

# Substation transformer 230/4.8 kV, 2500 kVA, 2% + j8% on its own rating.
SUBSTATION = ("SourceBus", "799", 0.02, 0.08)

SEGMENTS = [
    ("799", "701", 1850, "721"),
    ("701", "702", 960, "722"),
    ("702", "705", 400, "724"),
    ("702", "713", 360, "723"),
    ("702", "703", 1320, "722"),
    ("703", "727", 240, "724"),
    ("703", "730", 600, "723"),
    ("704", "714", 80, "724"),
    ("704", "720", 800, "723"),
    ("705", "742", 320, "724"),
    ("705", "712", 240, "724"),
    ("706", "725", 280, "724"),
    ("707", "724", 760, "724"),
    ("707", "722", 120, "724"),
    ("708", "733", 320, "723"),
    ("708", "732", 320, "724"),
    ("709", "731", 600, "723"),
    ("709", "708", 320, "723"),
    ("710", "735", 200, "724"),
    ("710", "736", 1280, "724"),
    ("711", "741", 400, "723"),
    ("711", "740", 200, "724"),
    ("713", "704", 520, "723"),
    ("714", "718", 520, "724"),
    ("720", "707", 920, "724"),
    ("720", "706", 600, "723"),
    ("727", "744", 280, "723"),
    ("730", "709", 200, "723"),
    ("733", "734", 560, "723"),
    ("734", "737", 640, "723"),
    ("734", "710", 520, "724"),
    ("737", "738", 400, "723"),
    ("738", "711", 400, "723"),
    ("744", "728", 200, "724"),
    ("744", "729", 280, "724"),
    ("709", "775", 0, "XFM"),
]

# Spot loads summed over phases: kW, kvar.
LOADS = {
    "701": (630, 315), "712": (85, 40), "713": (85, 40), "714": (38, 18),
    "718": (85, 40), "720": (85, 40), "722": (161, 80), "724": (42, 21),
    "725": (42, 21), "727": (42, 21), "728": (126, 63), "729": (42, 21),
    "730": (85, 40), "731": (85, 40), "732": (42, 21), "733": (85, 40),
    "734": (42, 21), "735": (85, 40), "736": (42, 21), "737": (140, 70),
    "738": (126, 62), "740": (85, 40), "741": (42, 21), "742": (93, 44),
    "744": (42, 21),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent
                                         / "data" / "feeders" / "ieee37_balanced.feeder"))
    ap.add_argument("--scale", type=float, default=IMPEDANCE_SCALE)
    args = ap.parse_args()

    z_base = V_BASE_KV ** 2 / S_BASE_MVA
    src, sub_to, sub_r, sub_x = SUBSTATION
    buses = [src, "799"]
    for a, b, _, _ in SEGMENTS:
        for n in (a, b):
            if n not in buses:
                buses.append(n)

    out = []
    out.append("# IEEE 37-node feeder, balanced positive-sequence reduction.")
    out.append(f"# Base {V_BASE_KV} kV, {S_BASE_MVA} MVA; line impedances scaled x{args.scale:g}.")
    out.append("# Generated by tools/make_ieee37.py; edit that script, not this file.")
    out.append("")
    out.append("[slack]")
    out.append(f"{src} {SOURCE_PU:g}")
    out.append("")
    out.append("[bus]")
    out.append("# id  p_load  q_load")
    for n in buses:
        p, q = LOADS.get(n, (0, 0))
        out.append(f"{n} {p / 1000 / S_BASE_MVA:.6f} {q / 1000 / S_BASE_MVA:.6f}")
    out.append("")
    out.append("[line]")
    out.append("# from  to  r  x")
    zs = S_BASE_MVA / 2.5  # transformer percent impedance is on its 2.5 MVA rating
    out.append(f"{src} {sub_to} {sub_r * zs:.8f} {sub_x * zs:.8f}")
    for a, b, ft, cfg in SEGMENTS:
        r, x = CONFIG_Z[cfg]
        miles = 1.0 if cfg == "XFM" else ft / 5280.0
        out.append(f"{a} {b} {args.scale * r * miles / z_base:.8f} {args.scale * x * miles / z_base:.8f}")
    out.append("")
    out.append("[inverter]")
    out.append("# bus  capacity")
    for n in buses:
        if n in LOADS:
            cap = (1 + OVERSIZE) * PENETRATION * LOADS[n][0] / 1000 / S_BASE_MVA
            out.append(f"{n} {cap:.6f}")
    pathlib.Path(args.out).write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
