"""Regenerate the bundled IEEE test-case files in src/gridbp/data/.

The five benchmark grids (IEEE 14, 30, 57, 118 and 300 bus) are written as
IEEE Common Data Format text so that gridbp.grid_model.import_cdf is the only
loader the package needs.  Source tables come from the PYPOWER distribution
(pip install PYPOWER), which carries the standard MATPOWER conversions of the
original test-case files.  PYPOWER is a tooling dependency only; the generated
files are committed and the package never imports it.

The 30-bus table ships with flat-start angles, so for that case the bus angles
are filled in by a DC power-flow solve from the case's own generation and load
columns.  All other cases keep their solved angles.

Usage: python tools/make_case_data.py [output_dir]
"""

import sys
from datetime import date
from pathlib import Path

import numpy as np


def _dc_angles(bus, branch, gen, base_mva):
    """Solve B*theta = P for bus angles (radians), slack at the type-3 bus."""
    ids = [int(b[0]) for b in bus]
    idx = {bid: i for i, bid in enumerate(ids)}
    n = len(ids)
    B = np.zeros((n, n))
    for row in branch:
        i, j = idx[int(row[0])], idx[int(row[1])]
        b = 1.0 / row[3]
        B[i, i] += b
        B[j, j] += b
        B[i, j] -= b
        B[j, i] -= b
    p = np.zeros(n)
    for row in bus:
        p[idx[int(row[0])]] -= row[2] / base_mva
    for row in gen:
        p[idx[int(row[0])]] += row[1] / base_mva
    p -= p.mean()  # balance losses so the reduced system is consistent
    slack = idx[int(bus[bus[:, 1] == 3][0, 0])]
    keep = [i for i in range(n) if i != slack]
    theta = np.zeros(n)
    theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], p[keep])
    return theta


def _bus_record(bid, name, btype, v, ang_deg, pd, qd, pg, qg, base_kv):
    return (
        f"{bid:4d} {name:<12.12s} {1:2d}{1:3d} {btype:2d} "
        f"{v:6.3f}{ang_deg:7.2f}{pd:9.2f}{qd:10.2f}{pg:8.2f}{qg:8.2f} "
        f"{base_kv:7.2f} {v:6.3f}{0.0:8.2f}{0.0:8.2f}{0.0:8.2f}{0.0:8.2f} {0:4d}"
    )


def _branch_record(f, t, circuit, btype, r, x, b, ratio):
    return (
        f"{f:4d} {t:4d} {1:2d}{1:3d} {circuit:1d} {btype:1d}"
        f"{r:10.6f}{x:11.6f}{b:10.6f}{0:5d} {0:5d} {0:5d} {0:4d} {0:1d}  "
        f"{ratio:6.3f} {0.0:7.2f}"
    )


def write_cdf(ppc, case_id, path):
    base_mva = float(ppc["baseMVA"])
    bus, branch, gen = ppc["bus"], ppc["branch"], ppc["gen"]

    ang_deg = {int(b[0]): b[8] for b in bus}
    if max(abs(a) for a in ang_deg.values()) == 0.0:
        theta = _dc_angles(bus, branch, gen, base_mva)
        ang_deg = {
            int(b[0]): np.degrees(theta[i]) for i, b in enumerate(bus)
        }

    pg = {}
    qg = {}
    for row in gen:
        bid = int(row[0])
        pg[bid] = pg.get(bid, 0.0) + row[1]
        qg[bid] = qg.get(bid, 0.0) + row[2]

    today = date.today().strftime("%m/%d/%y")
    lines = [
        f" {today} GRIDBP DATA TOOL     {base_mva:6.1f} {date.today().year:4d} S {case_id}"
    ]

    lines.append(f"BUS DATA FOLLOWS{len(bus):28d} ITEMS")
    type_map = {1: 0, 2: 2, 3: 3}
    for row in bus:
        bid = int(row[0])
        lines.append(
            _bus_record(
                bid,
                f"BUS {bid}",
                type_map.get(int(row[1]), 0),
                row[7],
                ang_deg[bid],
                row[2],
                row[3],
                pg.get(bid, 0.0),
                qg.get(bid, 0.0),
                row[9],
            )
        )
    lines.append("-999")

    lines.append(f"BRANCH DATA FOLLOWS{len(branch):25d} ITEMS")
    circuit_count = {}
    for row in branch:
        f, t = int(row[0]), int(row[1])
        key = (min(f, t), max(f, t))
        circuit_count[key] = circuit_count.get(key, 0) + 1
        ratio = row[8]
        lines.append(
            _branch_record(
                f, t, circuit_count[key], 0 if ratio == 0.0 else 1,
                row[2], row[3], row[4], ratio,
            )
        )
    lines.append("-999")

    lines.append("LOSS ZONES FOLLOWS                     1 ITEMS")
    lines.append("  1 GRIDBP")
    lines.append("-99")
    lines.append("INTERCHANGE DATA FOLLOWS                 1 ITEMS")
    lines.append("-9")
    lines.append("TIE LINES FOLLOWS                     0 ITEMS")
    lines.append("-999")
    lines.append("END OF DATA")

    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path} ({len(bus)} buses, {len(branch)} branch records)")


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "src" / "gridbp" / "data"
    )
    out.mkdir(parents=True, exist_ok=True)
    from pypower import case14, case30, case57, case118, case300

    cases = {
        "ieee14": (case14.case14, "IEEE 14 BUS TEST CASE"),
        "ieee30": (case30.case30, "30 BUS TEST CASE"),
        "ieee57": (case57.case57, "IEEE 57 BUS TEST CASE"),
        "ieee118": (case118.case118, "IEEE 118 BUS TEST CASE"),
        "ieee300": (case300.case300, "IEEE 300 BUS TEST CASE"),
    }
    for name, (fn, case_id) in cases.items():
        write_cdf(fn(), case_id, out / f"{name}.cdf")


if __name__ == "__main__":
    main()
