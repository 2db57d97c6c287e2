"""Regenerate the bundled feeder files in ``src/gridvolt/data``.

IEEE 33-bus: Baran & Wu line and load data (12.66 kV, tie switches open).

IEEE 123-node: balanced positive-sequence equivalent of the IEEE 123 node
test feeder (4.16 kV).  Phase impedance matrices are reduced to
``mean(self) - mean(mutual)``; one- and two-phase laterals use the self
impedance; spot loads are summed over phases and treated as constant PQ;
closed switches and regulators become short low-impedance branches; the
open-switch islands (151, 251, 350, 451) and the 61-610 transformer are
dropped.  Node names are kept as bus ids.

Usage::

    python scripts/build_feeders.py
"""

from __future__ import annotations

import json
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "gridvolt" / "data"

# (from, to, r_ohm, x_ohm)
IEEE33_LINES = [
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941), (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400), (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210), (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784), (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006), (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
]

# bus: (kW, kVAr)
IEEE33_LOADS = {
    2: (100, 60), 3: (90, 40), 4: (120, 80), 5: (60, 30), 6: (60, 20),
    7: (200, 100), 8: (200, 100), 9: (60, 20), 10: (60, 20), 11: (45, 30),
    12: (60, 35), 13: (60, 35), 14: (120, 80), 15: (60, 10), 16: (60, 20),
    17: (60, 20), 18: (90, 40), 19: (90, 40), 20: (90, 40), 21: (90, 40),
    22: (90, 40), 23: (90, 50), 24: (420, 200), 25: (420, 200), 26: (60, 25),
    27: (60, 25), 28: (60, 20), 29: (120, 70), 30: (200, 600), 31: (150, 70),
    32: (210, 100), 33: (60, 40),
}

# Positive-sequence ohm/mile per IEEE 123 line configuration.
_THREE_PHASE_OH = (0.4619 - 0.15583, 1.06377 - 0.43673)
_TWO_PHASE_OH = (0.45955 - 0.1535, 1.07155 - 0.3849)
_ONE_PHASE_OH = (1.3292, 1.3475)
_UNDERGROUND = (1.52490 - 0.51067, 0.74013 - 0.25690)
IEEE123_CONFIG_Z = {
    1: _THREE_PHASE_OH, 2: _THREE_PHASE_OH, 3: _THREE_PHASE_OH,
    4: _THREE_PHASE_OH, 5: _THREE_PHASE_OH, 6: _THREE_PHASE_OH,
    7: _TWO_PHASE_OH, 8: _TWO_PHASE_OH,
    9: _ONE_PHASE_OH, 10: _ONE_PHASE_OH, 11: _ONE_PHASE_OH,
    12: _UNDERGROUND,
}

# (from, to, length_ft, config)
IEEE123_LINES = [
    (1, 2, 175, 10), (1, 3, 250, 11), (1, 7, 300, 1), (3, 4, 200, 11),
    (3, 5, 325, 11), (5, 6, 250, 11), (7, 8, 200, 1), (8, 12, 225, 10),
    (8, 9, 225, 9), (8, 13, 300, 1), (9, 14, 425, 9), (13, 34, 150, 11),
    (13, 18, 825, 2), (14, 11, 250, 9), (14, 10, 250, 9), (15, 16, 375, 11),
    (15, 17, 350, 11), (18, 19, 250, 9), (18, 21, 300, 2), (19, 20, 325, 9),
    (21, 22, 525, 10), (21, 23, 250, 2), (23, 24, 550, 11), (23, 25, 275, 2),
    (25, 26, 350, 7), (25, 28, 200, 2), (26, 27, 275, 7), (26, 31, 225, 11),
    (27, 33, 500, 9), (28, 29, 300, 2), (29, 30, 350, 2), (30, 250, 200, 2),
    (31, 32, 300, 11), (34, 15, 100, 11), (35, 36, 650, 8), (35, 40, 250, 1),
    (36, 37, 300, 9), (36, 38, 250, 10), (38, 39, 325, 10), (40, 41, 325, 11),
    (40, 42, 250, 1), (42, 43, 500, 10), (42, 44, 200, 1), (44, 45, 200, 9),
    (44, 47, 250, 1), (45, 46, 300, 9), (47, 48, 150, 4), (47, 49, 250, 4),
    (49, 50, 250, 4), (50, 51, 250, 4), (52, 53, 200, 1), (53, 54, 125, 1),
    (54, 55, 275, 1), (54, 57, 350, 3), (55, 56, 275, 1), (57, 58, 250, 10),
    (57, 60, 750, 3), (58, 59, 250, 10), (60, 61, 550, 5), (60, 62, 250, 12),
    (62, 63, 175, 12), (63, 64, 350, 12), (64, 65, 425, 12), (65, 66, 325, 12),
    (67, 68, 200, 9), (67, 72, 275, 3), (67, 97, 250, 3), (68, 69, 275, 9),
    (69, 70, 325, 9), (70, 71, 275, 9), (72, 73, 275, 11), (72, 76, 200, 3),
    (73, 74, 350, 11), (74, 75, 400, 11), (76, 77, 400, 6), (76, 86, 700, 3),
    (77, 78, 100, 6), (78, 79, 225, 6), (78, 80, 475, 6), (80, 81, 475, 6),
    (81, 82, 250, 6), (81, 84, 675, 11), (82, 83, 250, 6), (84, 85, 475, 11),
    (86, 87, 450, 6), (87, 88, 175, 9), (87, 89, 275, 6), (89, 90, 225, 10),
    (89, 91, 225, 6), (91, 92, 300, 11), (91, 93, 225, 6), (93, 94, 275, 9),
    (93, 95, 300, 6), (95, 96, 200, 10), (97, 98, 275, 3), (98, 99, 550, 3),
    (99, 100, 300, 3), (100, 450, 800, 3), (101, 102, 225, 11), (101, 105, 275, 3),
    (102, 103, 325, 11), (103, 104, 700, 11), (105, 106, 225, 10), (105, 108, 325, 3),
    (106, 107, 575, 10), (108, 109, 450, 9), (108, 300, 1000, 3), (109, 110, 300, 9),
    (110, 111, 575, 9), (110, 112, 125, 9), (112, 113, 525, 9), (113, 114, 325, 9),
    (135, 35, 375, 4), (149, 1, 400, 1), (152, 52, 400, 1), (160, 67, 350, 6),
    (197, 101, 250, 3),
]

# Closed switches and regulators, modeled as 10 ft of configuration 1.
IEEE123_SWITCHES = [(150, 149), (13, 152), (18, 135), (60, 160), (97, 197)]

# bus: total (kW, kVAr) over phases
IEEE123_LOADS = {
    1: (40, 20), 2: (20, 10), 4: (40, 20), 5: (20, 10), 6: (40, 20),
    7: (20, 10), 9: (40, 20), 10: (20, 10), 11: (40, 20), 12: (20, 10),
    16: (40, 20), 17: (20, 10), 19: (40, 20), 20: (40, 20), 22: (40, 20),
    24: (40, 20), 28: (40, 20), 29: (40, 20), 30: (40, 20), 31: (20, 10),
    32: (20, 10), 33: (40, 20), 34: (40, 20), 35: (40, 20), 37: (40, 20),
    38: (20, 10), 39: (20, 10), 41: (20, 10), 42: (20, 10), 43: (40, 20),
    45: (20, 10), 46: (20, 10), 47: (105, 75), 48: (210, 150), 49: (140, 95),
    50: (40, 20), 51: (20, 10), 52: (40, 20), 53: (40, 20), 55: (20, 10),
    56: (20, 10), 58: (20, 10), 59: (20, 10), 60: (20, 10), 62: (40, 20),
    63: (40, 20), 64: (75, 35), 65: (140, 100), 66: (75, 35), 68: (20, 10),
    69: (40, 20), 70: (20, 10), 71: (40, 20), 73: (40, 20), 74: (40, 20),
    75: (40, 20), 76: (245, 180), 77: (40, 20), 79: (40, 20), 80: (40, 20),
    82: (40, 20), 83: (20, 10), 84: (20, 10), 85: (40, 20), 86: (20, 10),
    87: (40, 20), 88: (40, 20), 90: (40, 20), 92: (40, 20), 94: (40, 20),
    95: (20, 10), 96: (20, 10), 98: (40, 20), 99: (40, 20), 100: (40, 20),
    102: (20, 10), 103: (40, 20), 104: (40, 20), 106: (40, 20), 107: (40, 20),
    109: (40, 20), 111: (20, 10), 112: (20, 10), 113: (40, 20), 114: (20, 10),
}

PV_RATING = {"p_rated_mw": 0.8, "s_mva": 0.84}
SVC_RANGE = {"q_min_mvar": -0.3, "q_max_mvar": 0.3}


def _document(base_kv, slack, bus_ids, branches, loads, pv_buses, svc_buses):
    return {
        "s_base_mva": 1.0,
        "base_kv": base_kv,
        "buses": [
            {"id": b, "kind": "slack" if b == slack else "pq", "v_min": 0.95, "v_max": 1.05}
            for b in bus_ids
        ],
        "branches": branches,
        "loads": [
            {"bus": b, "p_mw": round(p / 1000.0, 6), "q_mvar": round(q / 1000.0, 6)}
            for b, (p, q) in sorted(loads.items())
        ],
        "pvs": [{"bus": b, **PV_RATING} for b in pv_buses],
        "svcs": [{"bus": b, **SVC_RANGE} for b in svc_buses],
    }


def build_ieee33():
    z_base = 12.66**2 / 1.0
    branches = [
        {"from": f, "to": t, "r_pu": round(r / z_base, 10), "x_pu": round(x / z_base, 10)}
        for f, t, r, x in IEEE33_LINES
    ]
    return _document(
        12.66, 1, list(range(1, 34)), branches, IEEE33_LOADS,
        pv_buses=[14, 18, 22, 24, 29, 33], svc_buses=[7, 16, 31],
    )


def build_ieee123():
    z_base = 4.16**2 / 1.0
    branches = []
    for f, t in IEEE123_SWITCHES:
        r, x = IEEE123_CONFIG_Z[1]
        miles = 10 / 5280.0
        branches.append({"from": f, "to": t, "r_pu": round(r * miles / z_base, 10),
                         "x_pu": round(x * miles / z_base, 10)})
    for f, t, ft, cfg in IEEE123_LINES:
        r, x = IEEE123_CONFIG_Z[cfg]
        miles = ft / 5280.0
        branches.append({"from": f, "to": t, "r_pu": round(r * miles / z_base, 10),
                         "x_pu": round(x * miles / z_base, 10)})
    bus_ids = sorted({b for br in branches for b in (br["from"], br["to"])})
    return _document(
        4.16, 150, bus_ids, branches, IEEE123_LOADS,
        pv_buses=[4, 9, 24, 31, 56, 59, 63, 70, 75, 106],
        svc_buses=[7, 46, 50, 77, 92, 99, 109],
    )


def build_toy6():
    """Six-bus feeder with one SVC and one PV, small enough for grid search."""
    branches = [
        {"from": f, "to": t, "r_pu": 0.03, "x_pu": 0.05}
        for f, t in [(1, 2), (2, 3), (3, 4), (2, 5), (5, 6)]
    ]
    loads = {2: (100, 60), 3: (120, 80), 4: (200, 100), 5: (100, 50), 6: (150, 80)}
    doc = _document(12.66, 1, list(range(1, 7)), branches, loads,
                    pv_buses=[4], svc_buses=[6])
    return doc


def main():
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    for name, doc in [("ieee33", build_ieee33()), ("ieee123", build_ieee123()),
                      ("toy6", build_toy6())]:
        path = DATA_DIR / f"{name}.json"
        path.write_text(json.dumps(doc, indent=1) + "\n")
        print(f"wrote {path}: {len(doc['buses'])} buses, {len(doc['branches'])} branches")


if __name__ == "__main__":
    main()
