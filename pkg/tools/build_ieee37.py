"""Build the single-phase balanced equivalent of the IEEE 37-node feeder.

Construction:
  * line impedances: positive-sequence value of each phase-impedance
    configuration, z1 = mean(self) - mean(mutual), times segment length;
  * the 709-775 transformer (XFM-1, 500 kVA, R = 0.09 %, X = 1.81 %) is kept
    as a plain series impedance;
  * spot loads: the sum of the three per-phase kW/kvar values, spread
    evenly (balanced);
  * voltage regulator, capacitor-free by construction; the substation
    (node 799) is the slack bus;
  * bus numbering: 799 -> 0, remaining node names in ascending order -> 1..36;
  * 21 PV inverters at buses 4, 7, 9, 10, 11, 13, 16, 17, 20, 22, 23, 26,
    28, 29, 30, 31, 32, 33, 34, 35, 36 of that numbering.

Run ``python tools/build_ieee37.py`` to regenerate
``src/netdroop/data/ieee37.json``.
"""

from __future__ import annotations

import json
from pathlib import Path

S_BASE_KVA = 10000.0
V_BASE_KV = 4.8
V_SLACK = 1.0
PV_RATING_KVA = 250.0

# ohm / mile, upper triangle (aa, ab, ac, bb, bc, cc)
CONFIGS = {
    721: [0.2926 + 0.1973j, 0.0673 - 0.0368j, 0.0337 - 0.0417j, 0.2646 + 0.1900j, 0.0673 - 0.0368j, 0.2926 + 0.1973j],
    722: [0.4751 + 0.2973j, 0.1629 - 0.0326j, 0.1234 - 0.0607j, 0.4488 + 0.2678j, 0.1629 - 0.0326j, 0.4751 + 0.2973j],
    723: [1.2936 + 0.6713j, 0.4871 + 0.2111j, 0.4585 + 0.1521j, 1.3022 + 0.6326j, 0.4871 + 0.2111j, 1.2936 + 0.6713j],
    724: [2.0952 + 0.7758j, 0.5204 + 0.2738j, 0.4926 + 0.2123j, 2.1068 + 0.7398j, 0.5204 + 0.2738j, 2.0952 + 0.7758j],
}

SEGMENTS = [
    (701, 702, 960, 722), (702, 705, 400, 724), (702, 713, 360, 723), (702, 703, 1320, 722),
    (703, 727, 240, 724), (703, 730, 600, 723), (704, 714, 80, 724), (704, 720, 800, 723),
    (705, 742, 320, 724), (705, 712, 240, 724), (706, 725, 280, 724), (707, 724, 760, 724),
    (707, 722, 120, 724), (708, 733, 320, 723), (708, 732, 320, 724), (709, 731, 600, 723),
    (709, 708, 320, 723), (710, 735, 200, 724), (710, 736, 1280, 724), (711, 741, 400, 723),
    (711, 740, 200, 724), (713, 704, 520, 723), (714, 718, 520, 724), (720, 707, 920, 724),
    (720, 706, 600, 723), (727, 744, 280, 723), (730, 709, 200, 723), (733, 734, 560, 723),
    (734, 737, 640, 723), (734, 710, 520, 724), (737, 738, 400, 723), (738, 711, 400, 723),
    (744, 728, 200, 724), (744, 729, 280, 724), (799, 701, 1850, 721),
]
XFM = (709, 775, 0.0009, 0.0181, 500.0)

# kW, kvar summed over phases
LOADS = {
    701: (630, 315), 712: (85, 40), 713: (85, 40), 714: (38, 18), 718: (85, 40),
    720: (85, 40), 722: (161, 80), 724: (42, 21), 725: (42, 21), 727: (42, 21),
    728: (126, 63), 729: (42, 21), 730: (85, 40), 731: (85, 40), 732: (42, 21),
    733: (85, 40), 734: (42, 21), 735: (85, 40), 736: (42, 21), 737: (140, 70),
    738: (126, 62), 740: (85, 40), 741: (42, 21), 742: (93, 44), 744: (42, 21),
}

PV_BUSES = [4, 7, 9, 10, 11, 13, 16, 17, 20, 22, 23, 26, 28, 29, 30, 31, 32, 33, 34, 35, 36]


def positive_sequence(cfg: int) -> complex:
    aa, ab, ac, bb, bc, cc = CONFIGS[cfg]
    return (aa + bb + cc) / 3 - (ab + ac + bc) / 3


def build() -> dict:
    names = sorted({a for a, *_ in SEGMENTS} | {b for _, b, *_ in SEGMENTS} | {XFM[1]})
    names.remove(799)
    index = {799: 0, **{nm: i + 1 for i, nm in enumerate(names)}}
    z_base = V_BASE_KV**2 / (S_BASE_KVA / 1000.0)
    lines = []
    for a, b, ft, cfg in SEGMENTS:
        z = positive_sequence(cfg) * ft / 5280.0 / z_base
        lines.append({"from": index[a], "to": index[b], "r_pu": round(z.real, 10), "x_pu": round(z.imag, 10)})
    a, b, r, x, kva = XFM
    lines.append({"from": index[a], "to": index[b], "r_pu": r * S_BASE_KVA / kva, "x_pu": x * S_BASE_KVA / kva})
    buses = []
    for nm, idx in sorted(index.items(), key=lambda t: t[1]):
        entry: dict = {"index": idx, "name": str(nm)}
        if nm in LOADS:
            p, q = LOADS[nm]
            entry["load"] = {"p_kw": p, "q_kvar": q}
        if idx in PV_BUSES:
            entry["inverter"] = {"s_rating_kva": PV_RATING_KVA}
        buses.append(entry)
    return {
        "name": "ieee37-balanced",
        "s_base_kva": S_BASE_KVA,
        "v_base_kv": V_BASE_KV,
        "v_slack_pu": V_SLACK,
        "buses": buses,
        "lines": lines,
    }


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "netdroop" / "data" / "ieee37.json"
    out.write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {out}")
