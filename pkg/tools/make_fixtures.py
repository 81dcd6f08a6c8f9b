#!/usr/bin/env python3
"""Generate the shipped fixture files (registry, telemetry logs, replay data).

Run from the repository root:

    python3 tools/make_fixtures.py

Deliberately does NOT import the e3p package: expected replay values are
computed here with standalone text processing, so they stay an independent
oracle for the pipeline. Regenerating is deterministic (fixed RNG seed).
"""

from __future__ import annotations

import json
import random
import re
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

sys.path.insert(0, str(ROOT / "tests"))
import golden  # noqa: E402  (frozen reference tables)

SEED = 20250809

TX2_RAILS = ("VDD_SYS_GPU", "VDD_SYS_CPU", "VDD_SYS_SOC", "VDD_SYS_DDR")
TX2_SELECTION = "sum:" + "+".join(TX2_RAILS)

CATALOG_TAGS = {
    "EfficientViT-B1": "compact",
    "TinyViT-5M_Distilled": "compact;distilled",
    "TinyViT-5M": "compact",
    "LeViT_192": "hybrid",
    "LeViT_Conv_192": "hybrid",
    "TinyViT-11M_Distilled": "compact;distilled",
    "TinyViT-11M": "compact",
    "PoolFormerV2-S24": "hybrid",
    "TinyViT-21M_Distilled": "compact;distilled",
    "TinyViT-21M": "compact",
    "DeiT-Small_Distilled": "distilled",
    "ViT_S (Baseline)": "baseline",
    "DeiT-Small": "",
}

VIOLATORS = [
    # name, params_m, macs_g, acc_pct, tags -- each trips one threshold
    ("BigNet-99", 45.0, 4.0, 85.0, "synthetic"),
    ("HeavyMac-7", 10.0, 9.9, 83.0, "synthetic"),
    ("LowAcc-3", 5.0, 1.0, 72.5, "synthetic"),
]


def write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path.relative_to(ROOT)}")


def make_registry_fixtures() -> None:
    header = "name,params_m,macs_g,top1_acc_pct,tags\n"
    rows = [
        f"{name},{params},{macs},{acc},{CATALOG_TAGS[name]}\n"
        for name, params, macs, acc, _ in golden.CATALOG
    ]
    write(FIXTURES / "registry" / "table1.csv", header + "".join(rows))

    records = []
    for name, params, macs, acc, _ in golden.CATALOG:
        rec = {"name": name, "params_m": params, "macs_g": macs,
               "top1_acc_pct": acc}
        tags = [t for t in CATALOG_TAGS[name].split(";") if t]
        if tags:
            rec["tags"] = tags
        records.append(rec)
    write(FIXTURES / "registry" / "table1.json",
          json.dumps(records, indent=2) + "\n")

    extra = [f"{n},{p},{m},{a},{t}\n" for n, p, m, a, t in VIOLATORS]
    write(FIXTURES / "registry" / "table1_with_violators.csv",
          header + "".join(rows) + "".join(extra))


def make_measured_fixtures() -> None:
    for (device, dataset), table in golden.MEASUREMENT_SETS.items():
        doc = {
            "schema": "e3p-rows/1",
            "device_label": device,
            "dataset_label": dataset,
            "rows": [
                {"model_name": name, "acc_pct": acc, "time_s": time_s,
                 "avg_power_mw": power, "energy_j": energy}
                for name, acc, time_s, power, energy, _, _ in table
            ],
        }
        fname = f"{device.replace('-', '')}_{dataset.split('-')[0]}.json"
        write(FIXTURES / "measured" / fname, json.dumps(doc, indent=2) + "\n")


def tegrastats_line(rng: random.Random, rails: dict[str, int],
                    averages: dict[str, float], n: int) -> str:
    """One realistic TX2 tegrastats line; only VDD_ tokens carry power."""
    for rail, value in rails.items():
        averages[rail] = averages.get(rail, 0.0) + (value - averages.get(rail, 0.0)) / n
    cpu = ",".join(
        f"{rng.randint(5, 60)}%@{rng.choice([345, 1113, 2035])}"
        if rng.random() > 0.2 else "off"
        for _ in range(6))
    parts = [
        f"RAM {rng.randint(1800, 3400)}/7860MB (lfb {rng.randint(400, 1200)}x4MB)",
        "SWAP 0/3930MB (cached 0MB)",
        f"CPU [{cpu}]",
        f"EMC_FREQ {rng.randint(2, 35)}%@1600",
        f"GR3D_FREQ {rng.randint(0, 99)}%@1122",
        "PLL@41C MCPU@41.5C PMIC@100C",
        f"Tboard@{rng.randint(30, 42)}C GPU@{rng.randint(33, 47)}C",
        "BCPU@41.5C thermal@40.94C",
        f"VDD_SYS_GPU {rails['VDD_SYS_GPU']}/{round(averages['VDD_SYS_GPU'])}",
        f"VDD_SYS_SOC {rails['VDD_SYS_SOC']}/{round(averages['VDD_SYS_SOC'])}",
        "VDD_4V0_WIFI 0/0",
        f"VDD_IN {rails['VDD_IN']}/{round(averages['VDD_IN'])}",
        f"VDD_SYS_CPU {rails['VDD_SYS_CPU']}/{round(averages['VDD_SYS_CPU'])}",
        f"VDD_SYS_DDR {rails['VDD_SYS_DDR']}/{round(averages['VDD_SYS_DDR'])}",
    ]
    return " ".join(parts)


def make_tx2_log() -> list[str]:
    rng = random.Random(SEED)
    lines = []
    averages: dict[str, float] = {}
    for i in range(120):
        busy = 5 <= i < 115  # workload active between ticks 5 and 114
        if busy:
            rails = {
                "VDD_SYS_GPU": rng.randint(1800, 3400),
                "VDD_SYS_CPU": rng.randint(600, 1800),
                "VDD_SYS_SOC": rng.randint(550, 900),
                "VDD_SYS_DDR": rng.randint(700, 1600),
            }
        else:
            rails = {
                "VDD_SYS_GPU": rng.randint(140, 190),
                "VDD_SYS_CPU": rng.randint(250, 420),
                "VDD_SYS_SOC": rng.randint(370, 430),
                "VDD_SYS_DDR": rng.randint(300, 380),
            }
        rails["VDD_IN"] = sum(rails.values()) + rng.randint(350, 600)
        lines.append(tegrastats_line(rng, rails, averages, i + 1))
    return lines


def make_rtx_log() -> list[str]:
    rng = random.Random(SEED + 1)
    values = []
    for _ in range(59):  # symmetric pairs around 19.745 W
        v = round(rng.uniform(14.5, 24.99), 2)
        values.extend([v, round(39.49 - v, 2)])
    rng.shuffle(values)
    rows = ["power.draw [W]"]
    rows += [f"{v:.2f} W" for v in values[:40]]
    rows.append("N/A")
    rows += [f"{v:.2f} W" for v in values[40:80]]
    rows.append("N/A")
    rows += [f"{v:.2f} W" for v in values[80:]]
    return rows


def make_constant_logs() -> None:
    # normalized CSV: 10 s of exactly 2000 mW on one rail, 500 ms cadence
    rows = ["t_ms,rail,mw"]
    for k in range(21):
        rows.append(f"{float(k * 500)!r},GPU,2000.0")
    write(FIXTURES / "telemetry" / "constant_2000mw.csv",
          "\n".join(rows) + "\n")

    # tegrastats-style constant log for paced live-replay tests
    line = ("RAM 2100/7860MB (lfb 900x4MB) CPU [10%@1113,off,off,10%@1113,"
            "10%@1113,10%@1113] GR3D_FREQ 50%@1122 VDD_SYS_GPU 2000/2000 "
            "VDD_SYS_SOC 400/400 VDD_IN 3200/3200 VDD_SYS_CPU 500/500 "
            "VDD_SYS_DDR 300/300")
    write(FIXTURES / "telemetry" / "constant_2000mw_tegrastats.log",
          "\n".join([line] * 200) + "\n")


# --- independent replay oracle (plain text processing, no e3p imports) ------

_RAIL_RE = re.compile(r"(VDD_[A-Z0-9_]+) (\d+)/(\d+)")


def oracle_selected_power(lines: list[str], rails) -> list[float]:
    """Per-line sum of the selected rails' CURRENT values, in mW."""
    out = []
    for line in lines:
        found = {m.group(1): float(m.group(2)) for m in _RAIL_RE.finditer(line)}
        out.append(sum(found[r] for r in rails))
    return out


def oracle_window_energy(lines: list[str], rails, interval_ms: int,
                         t_start_ms: float, t_end_ms: float) -> dict:
    powers = oracle_selected_power(lines, rails)
    in_window = [p for k, p in enumerate(powers)
                 if t_start_ms <= k * interval_ms <= t_end_ms]
    avg = sum(in_window) / len(in_window)
    time_s = (t_end_ms - t_start_ms) / 1000.0
    return {"time_s": time_s, "avg_power_mw": avg,
            "energy_j": avg / 1000.0 * time_s}


def make_replay_fixture(tx2_lines: list[str]) -> None:
    interval_ms = 1000
    windows = [
        {"t_start_ms": 10000.0, "t_end_ms": 40000.0, "reported_acc_pct": 79.10},
        {"t_start_ms": 45000.0, "t_end_ms": 75000.0, "reported_acc_pct": 79.10},
        {"t_start_ms": 80000.0, "t_end_ms": 110000.0, "reported_acc_pct": 79.10},
    ]
    doc = {
        "schema": "e3p-windows/1",
        "window_mode": "handshake",
        "trials": windows,
    }
    write(FIXTURES / "replay" / "tx2_windows.json",
          json.dumps(doc, indent=2) + "\n")

    expected_trials = [
        oracle_window_energy(tx2_lines, TX2_RAILS, interval_ms,
                             w["t_start_ms"], w["t_end_ms"])
        for w in windows
    ]
    expected = {
        "rail_selection": TX2_SELECTION,
        "sample_interval_ms": interval_ms,
        "trials": expected_trials,
        "mean_time_s": sum(t["time_s"] for t in expected_trials) / 3,
        "mean_power_mw": sum(t["avg_power_mw"] for t in expected_trials) / 3,
        "mean_energy_j": sum(t["energy_j"] for t in expected_trials) / 3,
    }
    write(FIXTURES / "replay" / "tx2_expected.json",
          json.dumps(expected, indent=2) + "\n")


def main() -> None:
    make_registry_fixtures()
    make_measured_fixtures()

    tx2_lines = make_tx2_log()
    write(FIXTURES / "telemetry" / "tx2_tegrastats.log",
          "\n".join(tx2_lines) + "\n")

    rtx_rows = make_rtx_log()
    write(FIXTURES / "telemetry" / "rtx_nvidia_smi.log",
          "\n".join(rtx_rows) + "\n")
    numeric = [float(r.split()[0]) * 1000 for r in rtx_rows
               if r.endswith(" W") and not r.startswith("power")]
    print(f"  rtx log: {len(numeric)} numeric rows, "
          f"mean {sum(numeric) / len(numeric):.2f} mW")

    make_constant_logs()
    make_replay_fixture(tx2_lines)


if __name__ == "__main__":
    main()
