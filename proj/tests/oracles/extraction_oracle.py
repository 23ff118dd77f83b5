#!/usr/bin/env python3
"""Independent event count for a canonical trajectory CSV.

Rules: a follower sample qualifies when its preceding vehicle exists, has a
sample at the same time, sits within 2 m laterally and leaves a positive gap
(leader front - leader length - follower front). Consecutive qualifying
samples with an unchanged leader form a span; spans of at least 15 s count.
Kinematic consistency and the low-speed filter are not modelled (fixtures
are noise-free and fast).
"""
import csv
import sys
from collections import defaultdict


def count_events(path, min_duration=15.0, max_lateral=2.0):
    tracks = defaultdict(dict)
    dts = {}
    with open(path) as f:
        for r in csv.DictReader(f):
            key = (r["dataset_id"], int(r["vehicle_id"]))
            t = round(float(r["time_s"]) * 1000)
            tracks[key][t] = r
    for key, samples in tracks.items():
        times = sorted(samples)
        dts[key] = (times[1] - times[0]) if len(times) > 1 else None

    events = 0
    for (ds, vid), samples in sorted(tracks.items()):
        run_leader, run_len, prev_t = None, 0, None
        spans = []
        for t in sorted(samples):
            r = samples[t]
            ok, lid = False, None
            if r["preceding_vehicle_id"]:
                lid = int(r["preceding_vehicle_id"])
                lv = tracks.get((ds, lid), {}).get(t)
                if lv is not None:
                    lat = abs(float(lv["lateral_pos_m"]) - float(r["lateral_pos_m"]))
                    gap = (float(lv["longitudinal_pos_m"]) - float(lv["vehicle_length_m"])
                           - float(r["longitudinal_pos_m"]))
                    ok = lat <= max_lateral and gap > 0
            contiguous = prev_t is not None and t - prev_t == dts[(ds, vid)]
            if ok and run_len and lid == run_leader and contiguous:
                run_len += 1
            else:
                if run_len:
                    spans.append(run_len)
                run_leader, run_len = (lid, 1) if ok else (None, 0)
            prev_t = t
        if run_len:
            spans.append(run_len)
        dt = dts[(ds, vid)] / 1000.0
        events += sum(1 for n in spans if (n - 1) * dt >= min_duration - 1e-9)
    return events


if __name__ == "__main__":
    for p in sys.argv[1:]:
        print(p, count_events(p))
