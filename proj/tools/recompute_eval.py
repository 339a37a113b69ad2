#!/usr/bin/env python3
"""Recompute an shfe/1 evaluation report from the fused artifacts and compare.

Usage: recompute_eval.py --fused DIR --truth FILE --report FILE [--golden FILE]

Exits 0 when every metric in the report matches the recomputation (floats
within --tol), 1 otherwise, printing the differing paths.
"""

import argparse
import bisect
import collections
import json
import math
import sys
from pathlib import Path

ACTIVITIES = {
    "standing", "walking", "sitting", "lying", "sleeping", "eating", "drinking",
    "cooking", "cleaning", "reading", "watching_tv", "exercising", "idle",
}
EMOTIONS = {"neutral", "happy", "sad", "angry", "fearful", "surprised", "disgusted", "tired", "excited"}
TRUTH_PERIOD_NS = 100_000_000
MS = 1_000_000


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def read_json(path):
    with open(path) as f:
        return json.load(f)


def truth_at(truth, t):
    i = (t + MS) // TRUTH_PERIOD_NS
    return truth[min(max(i, 0), len(truth) - 1)]


def alignment(fused, streams, primary_device):
    edges_ms = [0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000]
    edges = [e * MS for e in edges_ms]
    rows = read_jsonl(fused / "aligned.jsonl")
    n = len(streams)
    filled = [0] * n
    hist = [[0] * (len(edges) + 1) for _ in range(n)]
    for row in rows:
        for s, slot in enumerate(row["slots"]):
            if slot is None:
                continue
            filled[s] += 1
            hist[s][bisect.bisect_left(edges, abs(row["ts"] - slot[3]))] += 1
    samples = sum(s["samples"] for s in streams)
    p = next(i for i, st in enumerate(streams) if st["device_id"] == primary_device)
    synthetic = sum(1 for row in rows if row["slots"][p] is None)
    return {
        "primary_device": primary_device,
        "duplicate_primary": streams[p]["samples"] - (len(rows) - synthetic),
        "synthetic_ticks": synthetic,
        "records": len(rows),
        "input_samples": samples,
        "size_ratio": len(rows) / samples if samples else 0.0,
        "staleness_bin_edges_ms": [float(e) for e in edges_ms],
        "streams": [
            {
                "device_id": st["device_id"],
                "modality": st["modality"],
                "filled": filled[s],
                "records": len(rows),
                "input_samples": st["samples"],
                "fill_rate": filled[s] / len(rows),
                "staleness_histogram": hist[s],
            }
            for s, st in enumerate(streams)
        ],
    }


def label_scores(truth, labels, base, pick, allowed):
    centers = [w["start"] + (w["end"] - w["start"]) // 2 for w in labels]
    frames = correct = 0
    confusion = collections.defaultdict(collections.Counter)
    for tick in truth:
        if not tick["present"] or not labels:
            continue
        t = base + tick["t"]
        hi = bisect.bisect_left(centers, t)
        if hi == 0:
            w = 0
        elif hi == len(centers):
            w = len(centers) - 1
        else:
            w = hi - 1 if t - centers[hi - 1] <= centers[hi] - t else hi
        want = tick[pick]
        if want not in allowed:
            continue
        got = labels[w][pick]["label"]
        frames += 1
        correct += got == want
        confusion[want][got] += 1
    return {
        "frames": frames,
        "correct": correct,
        "accuracy": correct / frames if frames else 0.0,
        "confusion": {k: dict(v) for k, v in confusion.items()},
    }


def recompute(fused, truth_path, golden=None):
    fused = Path(fused)
    manifest = read_json(fused / "manifest.json")
    streams_doc = read_json(fused / "streams.json")
    base = streams_doc["home"]["reference_base_ns"]
    truth = []
    for line in read_jsonl(truth_path):
        rs = line["residents"]
        first = rs[0] if rs else {"present": False, "activity": "", "emotion": ""}
        truth.append({
            "t": line["t"],
            "anyone": any(r["present"] for r in rs),
            "present": first["present"],
            "activity": first["activity"],
            "emotion": first["emotion"],
        })

    level1 = read_jsonl(fused / "level1.jsonl")
    dropped = absent = true_drops = 0
    for rec in level1:
        d = not rec["kept"]
        a = not truth_at(truth, rec["ts"] - base)["anyone"]
        dropped += d
        absent += a
        true_drops += d and a
    n = len(level1)
    filt = {
        "records": n,
        "dropped": dropped,
        "truly_absent": absent,
        "true_drops": true_drops,
        "dropped_fraction": dropped / n if n else 0.0,
        "absent_fraction": absent / n if n else 0.0,
        "precision": true_drops / dropped if dropped else 1.0,
        "recall": true_drops / absent if absent else 1.0,
    }

    labels_path = fused / "labels.jsonl"
    labels = read_jsonl(labels_path) if labels_path.exists() else []
    commands_path = fused / "commands.jsonl"
    commands = read_jsonl(commands_path) if commands_path.exists() else []

    def key(c):
        return f'{c["issue_ts"]} {c["device"]} {c["action"]} {c["cause"]}'

    golden_doc = None
    if golden is not None:
        have = collections.Counter(key(c) for c in commands)
        want = collections.Counter(key(c) for c in read_jsonl(golden))
        missing = sorted((want - have).elements())
        extra = sorted((have - want).elements())
        golden_doc = {"match": not missing and not extra, "missing": missing, "extra": extra}

    align = alignment(fused, streams_doc["streams"], streams_doc["primary_device"])
    kept = n - dropped
    counters = {
        "input_samples": align["input_samples"],
        "aligned_records": align["records"],
        "kept_records": kept,
        "dropped_records": dropped,
        "windows": len(labels),
        "commands": len(commands),
        "log_records": manifest["log"]["records"],
        "log_undecodable": manifest["log"]["undecodable"],
    }
    collector_path = fused / "collector_counters.json"
    if collector_path.exists():
        for k, v in read_json(collector_path).items():
            if isinstance(v, int) and not isinstance(v, bool) and v >= 0:
                counters["collector_" + k] = v

    def ratio(a, b):
        return a / b if b else 0.0

    return {
        "schema": "shfe/1",
        "run_id": manifest["run_id"],
        "config_hash": manifest["config_hash"],
        "alignment": align,
        "filter": filt,
        "activity": label_scores(truth, labels, base, "activity", ACTIVITIES),
        "emotion": label_scores(truth, labels, base, "emotion", EMOTIONS),
        "decision": {
            "commands": len(commands),
            "by_rule": dict(collections.Counter(c["cause"] for c in commands)),
            "golden": golden_doc,
        },
        "counters": counters,
        "reduction": {
            "records_per_sample": ratio(align["records"], align["input_samples"]),
            "kept_per_record": ratio(kept, align["records"]),
            "windows_per_kept": ratio(len(labels), kept),
            "commands_per_window": ratio(len(commands), len(labels)),
            "windows_per_sample": ratio(len(labels), align["input_samples"]),
        },
    }


def compare(want, got, tol, path="", out=None):
    """Paths where `got` differs from `want`; floats compare within tol."""
    out = [] if out is None else out
    if isinstance(want, dict) and isinstance(got, dict):
        for k in sorted(set(want) | set(got)):
            if k not in want or k not in got:
                out.append(f"{path}/{k}: present on one side only")
            else:
                compare(want[k], got[k], tol, f"{path}/{k}", out)
    elif isinstance(want, list) and isinstance(got, list):
        if len(want) != len(got):
            out.append(f"{path}: length {len(got)} != {len(want)}")
        for i, (a, b) in enumerate(zip(want, got)):
            compare(a, b, tol, f"{path}/{i}", out)
    elif isinstance(want, float) or isinstance(got, float):
        if not (isinstance(got, (int, float)) and math.isclose(want, got, rel_tol=0, abs_tol=tol)):
            out.append(f"{path}: {got!r} != {want!r}")
    elif want != got:
        out.append(f"{path}: {got!r} != {want!r}")
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fused", required=True)
    ap.add_argument("--truth", required=True)
    ap.add_argument("--report", required=True)
    ap.add_argument("--golden")
    ap.add_argument("--tol", type=float, default=1e-9)
    args = ap.parse_args(argv)
    mismatches = compare(recompute(args.fused, args.truth, args.golden), read_json(args.report), args.tol)
    for m in mismatches:
        print(m)
    print(json.dumps({"mismatches": len(mismatches)}))
    return 1 if mismatches else 0


if __name__ == "__main__":
    sys.exit(main())
