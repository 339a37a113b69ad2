import json
import os
import shutil
import subprocess
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[2]


@pytest.fixture(scope="session")
def data_dir():
    return Path(os.environ.get("SHF_DATA_DIR", ROOT / "data"))


@pytest.fixture(scope="session")
def shf_bin():
    path = os.environ.get("SHF_BIN") or shutil.which("shf") or str(ROOT / "build" / "shf")
    if not Path(path).exists():
        pytest.skip("shf binary not built")
    return path


@pytest.fixture(scope="session")
def run_cli(shf_bin):
    def run(*args, timeout=300):
        return subprocess.run([shf_bin, *map(str, args)], capture_output=True, text=True, timeout=timeout)

    return run


def _cut_curve(points, end):
    """Keeps the samples before `end` and closes the curve at `end`."""
    kept = [p for p in points if p[0] < end]
    after = next((p for p in points if p[0] >= end), None)
    if after is None:
        return kept
    last = kept[-1]
    w = (end - last[0]) / (after[0] - last[0])
    return kept + [[end] + [a + w * (b - a) for a, b in zip(last[1:], after[1:])]]


def _cut_spans(spans, end):
    return [[a, min(b, end), *rest] for a, b, *rest in spans if a < end]


def cut_scenario(doc, end):
    doc = json.loads(json.dumps(doc))
    doc["duration_s"] = end
    for r in doc["residents"]:
        r["waypoints"] = _cut_curve(r["waypoints"], end)
        for key in ("activities", "emotions", "speech", "away"):
            r[key] = _cut_spans(r.get(key, []), end)
    doc["device_events"] = [e for e in doc["device_events"] if e[0] < end]
    for key, curve in doc["environment"].items():
        doc["environment"][key] = _cut_curve(curve, end)
    return doc


@pytest.fixture(scope="session")
def short_scenario(data_dir, tmp_path_factory):
    """The daily scenario cut to its first 10 s."""
    doc = cut_scenario(json.loads((data_dir / "scenario_daily.shs").read_text()), 10)
    path = tmp_path_factory.mktemp("scenario") / "short.shs"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="session")
def daily_fused(run_cli, data_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("daily")
    r = run_cli("simulate", "--scenario", data_dir / "scenario_daily.shs", "--out", root / "run")
    assert r.returncode == 0, r.stderr
    r = run_cli("fuse", "--log", root / "run" / "log", "--config", data_dir / "fuse.json", "--out", root / "fused")
    assert r.returncode == 0, r.stderr
    return root
