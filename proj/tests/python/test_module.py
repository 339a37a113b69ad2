import json

import numpy as np
import pytest

shf = pytest.importorskip("shf")


def snapshot(ts=1_000, lamp="on"):
    return {
        "schema": "sht/1",
        "ts": ts,
        "room": {"x_min": 0.0, "y_min": 0.0, "x_max": 10.0, "y_max": 6.0, "height": 2.5},
        "residents": [
            {"id": "r1", "present": True, "x": 1.5, "y": 2.0, "posture": "standing",
             "activity": "cooking", "emotion": None, "confidence": 0.75}
        ],
        "devices": {"101": {"name": "lamp", "state": lamp}},
        "environment": {"temperature_c": 21.5, "humidity_rh": None},
        "sensor_health": {"1": {"session": "active", "last_seen": 900}},
        "provenance": {"run_id": "r", "config_hash": "h"},
    }


def test_snapshot_round_trip():
    s = shf.parse_snapshot(json.dumps(snapshot()))
    assert shf.parse_snapshot(shf.serialize_snapshot(s)) == s
    assert s["residents"][0]["x"] == 1.5


def test_snapshot_rejects_unknown_fields():
    bad = snapshot()
    bad["extra"] = 1
    with pytest.raises(shf.ShfError) as err:
        shf.serialize_snapshot(bad)
    assert err.value.code == "ParseError"


def test_diff_and_apply():
    a, b = snapshot(), snapshot(ts=2_000, lamp="off")
    d = shf.diff_snapshots(a, b)
    assert d["from_ts"] == 1_000 and d["to_ts"] == 2_000
    assert [c["path"] for c in d["changes"]] == ["/devices/101/state"]
    assert shf.apply_diff(a, d) == shf.parse_snapshot(json.dumps(b))
    with pytest.raises(shf.ShfError) as err:
        shf.diff_snapshots(b, a)
    assert err.value.code == "OrderViolation"


def test_triangulate_recovers_point():
    p = np.array([2.0, 3.0, 1.0])
    origins = np.array([[0.0, 0.0, 2.5], [10.0, 0.0, 2.5], [5.0, 6.0, 2.5]])
    point, residual = shf.triangulate(origins, p - origins)
    assert np.allclose(point, p, atol=1e-9)
    assert residual < 1e-9
    with pytest.raises(shf.ShfError):
        shf.triangulate(origins[:1], (p - origins)[:1])


def test_frame_check_rejects_garbage():
    assert not shf.frame_ok(b"")
    assert not shf.frame_ok(b"\x00" * 64)


def test_pipeline_from_python(data_dir, tmp_path):
    counters = shf.simulate(data_dir / "scenario_cleaning_noiseless.shs", tmp_path / "run")
    assert counters["frames_stored"] == counters["frames_emitted"] > 0
    result = shf.fuse(tmp_path / "run" / "log", data_dir / "fuse.json", tmp_path / "fused", levels="0..1")
    assert len(result["config_hash"]) == 16
    with pytest.raises(shf.ShfError) as err:
        shf.fuse(tmp_path / "run" / "log", data_dir / "fuse.json", tmp_path / "other", levels="2")
    assert err.value.code == "MissingInput"
    report = shf.evaluate(tmp_path / "fused", tmp_path / "run" / "truth.jsonl")
    assert report["filter"]["precision"] == 1.0
    assert report["filter"]["recall"] == 1.0
