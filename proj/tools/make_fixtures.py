#!/usr/bin/env python3
"""Regenerates the bundled scenario fixtures under data/.

Walking legs are laid out so that every waypoint segment within a leg has
the same speed. Run from the repository root.
"""

import json
import math
import random
import re
from pathlib import Path

DATA = Path(__file__).resolve().parent.parent / "data"

# Named spots in the 10 m x 6 m home.
STOVE = (1.2, 1.0)
TABLE = (4.5, 1.2)
KETTLE = (2.0, 1.6)
MAT = (2.0, 4.5)
HALL = (5.0, 3.5)
SOFA = (7.0, 4.2)
BED = (9.2, 1.2)
DOOR = (0.6, 5.4)

ALCOVE = {"x_min": 8.5, "y_min": 0.0, "x_max": 10.0, "y_max": 2.5}

DEVICES = [
    {"id": 101, "name": "stove"},
    {"id": 102, "name": "kettle"},
    {"id": 103, "name": "tv"},
    {"id": 104, "name": "lamp"},
    {"id": 105, "name": "vacuum"},
    {"id": 106, "name": "fan"},
    {"id": 107, "name": "night_light"},
    {"id": 108, "name": "speaker"},
]


class Script:
    def __init__(self, start):
        self.points = [[0.0, *start]]
        self.activities = []
        self.emotions = []
        self.speech = []
        self.away = []

    @property
    def here(self):
        return tuple(self.points[-1][1:])

    def stay(self, t0, t1, activity=None):
        if self.points[-1][0] < t0:
            self.points.append([t0, *self.here])
        self.points.append([t1, *self.here])
        if activity:
            self.activities.append([t0, t1, activity])

    def walk(self, t0, t1, path, activity="walking"):
        pts = [self.here] + list(path)
        lengths = [math.dist(a, b) for a, b in zip(pts, pts[1:])]
        total = sum(lengths)
        if self.points[-1][0] < t0:
            self.points.append([t0, *self.here])
        t = t0
        for p, l in zip(pts[1:], lengths):
            t += (t1 - t0) * l / total
            self.points.append([round(t, 6), *p])
        self.points[-1][0] = t1
        if activity:
            self.activities.append([t0, t1, activity])
        return total / (t1 - t0)

    def resident(self, rid, **extra):
        return {
            "id": rid,
            "waypoints": self.points,
            "activities": self.activities,
            "emotions": self.emotions,
            "speech": self.speech,
            "away": self.away,
            "gait": {"speed_mps": 1.0, "cadence_spm": 100.0, "cadence_cv": 0.03},
            **extra,
        }


def cameras(rng, privacy=None):
    spots = [(0.2, 0.2), (8.3, 0.2), (0.2, 5.8), (9.8, 5.8)]
    out = []
    for i, (x, y) in enumerate(spots):
        cam = {
            "device_id": 1 + i,
            "modality": "camera",
            "rate_hz": 30.0,
            "clock": clock(rng, 1 + i, jitter_ns=20_000),
            "pose": {"position": [x, y, 2.6], "look_at": [4.6, 3.0, 0.8]},
            "intrinsics": {"fx": 0.5, "fy": 0.5, "cx": 0.5, "cy": 0.5},
        }
        if privacy:
            cam["privacy_zone"] = privacy
        out.append(cam)
    return out


def clock(rng, seed, jitter_ns=50_000):
    return {
        "offset_ns": int(rng.uniform(-250e6, 250e6)),
        "drift_ppm": round(rng.uniform(-40.0, 40.0), 3),
        "jitter_sigma_ns": jitter_ns,
        "seed": seed,
    }


def fleet(rng, floor_cols=40, privacy=None, noise=None):
    sensors = cameras(rng, privacy)
    sensors += [
        {"device_id": 10, "modality": "microphone", "rate_hz": 16.0, "clock": clock(rng, 10)},
        {
            "device_id": 11,
            "modality": "floor_pressure",
            "rate_hz": 20.0,
            "clock": clock(rng, 11),
            "grid": {"cols": floor_cols, "rows": 24, "pitch_m": 0.25},
        },
        {"device_id": 12, "modality": "environment", "rate_hz": 1.0, "clock": clock(rng, 12)},
        {
            "device_id": 20,
            "modality": "device_usage",
            "rate_hz": 8.0,
            "clock": clock(rng, 20),
            "watch_devices": [d["id"] for d in DEVICES],
        },
    ]
    if noise is not None:
        for s in sensors:
            s["noise"] = noise
    return sensors


NOISELESS = {
    "keypoint_sigma": 0.0,
    "audio_sigma": 0.0,
    "floor_sigma_n": 0.0,
    "temperature_sigma_c": 0.0,
    "humidity_sigma_rh": 0.0,
}


def daily():
    s = Script(STOVE)
    s.stay(0, 30, "cooking")
    s.walk(30, 40, [(1.2, 4.0), (4.5, 4.0), TABLE])
    s.stay(40, 100, "eating")
    s.speech.append([55, 75])
    s.emotions.append([55, 75, "happy"])
    s.walk(100, 110, [(4.5, 4.0), (2.0, 4.0), KETTLE])
    s.stay(110, 130, "drinking")
    s.walk(130, 140, [(5.0, 1.6), (5.0, 4.5), MAT])
    s.stay(140, 180, "exercising")
    s.walk(180, 190, [(2.0, 2.0), (5.0, 2.0), HALL])
    s.stay(190, 210, "standing")
    s.speech.append([193, 207])
    s.emotions.append([193, 207, "angry"])
    s.walk(210, 220, [(5.0, 5.5), (8.5, 5.5), SOFA])
    s.stay(220, 260, "watching_tv")
    s.speech.append([230, 250])
    s.emotions.append([230, 250, "excited"])
    s.stay(260, 280, "reading")
    s.stay(280, 300, "lying")
    s.walk(300, 310, [(5.0, 4.2), (5.0, 1.2), BED])
    s.stay(310, 420, "sleeping")
    s.walk(420, 430, [(5.0, 1.2), (5.0, 3.0), (6.0, 3.0)])
    s.emotions.append([420, 430, "tired"])
    loop = [(8.0, 3.0), (8.0, 5.0), (6.0, 5.0), (6.0, 3.0)]
    s.walk(430, 470, loop + loop, activity="cleaning")
    s.walk(470, 480, [(6.0, 5.0), (8.5, 5.0), SOFA])
    s.stay(480, 500, "sitting")
    s.speech.append([485, 495])
    s.emotions.append([485, 495, "sad"])
    s.walk(500, 510, [DOOR])
    s.stay(510, 530)
    s.away.append([510, 530])
    s.walk(530, 540, [(0.6, 2.0), (5.0, 2.0), HALL])
    s.stay(540, 560, "standing")
    s.speech.append([543, 557])
    s.walk(560, 570, [(5.0, 5.5), (8.0, 5.5), SOFA])
    s.stay(570, 600, "sitting")

    events = [
        [0.0, 101, "on"], [30.0, 101, "off"],
        [110.0, 102, "on"], [130.0, 102, "off"],
        [220.0, 103, "on"], [260.0, 103, "off"],
        [260.0, 104, "on"], [300.0, 104, "off"],
        [430.0, 105, "on"], [470.0, 105, "off"],
    ]
    rng = random.Random(20240611)
    return {
        "schema": "shs/1",
        "name": "daily",
        "duration_s": 600,
        "seed": 7,
        # 21:55 local, so the second half of the run is night.
        "start_time_of_day_s": 21 * 3600 + 55 * 60,
        "residents": [s.resident("r1")],
        "devices": DEVICES,
        "device_events": events,
        "environment": {
            "temperature_c": [[0, 21.5], [30, 23.0], [200, 22.0], [600, 21.0]],
            "humidity_rh": [[0, 45.0], [110, 46.0], [130, 55.0], [200, 48.0], [600, 46.0]],
        },
        # The floor grid stops at x = 8.5 m: the sleeping alcove is not instrumented.
        "sensors": fleet(rng, floor_cols=34, privacy=ALCOVE),
    }


def cleaning(noise=None, name="cleaning"):
    s = Script(HALL)
    loop = [(7.0, 3.5), (7.0, 5.0), (3.0, 5.0), (3.0, 2.0), HALL]
    s.walk(0, 30, loop, activity="cleaning")
    s.stay(30, 60, "standing")
    s.stay(60, 120)
    s.away.append([60, 120])
    s.walk(120, 150, [(7.0, 3.5), (7.0, 5.0), (3.0, 5.0), (3.0, 2.0), HALL], activity="cleaning")
    s.stay(150, 180, "standing")
    s.stay(180, 240)
    s.away.append([180, 240])
    s.walk(240, 270, loop, activity="cleaning")
    s.stay(270, 300, "standing")
    events = [[0.0, 105, "on"], [30.0, 105, "off"], [120.0, 105, "on"], [150.0, 105, "off"],
              [240.0, 105, "on"], [270.0, 105, "off"]]
    rng = random.Random(99)
    return {
        "schema": "shs/1",
        "name": name,
        "duration_s": 300,
        "seed": 11,
        "start_time_of_day_s": 10 * 3600,
        "residents": [s.resident("r1")],
        "devices": DEVICES,
        "device_events": events,
        "sensors": fleet(rng, noise=noise),
    }


def fault():
    s = Script(HALL)
    s.stay(0, 20, "standing")
    s.walk(20, 30, [(7.0, 3.5), (7.0, 5.0), (3.0, 5.0), HALL])
    s.stay(30, 120, "standing")
    rng = random.Random(5)
    sensors = fleet(rng)
    for sensor in sensors:
        if sensor["device_id"] == 10:
            sensor["link"] = {"loss_prob": 0.01}
        if sensor["device_id"] == 11:
            sensor["link"] = {"corrupt_prob": 0.005}
    return {
        "schema": "shs/1",
        "name": "fault",
        "duration_s": 120,
        "seed": 3,
        "residents": [s.resident("r1")],
        "devices": DEVICES,
        "sensors": sensors,
        "faults": [{"device_id": 2, "kill_s": 60.0, "restart_s": 90.0}],
    }


def dumps(doc):
    # One line per waypoint / interval keeps the fixtures diffable.
    text = json.dumps(doc, indent=1)
    return re.sub(r"\[\s+([^\[\]{}]*?)\s+\]", lambda m: "[" + " ".join(m.group(1).split()) + "]", text)


def write(name, doc):
    path = DATA / name
    path.write_text(dumps(doc) + "\n")
    print("wrote", path)


if __name__ == "__main__":
    DATA.mkdir(exist_ok=True)
    write("scenario_daily.shs", daily())
    write("scenario_cleaning.shs", cleaning())
    write("scenario_cleaning_noiseless.shs", cleaning(NOISELESS, "cleaning_noiseless"))
    write("scenario_fault.shs", fault())
