"""Image and sidecar persistence: binary PGM plus JSON-lines landmarks."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_pgm(path, pixels):
    """Binary portable graymap, maxval 255."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(pixels) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    parts = data.split(b"\n", 3)
    w, h = (int(x) for x in parts[1].split())
    maxval = int(parts[2])
    arr = np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
    return arr.astype(np.float64) / maxval


def landmark_record(sample_id, landmarks, au, prompt):
    return {
        "id": sample_id,
        "landmarks": {k: [float(v[0]), float(v[1])] for k, v in landmarks.items()},
        "au": {
            "occurrence": [int(x) for x in au.occurrence],
            "intensity": [int(x) for x in au.intensity],
        },
        "prompt": prompt,
    }


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
