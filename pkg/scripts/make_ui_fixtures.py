#!/usr/bin/env python3
"""Export gauge-projection test vectors for the browser annotation tool.

The web UI re-implements the pinhole math in TypeScript; these fixtures pin
its output to the geometry module. Regenerate with:

    python3 scripts/make_ui_fixtures.py
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from snowtools.geometry import CameraIntrinsics, back_project, project, unit

OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures" / "projection.json"


def tangent_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic in-plane basis; mirrored exactly by the UI."""
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = unit(np.cross(helper, n))
    e2 = np.cross(n, e1)
    return e1, e2


def gauge_case(name, f, width, height, keypoint, depth, normal, grid_half, arrow_len):
    k = CameraIntrinsics(focal_length_px=f, width=width, height=height)
    n = unit(np.asarray(normal, dtype=np.float64))
    origin = np.array(back_project(keypoint[0], keypoint[1], depth, k))
    e1, e2 = tangent_basis(n)
    corners3d = [
        origin + grid_half * (sx * e1 + sy * e2)
        for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1))
    ]
    tip3d = origin + arrow_len * n
    return {
        "name": name,
        "focal": f,
        "cx": k.cx,
        "cy": k.cy,
        "width": width,
        "height": height,
        "keypoint": list(keypoint),
        "depth": depth,
        "normal": [float(c) for c in n],
        "grid_half": grid_half,
        "arrow_len": arrow_len,
        "projected": {
            "origin": list(project(origin, k)),
            "arrow_tip": list(project(tip3d, k)),
            "grid_corners": [list(project(p, k)) for p in corners3d],
        },
    }


def tilted(theta_deg, phi_deg=0.0):
    t, p = math.radians(theta_deg), math.radians(phi_deg)
    return [math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), -math.cos(t)]


def build():
    cases = [
        gauge_case("fronto-center", 100.0, 640, 480, (319.5, 239.5), 2.0, tilted(0), 0.3, 0.4),
        gauge_case("fronto-offset", 100.0, 640, 480, (420.0, 150.0), 3.0, tilted(0), 0.3, 0.4),
        gauge_case("tilt30-az0", 100.0, 640, 480, (319.5, 239.5), 2.0, tilted(30, 0), 0.3, 0.4),
        gauge_case("tilt30-az135", 120.0, 640, 480, (200.0, 300.0), 2.5, tilted(30, 135), 0.25, 0.5),
        gauge_case("tilt60-az270", 100.0, 640, 480, (319.5, 239.5), 1.5, tilted(60, 270), 0.2, 0.3),
        gauge_case("steep75", 150.0, 640, 480, (500.0, 100.0), 4.0, tilted(75, 45), 0.35, 0.6),
        gauge_case("short-focal", 50.0, 640, 480, (319.5, 239.5), 2.0, tilted(40, 200), 0.3, 0.4),
        gauge_case("long-focal", 500.0, 640, 480, (319.5, 239.5), 2.0, tilted(40, 200), 0.3, 0.4),
        gauge_case("long-focal-2x", 1000.0, 640, 480, (319.5, 239.5), 2.0, tilted(40, 200), 0.3, 0.4),
        gauge_case("small-image", 100.0, 320, 240, (100.0, 80.0), 1.0, tilted(20, 90), 0.15, 0.2),
    ]
    return {"convention": "camera frame +x right, +y down, +z forward; normals face the camera (z<0)",
            "cases": cases}


if __name__ == "__main__":
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {OUT}")
