"""Regenerate the bundled fixture files under src/keyprim/resources."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from keyprim.bridge import CameraModel, project
from keyprim.data import (
    mug_keypoints,
    synthetic_gshape_demos,
    synthetic_pour_dataset,
    write_handwriting_csv,
)
from keyprim.manifold import quat_from_axis_angle

OUT = Path(__file__).resolve().parents[1] / "src" / "keyprim" / "resources"

# overhead camera 1 m above the table looking straight down
CAMERA = CameraModel(
    intrinsics=np.array([[600.0, 0.0, 320.0], [0.0, 600.0, 240.0], [0.0, 0.0, 1.0]]),
    rotation=np.diag([1.0, -1.0, -1.0]),
    translation=np.array([0.5, 0.0, 1.0]),
)


def _ks_doc(ks, to_pixels=False):
    conv = (lambda p: list(project(CAMERA, p))) if to_pixels else (lambda p: np.asarray(p).tolist())
    return {
        "id": ks.object_id,
        "role": ks.role,
        "keypoints": {
            **{label: conv(ks.get(label)) for label in ("K_i", "K_p1", "K_p2")},
            "K_b": [conv(b) for b in ks.boundary],
        },
    }


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "gshape.csv").write_text(write_handwriting_csv(synthetic_gshape_demos()))

    demos, finals = synthetic_pour_dataset()
    (OUT / "pour_demos.csv").write_text(write_handwriting_csv(demos))

    start_pos, start_q = [0.38, -0.24, 0.0], quat_from_axis_angle([0.0, 0.0, 1.0], -0.1)
    scenario = {
        "master": _ks_doc(mug_keypoints("mug_target", "master", [0.60, 0.22, 0.0],
                                        quat_from_axis_angle([0.0, 0.0, 1.0], 0.2))),
        "slave": _ks_doc(mug_keypoints("mug_source", "slave", start_pos, start_q)),
        "final_frames": [{"master": _ks_doc(m), "slave": _ks_doc(s)} for m, s in finals],
        "start_pose": {"position": start_pos, "orientation": start_q.tolist()},
        "options": {"seed": 0, "n_pos_samples": 1, "angle_step_deg": 2.0, "w_rot": 0.1},
    }
    (OUT / "pour_scenario.json").write_text(json.dumps(scenario, indent=1) + "\n")

    # keypoint stream of the first demo as seen by the overhead camera
    master, _ = finals[0]
    traj = demos[0]
    frames = []
    for i in range(0, len(traj), 4):
        slave = mug_keypoints("mug_source", "slave", traj.positions[i], traj.orientations[i])
        frames.append({"t": float(traj.times[i]),
                       "objects": [_ks_doc(slave, True), _ks_doc(master, True)]})
    stream = {"camera": CAMERA.to_dict(), "frames": frames}
    (OUT / "pour_keypoints.json").write_text(json.dumps(stream, indent=1) + "\n")


if __name__ == "__main__":
    main()
