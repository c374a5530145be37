"""Intrinsics and pose files.

intrinsics.json: {"fx", "fy", "cx", "cy", "width", "height"}
pose.json:       {"T": 16 numbers, row-major 4x4}
trajectories:    JSON {"poses": [{"T": [...]}, ...]} or KITTI-style text,
                 one row-major 3x4 matrix (12 numbers) per line.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd

from ..models import Intrinsics, PoseSE3
from ..services.geometry import pose_from_matrix

JsonLike = Union[str, bytes, Dict[str, Any]]


def _as_dict(data: JsonLike):
    if isinstance(data, (str, bytes)):
        return json.loads(data)
    return data


def parse_intrinsics(data: JsonLike) -> Intrinsics:
    return Intrinsics.model_validate(_as_dict(data))


def parse_pose(data: JsonLike) -> PoseSE3:
    obj = _as_dict(data)
    if "T" not in obj:
        raise ValueError("pose JSON needs a 'T' entry with 16 row-major numbers")
    values = np.asarray(obj["T"], dtype=np.float64).ravel()
    if values.size != 16:
        raise ValueError(f"pose 'T' must hold 16 numbers, got {values.size}")
    return pose_from_matrix(values)


def pose_payload(pose: PoseSE3) -> Dict[str, List[float]]:
    return {"T": pose.matrix().ravel().tolist()}


def intrinsics_payload(intr: Intrinsics) -> Dict[str, Any]:
    return intr.model_dump()


def load_intrinsics(path: Path) -> Intrinsics:
    return parse_intrinsics(Path(path).read_text(encoding="utf-8"))


def load_pose(path: Path) -> PoseSE3:
    return parse_pose(Path(path).read_text(encoding="utf-8"))


def load_trajectory(path: Path) -> List[PoseSE3]:
    """Camera-to-world poses from a JSON list or a KITTI-style text file."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        obj = json.loads(path.read_text(encoding="utf-8"))
        entries = obj["poses"] if isinstance(obj, dict) else obj
        return [parse_pose(e) for e in entries]
    df = pd.read_csv(path, sep=r"\s+", header=None, comment="#")
    if df.shape[1] != 12:
        raise ValueError(f"trajectory rows must hold 12 numbers, got {df.shape[1]}")
    poses = []
    for row in df.to_numpy(dtype=np.float64):
        T = np.eye(4)
        T[:3, :] = row.reshape(3, 4)
        poses.append(pose_from_matrix(T))
    return poses
