from io import BytesIO
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
from PIL import Image

from ..errors import ShapeError
from ..models import Intrinsics, PoseSE3, as_depth, as_image
from .camera import load_intrinsics, load_pose
from .pfm import read_pfm

Source = Union[bytes, str, Path]

# File names expected inside an --input directory
FRAME_FILES = {
    "intrinsics": "intrinsics.json",
    "pose": "pose.json",
    "x_tm1": "x_tm1.png",
    "x_t": "x_t.png",
    "d_tm1": "d_tm1.pfm",
    "d_t": "d_t.pfm",
}


def _open(src: Source) -> Image.Image:
    if isinstance(src, bytes):
        return Image.open(BytesIO(src))
    return Image.open(Path(src))


def decode_png_image(src: Source) -> np.ndarray:
    """8-bit grey or RGB PNG -> (H, W, C) float64 in [0, 1]."""
    img = _open(src)
    img = img.convert("RGB") if img.mode in ("RGB", "RGBA", "P") else img.convert("L")
    pixels = np.asarray(img, dtype=np.float64) / 255.0
    return as_image(pixels)


def decode_png_mask(src: Source) -> np.ndarray:
    """Grey PNG -> {0, 1} mask; anything brighter than mid-grey is kept."""
    pixels = np.asarray(_open(src).convert("L"))
    return (pixels > 127).astype(np.uint8)


class FrameInputs(NamedTuple):
    intrinsics: Intrinsics
    pose: PoseSE3   # frame-t camera -> frame t-1 camera
    x_tm1: np.ndarray
    x_t: np.ndarray
    d_tm1: np.ndarray
    d_t: np.ndarray


def load_input_dir(directory: Path) -> FrameInputs:
    """Read a frame pair, its depths, intrinsics and motion from one directory."""
    directory = Path(directory)
    missing = [name for name in FRAME_FILES.values() if not (directory / name).exists()]
    if missing:
        raise FileNotFoundError(f"{directory} is missing {', '.join(missing)}")
    intr = load_intrinsics(directory / FRAME_FILES["intrinsics"])
    frames = {k: decode_png_image(directory / FRAME_FILES[k]) for k in ("x_tm1", "x_t")}
    depths = {k: read_pfm(directory / FRAME_FILES[k]) for k in ("d_tm1", "d_t")}
    for k, d in depths.items():
        if d.ndim != 2:
            raise ShapeError(f"{k} must be a single-channel PFM")
    return FrameInputs(
        intrinsics=intr,
        pose=load_pose(directory / FRAME_FILES["pose"]),
        x_tm1=as_image(frames["x_tm1"], intr.shape),
        x_t=as_image(frames["x_t"], intr.shape),
        d_tm1=as_depth(depths["d_tm1"], intr.shape),
        d_t=as_depth(depths["d_t"], intr.shape),
    )
