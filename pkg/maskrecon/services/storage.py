from pathlib import Path
import json

import numpy as np
import pandas as pd
from PIL import Image

from ..models import VisibilityLabel, as_image, as_mask
from ..parsers.pfm import write_pfm

# Significant digits kept for floats in JSON / CSV output (byte-stable across runs).
FLOAT_DIGITS = 12

# PNG grey levels of the visibility labels
LABEL_GREY = {
    VisibilityLabel.VISIBLE_BOTH: 255,
    VisibilityLabel.OCCLUDED_IN_OTHER: 128,
    VisibilityLabel.OUT_OF_VIEW_IN_OTHER: 0,
}


def ensure_dirs(*dirs: Path) -> None:
    for d in dirs:
        Path(d).mkdir(parents=True, exist_ok=True)


def _round_float(x: float) -> float:
    return float(f"{x:.{FLOAT_DIGITS}g}")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return _round_float(float(o))
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return round_floats(o.tolist())
    return str(o)


def round_floats(obj):
    """Round every float in a JSON-like structure to FLOAT_DIGITS significant digits."""
    if isinstance(obj, float):
        return _round_float(obj)
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def save_json(data_obj, dest_dir: Path, filename: str) -> Path:
    """Overwrite JSON on every call."""
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)
    out = dest_dir / filename
    payload = data_obj.model_dump() if hasattr(data_obj, "model_dump") else data_obj
    with out.open("w", encoding="utf-8") as f:
        json.dump(round_floats(payload), f, ensure_ascii=False, indent=2, sort_keys=True,
                  default=_json_default, allow_nan=False)
        f.write("\n")
    return out


def read_json(path: Path):
    with Path(path).open("r", encoding="utf-8") as f:
        return json.load(f)


def _save_png(pixels: np.ndarray, dest_dir: Path, filename: str) -> Path:
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)
    out = dest_dir / filename
    Image.fromarray(pixels).save(out, format="PNG")
    return out


def save_mask_png(mask, dest_dir: Path, filename: str) -> Path:
    """Binary mask as an 8-bit PNG: kept pixels white (255), masked pixels black."""
    return _save_png(as_mask(mask) * np.uint8(255), dest_dir, filename)


def save_image_png(image, dest_dir: Path, filename: str) -> Path:
    """[0, 1] image as an 8-bit grey or RGB PNG."""
    x = as_image(image)
    pixels = np.round(x * 255.0).astype(np.uint8)
    return _save_png(pixels[..., 0] if pixels.shape[2] == 1 else pixels, dest_dir, filename)


def save_labels_png(labels, dest_dir: Path, filename: str) -> Path:
    """VisibilityLabel grid as grey levels (visible 255, occluded 128, out of view 0)."""
    labels = np.asarray(labels)
    pixels = np.zeros(labels.shape, dtype=np.uint8)
    for label, grey in LABEL_GREY.items():
        pixels[labels == int(label)] = grey
    return _save_png(pixels, dest_dir, filename)


def save_depth_pfm(depth, dest_dir: Path, filename: str) -> Path:
    return write_pfm(depth, Path(dest_dir) / filename)


def save_csv(df: pd.DataFrame, dest_dir: Path, filename: str) -> Path:
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)
    out = dest_dir / filename
    df.to_csv(out, index=False, float_format=f"%.{FLOAT_DIGITS}g", lineterminator="\n")
    return out
