from fastapi import FastAPI, UploadFile, File, Form, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from functools import lru_cache
from typing import Optional
import uvicorn

from . import __version__
from .errors import SceneError
from .parsers.pfm import decode_pfm
from .parsers.utils import decode_png_mask
from .services.geometry import relative_pose
from .services.losses import total_loss
from .services.masks import combine, repeated_masking
from .services.metrics import depth_metrics
from .services.report import loss_payload, mask_coverage, mask_summary, occlusion_summary
from .services.storage import round_floats
from .services.synth import PRESET_NAMES, preset, render_pair, visibility_oracle
from .models import LossWeights, VisibilityLabel

app = FastAPI(
    title="Mask Reconstruction Service",
    version=__version__,
    description="Synthetic occlusion presets, two-way masks, masked losses and depth metrics."
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"], allow_credentials=True, allow_methods=["*"], allow_headers=["*"],
)


@lru_cache(maxsize=16)
def _rendered(name: str, seed: int):
    # presets are deterministic, so renders can be shared between requests
    p = preset(name, seed)
    return p, render_pair(p)


def _load_preset(name: str, seed: int):
    if name not in PRESET_NAMES:
        raise HTTPException(status_code=404, detail=f"Unknown preset {name!r}.")
    try:
        return _rendered(name, seed)
    except SceneError as e:
        raise HTTPException(status_code=400, detail=f"Failed to render preset: {e}")


@app.get("/api/presets")
def list_presets():
    """Names of the synthetic scenes with their camera motion."""
    rows = []
    for name in PRESET_NAMES:
        p = preset(name)
        rows.append({"name": name, "width": p.intrinsics.width, "height": p.intrinsics.height,
                     "translation": relative_pose(p.pose_tm1, p.pose_t).translation.tolist()})
    return {"presets": rows, "count": len(rows)}


@app.get("/api/masks/{name}")
def masks(name: str, rounds: int = 3, seed: int = 0):
    """Mask coverage after repeated two-way masking, plus agreement with the ray-cast oracle."""
    p, (x_tm1, d_tm1, x_t, d_t) = _load_preset(name, seed)
    try:
        res = repeated_masking(x_t, x_tm1, d_t, d_tm1, relative_pose(p.pose_tm1, p.pose_t),
                               p.intrinsics, rounds)
    except Exception as e:
        raise HTTPException(status_code=400, detail=f"Failed to compute masks: {e}")
    summary = mask_summary(res)
    labels = visibility_oracle(p.scene, p.intrinsics, p.pose_t, p.pose_tm1)
    summary["oracle"] = occlusion_summary(labels, combine(res.masks_t))
    summary["coverage"] = mask_coverage(labels, res.masks_t)
    return round_floats(summary)


@app.get("/api/loss/{name}")
def loss(name: str, rounds: int = 3, dn: bool = False, use_masks: bool = True, seed: int = 0):
    """Per-scale loss report with the default weights."""
    p, (x_tm1, d_tm1, x_t, d_t) = _load_preset(name, seed)
    try:
        report = total_loss((x_tm1, x_t), (d_tm1, d_t), relative_pose(p.pose_tm1, p.pose_t),
                            p.intrinsics, LossWeights.defaults(depth_normalization=dn),
                            dn_enabled=dn, rounds=rounds, use_masks=use_masks)
    except Exception as e:
        raise HTTPException(status_code=400, detail=f"Failed to compute loss: {e}")
    return round_floats(loss_payload(report))


@app.get("/api/oracle/{name}")
def oracle(name: str, seed: int = 0):
    """Counts of each visibility label for frame t as seen from frame t-1."""
    p, _ = _load_preset(name, seed)
    labels = visibility_oracle(p.scene, p.intrinsics, p.pose_t, p.pose_tm1)
    return {"visible": int((labels == VisibilityLabel.VISIBLE_BOTH).sum()),
            "occluded": int((labels == VisibilityLabel.OCCLUDED_IN_OTHER).sum()),
            "out_of_view": int((labels == VisibilityLabel.OUT_OF_VIEW_IN_OTHER).sum())}


@app.post("/api/eval/depth")
async def eval_depth(pred: UploadFile = File(...), gt: UploadFile = File(...),
                     cap: int = Form(80), median_scale: bool = Form(True),
                     valid: Optional[UploadFile] = File(None)):
    """
    Two PFM depth uploads and an optional PNG valid mask, read in memory
    (nothing persisted), scored with the standard depth metrics.
    """
    if cap not in (50, 80):
        raise HTTPException(status_code=400, detail="cap must be 50 or 80.")
    try:
        pred_grid = decode_pfm(await pred.read())
        gt_grid = decode_pfm(await gt.read())
        mask = decode_png_mask(await valid.read()) if valid is not None else None
        metrics = depth_metrics(pred_grid, gt_grid, mask, cap=cap, median_scale=median_scale)
    except Exception as e:
        raise HTTPException(status_code=400, detail=f"Failed to evaluate depth: {e}")
    return round_floats(metrics.model_dump())


if __name__ == "__main__":
    uvicorn.run("maskrecon.app:app", host="127.0.0.1", port=8000, log_level="info")
