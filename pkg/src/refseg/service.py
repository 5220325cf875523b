"""HTTP inference service.

Endpoints:
  GET  /health    readiness and API version
  GET  /samples   bundled demo images with suggested expressions
  POST /segment   image + expression -> run-length encoded mask

/segment accepts either a JSON body ({"image_base64": ..., "expression":
..., "threshold"?, "include_heatmaps"?}) or multipart/form-data with an
"image" file field and an "expression" form field.  Images of arbitrary
size are letterboxed to the model's square input and the predicted
probabilities are mapped back to the original geometry before
thresholding.

Status codes: 400 empty expression or undecodable image, 413 oversize
image, 503 while no checkpoint is loaded.
"""
from __future__ import annotations

import base64
import io
import os
import time

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from .config import GeneratorConfig, config_hash
from .errors import EmptyExpression, RefsegError
from .model import checkpoint_id, model_from_checkpoint
from .rle import rle_encode
from .synthetic import generate_sample, minimal_prefix_length
from .text import TextFeatures
from .visualize import colormap, stage_heat

API_VERSION = "1"
CHECKPOINT_ENV = "REFSEG_CHECKPOINT"
DEFAULT_MAX_SIDE = 2048
_SAMPLE_SEED = 20240824


def _png_base64(arr: np.ndarray, mode="L") -> str:
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _demo_samples(n=4):
    cfg = GeneratorConfig()
    out = []
    for i in range(n):
        s = generate_sample(cfg, [_SAMPLE_SEED, i])
        suggestions = [s.expression]
        prefix = " ".join(s.clauses[:minimal_prefix_length(s)])
        if prefix != s.expression:
            suggestions.append(prefix)
        out.append({
            "id": f"demo-{i}",
            "width": int(s.image.shape[1]),
            "height": int(s.image.shape[0]),
            "image_base64": _png_base64(
                np.round(s.image * 255).astype(np.uint8)),
            "suggested_expressions": suggestions,
        })
    return out


def _letterbox(arr: np.ndarray, target: int):
    """uint8 (H, W) -> (float canvas (target, target), placement box)."""
    h, w = arr.shape
    scale = min(target / h, target / w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    resized = np.asarray(
        Image.fromarray(arr, mode="L").resize((nw, nh), Image.BILINEAR))
    canvas = np.zeros((target, target), dtype=np.uint8)
    top, left = (target - nh) // 2, (target - nw) // 2
    canvas[top:top + nh, left:left + nw] = resized
    return canvas.astype(np.float32) / 255.0, (top, left, nh, nw)


def _map_back(plane: np.ndarray, box, orig_hw):
    """Crop the letterbox region and resize a float map to the original."""
    top, left, nh, nw = box
    crop = plane[top:top + nh, left:left + nw].astype(np.float32)
    img = Image.fromarray(crop, mode="F").resize(
        (orig_hw[1], orig_hw[0]), Image.BILINEAR)
    return np.asarray(img)


def _decode_image(data: bytes, max_side: int) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise HTTPException(status_code=400,
                            detail=f"cannot decode image: {exc}") from exc
    if max(img.size) > max_side:
        raise HTTPException(
            status_code=413,
            detail=f"image side {max(img.size)} exceeds limit {max_side}")
    return np.asarray(img.convert("L"))


def create_app(checkpoint_path=None, preload=True,
               max_side=DEFAULT_MAX_SIDE) -> FastAPI:
    app = FastAPI(title="refseg service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"])
    app.state.checkpoint_path = checkpoint_path or os.environ.get(CHECKPOINT_ENV)
    app.state.loaded = None
    app.state.samples = _demo_samples()

    def ensure_model():
        if app.state.loaded is None:
            path = app.state.checkpoint_path
            if not path or not os.path.isfile(path):
                raise HTTPException(
                    status_code=503,
                    detail="no model checkpoint loaded; set "
                           f"{CHECKPOINT_ENV} or pass --ckpt")
            model, cfg, _ = model_from_checkpoint(path)
            app.state.loaded = {
                "model": model,
                "cfg": cfg,
                "model_id": checkpoint_id(path),
                "config_hash": config_hash(cfg),
            }
        return app.state.loaded

    if preload and app.state.checkpoint_path:
        ensure_model()

    @app.get("/health")
    def health():
        loaded = app.state.loaded is not None
        status = "ok" if loaded else (
            "loading" if app.state.checkpoint_path else "no-model")
        return {"status": status, "model_loaded": loaded,
                "api_version": API_VERSION}

    @app.get("/samples")
    def samples():
        return {"api_version": API_VERSION, "samples": app.state.samples}

    @app.post("/segment")
    async def segment(request: Request):
        ctype = request.headers.get("content-type", "")
        threshold = None
        include_heatmaps = False
        if ctype.startswith("multipart/form-data"):
            form = await request.form()
            expression = str(form.get("expression") or "")
            upload = form.get("image")
            if upload is None:
                raise HTTPException(status_code=400,
                                    detail="multipart field 'image' missing")
            raw = await upload.read()
            if form.get("threshold") not in (None, ""):
                threshold = float(form.get("threshold"))
            include_heatmaps = str(form.get("include_heatmaps", "")).lower() \
                in ("1", "true", "yes")
        else:
            try:
                body = await request.json()
            except Exception as exc:
                raise HTTPException(status_code=400,
                                    detail="request body is not JSON") from exc
            expression = str(body.get("expression") or "")
            b64 = body.get("image_base64")
            if not isinstance(b64, str) or not b64:
                raise HTTPException(status_code=400,
                                    detail="field 'image_base64' missing")
            try:
                raw = base64.b64decode(b64, validate=True)
            except Exception as exc:
                raise HTTPException(status_code=400,
                                    detail="image_base64 is not valid base64") \
                    from exc
            threshold = body.get("threshold")
            include_heatmaps = bool(body.get("include_heatmaps", False))
        if threshold is not None:
            threshold = float(threshold)
            if not 0.0 < threshold < 1.0:
                raise HTTPException(status_code=400,
                                    detail="threshold must lie in (0, 1)")

        if not expression.strip():
            raise HTTPException(status_code=400, detail="expression is empty")
        arr = _decode_image(raw, max_side)
        loaded = ensure_model()
        model, cfg = loaded["model"], loaded["cfg"]

        t0 = time.perf_counter()
        try:
            canvas, box = _letterbox(arr, cfg.model.image_size)
            image = torch.from_numpy(canvas[None, None])
            with torch.no_grad():
                feats = model.encode_expressions([expression])
                text = TextFeatures(features=feats.features, mask=feats.mask)
                logits, stages = model(image, text, return_stages=True)
                probs = torch.sigmoid(logits[0, 0]).numpy()
        except EmptyExpression as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except RefsegError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

        thr = cfg.decoder.threshold if threshold is None else threshold
        mapped = _map_back(probs, box, arr.shape)
        mask = (mapped > thr).astype(np.uint8)
        latency_ms = (time.perf_counter() - t0) * 1000.0

        payload = {
            "api_version": API_VERSION,
            "mask_rle": rle_encode(mask),
            "width": int(arr.shape[1]),
            "height": int(arr.shape[0]),
            "threshold": thr,
            "latency_ms": latency_ms,
            "model_id": loaded["model_id"],
            "config_hash": loaded["config_hash"],
        }
        if include_heatmaps:
            heats = []
            for feat in stages:
                heat = stage_heat(feat[0], cfg.model.image_size)
                mappedh = np.clip(_map_back(heat, box, arr.shape), 0.0, 1.0)
                heats.append(_png_base64(colormap(mappedh), mode="RGB"))
            payload["heatmaps"] = heats
        return JSONResponse(payload)

    return app
