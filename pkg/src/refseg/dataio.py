"""Dataset directory layout and (de)serialization.

::

    root/
      meta.json
      train/
        images/00000.png       8-bit grayscale
        masks/00000.png        0 background, 255 lesion
        annotations.jsonl      one record per sample
      val/ ...

Annotation records carry the four core fields (image, mask, expression,
seed) plus the generator metadata (clauses, lesions, target_index,
disambiguation) that partial-text evaluation needs.  The loader tolerates
records that only have the core fields.
"""
from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
from PIL import Image

from .config import GeneratorConfig
from .errors import MalformedRecord, MissingFile
from .synthetic import LesionSpec, ReferringSample

REQUIRED_FIELDS = ("image", "mask", "expression", "seed")


def _save_png(arr: np.ndarray, path: str):
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def write_dataset(samples, root, split) -> str:
    """Write one split; returns the split directory."""
    split_dir = os.path.join(root, split)
    os.makedirs(os.path.join(split_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(split_dir, "masks"), exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        name = f"{i:05d}.png"
        _save_png(np.round(s.image * 255.0).astype(np.uint8),
                  os.path.join(split_dir, "images", name))
        _save_png((s.mask * 255).astype(np.uint8),
                  os.path.join(split_dir, "masks", name))
        records.append({
            "image": f"images/{name}",
            "mask": f"masks/{name}",
            "expression": s.expression,
            "seed": int(s.seed),
            "clauses": list(s.clauses),
            "target_index": int(s.target_index),
            "disambiguation": bool(s.disambiguation),
            "lesions": [sp.to_dict() for sp in s.lesions],
        })
    with open(os.path.join(split_dir, "annotations.jsonl"), "w",
              encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return split_dir


def write_meta(root, cfg: GeneratorConfig, master_seed: int, counts: dict):
    os.makedirs(root, exist_ok=True)
    meta = {
        "master_seed": int(master_seed),
        "splits": {k: int(v) for k, v in counts.items()},
        "generator": dataclasses.asdict(cfg),
    }
    with open(os.path.join(root, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_meta(root) -> dict:
    path = os.path.join(root, "meta.json")
    if not os.path.isfile(path):
        raise MissingFile(f"no meta.json under {root}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_dataset(root, split) -> list:
    """Read a split back into ReferringSample objects."""
    split_dir = os.path.join(root, split)
    ann = os.path.join(split_dir, "annotations.jsonl")
    if not os.path.isfile(ann):
        raise MissingFile(f"no annotations.jsonl under {split_dir}")
    samples = []
    with open(ann, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"{ann}:{lineno}: {exc}") from exc
            missing = [f for f in REQUIRED_FIELDS if f not in rec]
            if missing:
                raise MalformedRecord(
                    f"{ann}:{lineno}: record misses fields {missing}"
                )
            img_path = os.path.join(split_dir, rec["image"])
            mask_path = os.path.join(split_dir, rec["mask"])
            for p in (img_path, mask_path):
                if not os.path.isfile(p):
                    raise MissingFile(f"{ann}:{lineno}: no such file {p}")
            image = np.asarray(Image.open(img_path).convert("L"),
                               dtype=np.float32) / 255.0
            mask = (np.asarray(Image.open(mask_path).convert("L")) > 127)
            samples.append(ReferringSample(
                image=image,
                mask=mask.astype(np.uint8),
                expression=rec["expression"],
                clauses=list(rec.get("clauses", [rec["expression"]])),
                lesions=[LesionSpec.from_dict(d) for d in rec.get("lesions", [])],
                target_index=int(rec.get("target_index", 0)),
                seed=int(rec["seed"]),
                disambiguation=bool(rec.get("disambiguation", False)),
            ))
    return samples
