"""Regenerate the wire-protocol golden pairs from the reference fixtures.

Usage: python scripts/gen_conformance.py
Writes src/patchlab/data/conformance.json deterministically; a test compares
the file against fresh fixture output, so run this after touching the
scripted oracle rules or the embedder.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from patchlab.imaging import Frame, frame_to_png
from patchlab.oracle import DEFAULT_PROMPT
from patchlab.scripted import (
    BOW_DIMENSION,
    BOW_SEED,
    CROSSWALK_SAFE_TEXT,
    CROSSWALK_TARGET_TEXT,
    HIGHWAY_TARGET_TEXT,
    PatchSensitiveOracle,
    bow_embed,
)

MAX_REQUEST_BYTES = 4 * 1024 * 1024


def reference_frames() -> dict[str, Frame]:
    plain = np.full((24, 24, 3), 120, dtype=np.uint8)
    placard = plain.copy()
    placard[6:16, 6:16] = (255, 0, 0)
    dim_placard = plain.copy()
    dim_placard[6:16, 6:16] = (180, 20, 20)  # red-dominant but under threshold
    return {
        "plain-road": Frame(plain),
        "red-placard": Frame(placard),
        "dim-placard": Frame(dim_placard),
    }


def main() -> None:
    vlm = PatchSensitiveOracle()
    infer_pairs = []
    for name, frame in reference_frames().items():
        png = frame_to_png(frame)
        infer_pairs.append(
            {
                "name": name,
                "image_png_b64": base64.b64encode(png).decode("ascii"),
                "prompt": DEFAULT_PROMPT,
                "text": vlm.infer(png, DEFAULT_PROMPT),
            }
        )

    embed_texts = {
        "brake": "brake",
        "crosswalk-target": CROSSWALK_TARGET_TEXT,
        "highway-target": HIGHWAY_TARGET_TEXT,
        "crosswalk-safe": CROSSWALK_SAFE_TEXT,
    }
    embed_pairs = [
        {"name": name, "text": text, "vector": bow_embed(text).tolist()}
        for name, text in embed_texts.items()
    ]

    doc = {
        "protocol": {
            "infer": 'POST /infer {"image_png_b64": str, "prompt": str} -> 200 {"text": str}',
            "embed": 'POST /embed {"text": str} -> 200 {"vector": [number...], "dim": int}',
            "health": 'GET /health -> 200 {"name": str, "version": str}',
            "errors": '400 {"error": str} for malformed input; 413 for bodies over '
            'max_request_bytes (servers must drain the request body before replying)',
        },
        "vlm_rule": {
            "kind": "channel-dominance",
            "channel": vlm.channel,
            "margin": vlm.margin,
            "min_pixels": vlm.min_pixels,
            "threshold": vlm.threshold,
            "safe_text": vlm.safe_text,
            "unsafe_text": vlm.unsafe_text,
            "description": (
                "decode 8-bit RGB; mask = pixels whose watched channel exceeds both "
                "others by margin; respond unsafe_text iff mask size >= min_pixels "
                "and float64 mean of the watched channel over the mask > threshold"
            ),
        },
        "embedder": {
            "kind": "bow-blake2b",
            "dimension": BOW_DIMENSION,
            "seed": BOW_SEED,
            "description": (
                "lowercase tokens [a-z0-9']+; coordinate = blake2b('{seed}:{token}', "
                "digest_size=8) as big-endian int mod dimension; accumulate counts; "
                "no normalization"
            ),
        },
        "limits": {"max_request_bytes": MAX_REQUEST_BYTES},
        "infer": infer_pairs,
        "embed": embed_pairs,
    }

    out = Path(__file__).resolve().parents[1] / "src" / "patchlab" / "data" / "conformance.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
