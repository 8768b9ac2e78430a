"""Smoke tests for the protomask python module.

Checks the bound operations against plain numpy re-implementations and runs
a miniature train/evaluate cycle end to end.
"""

import json
import math
import os
import shutil
import sys
import tempfile

import numpy as np
import protomask as pm

failures = []


def check(label, ok):
    print(("ok: " if ok else "FAIL: ") + label)
    if not ok:
        failures.append(label)


# --- similarity against the closed form ------------------------------------
z = np.array([0.1, 0.9, -0.4])
p = np.array([0.3, 0.2, 0.0])
d2 = float(((z - p) ** 2).sum())
check(
    "similarity matches log(1 + 1/(d2+eps))",
    abs(pm.similarity(z, p, 1e-4) - math.log1p(1.0 / (d2 + 1e-4))) < 1e-12,
)
check("similarity identity", pm.similarity(z, z, 1e-4) == math.log1p(1e4))

# --- losses against numpy brute force ---------------------------------------
rng = np.random.default_rng(0)
N, V, D, P = 4, 3, 5, 6
Z = rng.normal(size=(N, V, D))
valid = np.ones((N, V), dtype=np.uint8)
valid[2, 2] = 0
labels = np.array([0, 1, 2, 0], dtype=np.int32)
protos = rng.normal(size=(P, D))
proto_class = np.array([0, 0, 1, 1, 2, 2], dtype=np.int32)


def brute_double_min(same):
    total = 0.0
    for i in range(N):
        best = math.inf
        for j in range(P):
            if (proto_class[j] == labels[i]) != same:
                continue
            for v in range(V):
                if not valid[i, v]:
                    continue
                best = min(best, float(((Z[i, v] - protos[j]) ** 2).sum()))
        total += best
    return total / N


check(
    "cluster_loss matches brute force",
    abs(pm.cluster_loss(Z, valid, labels, protos, proto_class) - brute_double_min(True)) < 1e-12,
)
check(
    "separation_loss matches brute force",
    abs(pm.separation_loss(Z, valid, labels, protos, proto_class) + brute_double_min(False))
    < 1e-12,
)

alpha = 0.2
div = 0.0
for k in range(3):
    members = [j for j in range(P) if proto_class[j] == k]
    s = sum(
        float(((protos[a] - protos[b]) ** 2).sum())
        for a in members
        for b in members
        if a != b
    )
    div += math.exp(-alpha * s)
check(
    "diversity_loss matches brute force",
    abs(pm.diversity_loss(protos, proto_class, alpha) - div) < 1e-12,
)
check("l1_head_penalty", pm.l1_head_penalty([[1.0, -2.0], [0.0, 0.5]]) == 3.5)

# --- similarity_matrix / max_pool -------------------------------------------
sim = pm.similarity_matrix(Z[0], protos, proto_class, 1e-4)
expect = np.log1p(1.0 / (((protos[:, None, :] - Z[0][None, :, :]) ** 2).sum(-1) + 1e-4))
check("similarity_matrix matches numpy", np.allclose(sim, expect, atol=1e-12))
pooled, argmax = pm.max_pool(sim, np.ones(V, dtype=np.uint8))
check("max_pool matches numpy", np.allclose(pooled, expect.max(axis=1)))
check("max_pool argmax matches numpy", np.array_equal(argmax, expect.argmax(axis=1)))

# --- toy segmenter partitions the image --------------------------------------
masks = pm.toy_grid_segmenter("imgA", 40, 40, 2, 3, jitter_seed=5)
total = np.zeros((40, 40), dtype=np.int64)
for m in masks:
    total += np.asarray(m["mask"], dtype=np.int64)
check("toy grid masks partition the image", bool((total == 1).all()))
check("toy grid areas sorted", all(
    masks[i]["area_fraction"] >= masks[i + 1]["area_fraction"] for i in range(len(masks) - 1)
))

# --- contours_to_masks against scipy's connected components -----------------
from scipy import ndimage

contour = np.zeros((24, 24))
contour[:, 12] = 1.0
contour[6, :] = 1.0
result = pm.contours_to_masks(contour, threshold=0.5, dilation=3)
blocked = ndimage.binary_dilation(contour >= 0.5, structure=np.ones((3, 3)))
labeled, n = ndimage.label(~blocked)  # 4-connectivity default
sizes = ndimage.sum(~blocked, labeled, range(1, n + 1))
check("contours_to_masks matches scipy.ndimage.label", len(result) == int((sizes >= 4).sum()))

# --- select_view_count --------------------------------------------------------
check(
    "select_view_count threshold arithmetic",
    pm.select_view_count([[0.1, 0.05, 0.015, 0.008], [0.08, 0.04, 0.01, 0.008]]) == 3,
)
check("select_view_count floor", pm.select_view_count([[0.001]]) == 1)

# --- mask object overlap ------------------------------------------------------
mask = np.zeros((10, 10), dtype=np.uint8)
mask[:, :4] = 1
obj = np.zeros((10, 10), dtype=np.uint8)
obj[:, :2] = 1
check("mask_object_overlap", pm.mask_object_overlap(mask, obj) == 0.5)

# --- miniature end-to-end -----------------------------------------------------
work = tempfile.mkdtemp(prefix="protomask_smoke_")
try:
    ds = pm.generate_synthetic_dataset(
        seed=3, classes=2, per_class=4, test_per_class=2, resolution=32, out_dir=work + "/data"
    )
    cfg = json.dumps(
        {
            "seed": 3,
            "segmentation": {"method": "toy", "rows": 2, "cols": 2, "include_full_view": True},
            "views": {"count": "auto", "resolution": [16, 16]},
            "model": {"widths": [4, 8], "embedding_dim": 8, "prototypes_per_class": 2},
            "schedule": {
                "warmup_epochs": 1,
                "joint_epochs": 2,
                "finetune_epochs": 1,
                "batch_size": 4,
            },
            "augment": {"enabled": False},
        }
    )
    pm.segment(cfg, ds["train_manifest"], work + "/seg_train")
    pm.segment(cfg, ds["test_manifest"], work + "/seg_test")
    pm.train(cfg, ds["train_manifest"], work + "/seg_train/masks", work + "/run")
    report = pm.evaluate(
        cfg,
        work + "/run/checkpoint.bin",
        ds["test_manifest"],
        work + "/seg_test/masks",
        work + "/eval",
    )
    check("train produced a checkpoint", os.path.exists(work + "/run/checkpoint.bin"))
    check("evaluate returned a full report", report["consistency"] is not None)
    check("accuracy is a percentage", 0.0 <= report["accuracy"] <= 100.0)
    check(
        "overlap components sum to 100",
        abs(report["object_overlap"] + report["background_overlap"] - 100.0) < 1e-9,
    )

    emb = pm.embed_split(cfg, work + "/run/checkpoint.bin", ds["test_manifest"], work + "/seg_test/masks")
    Zs = np.asarray(emb["embeddings"])
    check("embed_split shape", Zs.shape == (4, 5, 8))
    check("embeddings in the unit box", bool((Zs > 0).all() and (Zs < 1).all()))

    # errors surface as the registered exception type
    try:
        pm.contours_to_masks(np.ones((8, 8)), threshold=0.5, dilation=3)
        check("all-contour image raises", False)
    except pm.ProtoMaskError:
        check("all-contour image raises", True)
finally:
    shutil.rmtree(work, ignore_errors=True)

if failures:
    print(f"{len(failures)} smoke checks failed")
    sys.exit(1)
print("all smoke checks passed")
