#!/usr/bin/env python3
"""Reference AP/mAP for the fixture in testdata/eval, written without
looking at the Rust evaluator.

    python3 testdata/tools/map_oracle.py > testdata/eval/expected.json
"""

import json
import os

import numpy as np

EVAL = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "eval")


def load(name):
    with open(os.path.join(EVAL, name)) as f:
        return [json.loads(line) for line in f if line.strip()]


def overlap(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def labels_for(cls, gts, dets, thr):
    objs = {}
    for g in gts:
        if g["class"] == cls:
            objs.setdefault(g["image"], []).append({"box": g["bbox"], "difficult": g.get("difficult", False), "used": False})
    mine = sorted((d for d in dets if d["class"] == cls), key=lambda d: -d["score"])
    tp, fp = [], []
    for d in mine:
        cands = [o for o in objs.get(d["image"], []) if not o["used"]]
        ious = [overlap(d["bbox"], o["box"]) for o in cands]
        if ious and max(ious) >= thr:
            o = cands[int(np.argmax(ious))]
            if o["difficult"]:
                continue
            o["used"] = True
            tp.append(1)
            fp.append(0)
        else:
            tp.append(0)
            fp.append(1)
    npos = sum(1 for g in gts if g["class"] == cls and not g.get("difficult", False))
    return np.array(tp, dtype=float), np.array(fp, dtype=float), npos


def ap_voc11(rec, prec):
    total = 0.0
    for t in np.linspace(0, 1, 11):
        total += prec[rec >= t].max() if np.any(rec >= t) else 0.0
    return total / 11.0


def ap_area(rec, prec):
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def class_ap(cls, gts, dets, thr, rule):
    tp, fp, npos = labels_for(cls, gts, dets, thr)
    if npos == 0:
        return 0.0
    ctp, cfp = np.cumsum(tp), np.cumsum(fp)
    rec = ctp / npos
    prec = ctp / np.maximum(ctp + cfp, np.finfo(float).tiny)
    return rule(rec, prec)


def main():
    gts, dets = load("gt.jsonl"), load("dets.jsonl")
    classes = sorted({g["class"] for g in gts})
    out = {}
    for mode in ("voc11", "area", "coco"):
        per = {}
        for c in classes:
            if mode == "voc11":
                per[c] = class_ap(c, gts, dets, 0.5, ap_voc11)
            elif mode == "area":
                per[c] = class_ap(c, gts, dets, 0.5, ap_area)
            else:
                per[c] = float(np.mean([class_ap(c, gts, dets, t, ap_area) for t in np.arange(10) * 0.05 + 0.5]))
        out[mode] = {"per_class": per, "map": float(np.mean(list(per.values())))}
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
