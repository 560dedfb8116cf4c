#!/usr/bin/env python3
"""Regenerates the JPEG fixtures under testdata/ using third-party encoders.

The files are produced by libjpeg (through Pillow and OpenCV), never by the
encoder in this repository, so decoder tests compare against an independent
bitstream producer. Output is deterministic for a given seed.

    python3 testdata/generate.py
"""

import io
import os
import subprocess
import tempfile

import cv2
import numpy as np
from PIL import Image

HERE = os.path.dirname(os.path.abspath(__file__))
RNG = np.random.default_rng(20240607)


def smooth_noise(h, w, scale):
    small = RNG.uniform(0, 255, size=(max(2, h // scale), max(2, w // scale), 3))
    return cv2.resize(small.astype(np.float32), (w, h), interpolation=cv2.INTER_CUBIC)


def scene(h, w, kind):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    if kind == "gradient":
        img = np.stack([255 * xx / max(w - 1, 1), 255 * yy / max(h - 1, 1),
                        255 * (xx + yy) / max(w + h - 2, 1)], axis=-1)
    elif kind == "noise":
        img = RNG.uniform(0, 255, size=(h, w, 3))
    elif kind == "smooth":
        img = smooth_noise(h, w, 16)
    elif kind == "shapes":
        img = np.full((h, w, 3), 40.0)
        for _ in range(6):
            c = RNG.uniform(0, 255, 3)
            x0, y0 = RNG.integers(0, w), RNG.integers(0, h)
            x1, y1 = x0 + RNG.integers(4, max(5, w // 2)), y0 + RNG.integers(4, max(5, h // 2))
            img[y0:y1, x0:x1] = c
        cv2.circle(img, (w // 2, h // 2), max(2, min(h, w) // 4), (250, 30, 90), -1)
    elif kind == "rings":
        r = np.hypot(xx - w / 2, yy - h / 2)
        img = np.stack([127 + 127 * np.sin(r / 3), 127 + 127 * np.cos(r / 5),
                        127 + 127 * np.sin(r / 7 + 1)], axis=-1)
    elif kind == "saturated":
        img = np.zeros((h, w, 3))
        img[:, : w // 3] = (255, 0, 0)
        img[:, w // 3: 2 * w // 3] = (0, 255, 0)
        img[:, 2 * w // 3:] = (0, 0, 255)
        img[h // 2:] = 255 - img[h // 2:]
    else:
        raise ValueError(kind)
    return np.clip(img, 0, 255).astype(np.uint8)


def save_pil(path, rgb, **kw):
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, format="JPEG", **kw)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def save_cv2_444(path, rgb, quality, rst_interval):
    params = [cv2.IMWRITE_JPEG_QUALITY, quality,
              cv2.IMWRITE_JPEG_SAMPLING_FACTOR, cv2.IMWRITE_JPEG_SAMPLING_FACTOR_444]
    if rst_interval:
        params += [cv2.IMWRITE_JPEG_RST_INTERVAL, rst_interval]
    ok, data = cv2.imencode(".jpg", cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR), params)
    assert ok
    with open(path, "wb") as f:
        f.write(data.tobytes())


def main():
    corpus = os.path.join(HERE, "corpus444")
    os.makedirs(corpus, exist_ok=True)
    kinds = ["gradient", "noise", "smooth", "shapes", "rings", "saturated"]
    sizes = [(64, 64), (37, 53), (120, 90), (200, 150), (96, 128), (300, 300),
             (17, 9), (160, 160)]
    qualities = [50, 75, 90, 95]
    n = 0
    for i, (h, w) in enumerate(sizes):
        for j in range(2):
            kind = kinds[(i + 3 * j) % len(kinds)]
            q = qualities[(i + j) % len(qualities)]
            rgb = scene(h, w, kind)
            name = os.path.join(corpus, f"img{n:02d}_{kind}_{w}x{h}_q{q}.jpg")
            save_pil(name, rgb, quality=q, subsampling=0)
            n += 1
    # restart markers (OpenCV exposes the libjpeg restart interval)
    for k, (h, w, rst) in enumerate([(64, 80, 1), (128, 128, 3), (75, 99, 2),
                                     (240, 200, 7), (48, 48, 0), (256, 64, 5)]):
        kind = kinds[k % len(kinds)]
        rgb = scene(h, w, kind)
        name = os.path.join(corpus, f"img{n:02d}_{kind}_{w}x{h}_rst{rst}.jpg")
        save_cv2_444(name, rgb, 85, rst)
        n += 1

    misc = os.path.join(HERE, "misc")
    os.makedirs(misc, exist_ok=True)
    save_pil(os.path.join(misc, "yuv420_300x300.jpg"), scene(300, 300, "smooth"),
             quality=85, subsampling=2)
    save_pil(os.path.join(misc, "yuv420_304x304.jpg"), scene(304, 304, "shapes"),
             quality=85, subsampling=2)
    save_pil(os.path.join(misc, "yuv420_290x290.jpg"), scene(290, 290, "rings"),
             quality=85, subsampling=2)
    save_pil(os.path.join(misc, "yuv422_64x64.jpg"), scene(64, 64, "gradient"),
             quality=85, subsampling=1)
    save_pil(os.path.join(misc, "progressive_64x64.jpg"), scene(64, 64, "gradient"),
             quality=85, progressive=True)
    Image.new("L", (8, 8), 128).save(os.path.join(misc, "gray_8x8_mid.jpg"), quality=90)
    gray = cv2.cvtColor(scene(100, 140, "rings"), cv2.COLOR_RGB2GRAY)
    Image.fromarray(gray).save(os.path.join(misc, "gray_140x100.jpg"), quality=80)
    print(f"wrote {n} corpus images")
    write_references(corpus)


def write_references(corpus):
    """Decode the 4:4:4 corpus with libjpeg (float IDCT) into PNG references.

    RGB output goes to reference444/<stem>.png, the per-component YCbCr
    samples to reference444/<stem>.ycc.png.
    """
    tool = os.path.join(HERE, "tools", "refdecode")
    subprocess.run(["cc", "-O2", "-o", tool, os.path.join(HERE, "tools", "refdecode.c"),
                    "-ljpeg"], check=True)
    out = os.path.join(HERE, "reference444")
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        for name in sorted(os.listdir(corpus)):
            stem = name[:-4]
            for suffix, extra in (("", []), (".ycc", ["ycc"])):
                ppm = os.path.join(tmp, stem + suffix + ".ppm")
                subprocess.run([tool, os.path.join(corpus, name), ppm, *extra], check=True)
                Image.open(ppm).save(os.path.join(out, stem + suffix + ".png"))
    os.remove(tool)


if __name__ == "__main__":
    main()
