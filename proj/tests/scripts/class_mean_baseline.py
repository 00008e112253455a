#!/usr/bin/env python3
"""Per-class mean colour baseline.

Learns the mean RGB of every layout class over the training scenes, paints
each held-out layout with those means and prints the mean absolute error in
[-1, 1] pixel units (the same scale as the trainer's held-out L1).

usage: class_mean_baseline.py MANIFEST --holdout N
"""

import argparse
import pathlib
import sys

import numpy as np


def read_pnm(path):
    data = pathlib.Path(path).read_bytes()
    fields, pos = [], 2
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM")
    while len(fields) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while data[end:end + 1].isdigit():
            end += 1
        fields.append(int(data[pos:end]))
        pos = end
    pos += 1
    width, height, _ = fields
    channels = 3 if magic == b"P6" else 1
    raster = np.frombuffer(data[pos:], dtype=np.uint8)
    return raster.reshape(height, width, channels) if channels == 3 else raster.reshape(height, width)


def to_unit(img):
    return img.astype(np.float64) * (2.0 / 255.0) - 1.0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("manifest")
    ap.add_argument("--holdout", type=int, required=True)
    args = ap.parse_args()

    base = pathlib.Path(args.manifest).parent
    rows = [line.split("\t") for line in pathlib.Path(args.manifest).read_text().splitlines()[1:] if line]
    train, held = rows[: len(rows) - args.holdout], rows[len(rows) - args.holdout:]
    if not train or not held:
        sys.exit("need both training and held-out scenes")

    sums, counts = {}, {}
    for layout_path, target_path, *_ in train:
        layout = read_pnm(base / layout_path)
        target = to_unit(read_pnm(base / target_path))
        for cls in np.unique(layout):
            mask = layout == cls
            sums[cls] = sums.get(cls, 0.0) + target[mask].sum(axis=0)
            counts[cls] = counts.get(cls, 0) + int(mask.sum())
    means = {cls: sums[cls] / counts[cls] for cls in sums}
    fallback = sum(sums.values()) / sum(counts.values())

    errors = []
    for layout_path, target_path, *_ in held:
        layout = read_pnm(base / layout_path)
        target = to_unit(read_pnm(base / target_path))
        pred = np.zeros_like(target)
        for cls in np.unique(layout):
            pred[layout == cls] = means.get(cls, fallback)
        errors.append(np.abs(pred - target).mean())
    print(f"{np.mean(errors):.6f}")


if __name__ == "__main__":
    main()
