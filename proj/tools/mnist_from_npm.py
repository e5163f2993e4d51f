#!/usr/bin/env python3
# Copyright 2026 The fedmeta Authors.
# SPDX-License-Identifier: Apache-2.0
"""Convert the digit JSON files of the `mnist` npm package into IDX files.

Each `<digit>.json` holds {"data": [...]} with 784 floats in [0, 1] per image.
Every fifth image of each digit goes to the test split.
"""

import argparse
import json
import pathlib
import struct

ROWS = COLS = 28


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), ROWS, COLS))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--test-every", type=int, default=5)
    args = ap.parse_args()

    splits = {"train": ([], []), "t10k": ([], [])}
    per_digit = []
    for digit in range(10):
        flat = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        if len(flat) % (ROWS * COLS):
            raise SystemExit(f"{digit}.json: length {len(flat)} is not a multiple of 784")
        n = len(flat) // (ROWS * COLS)
        per_digit.append(n)
        for i in range(n):
            px = flat[i * ROWS * COLS:(i + 1) * ROWS * COLS]
            img = [min(255, max(0, round(v * 255))) for v in px]
            key = "t10k" if i % args.test_every == args.test_every - 1 else "train"
            splits[key][0].append(img)
            splits[key][1].append(digit)

    # Interleave classes so files are not sorted by label.
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for key, (images, labels) in splits.items():
        order = sorted(range(len(labels)), key=lambda i: ((i * 2654435761) % 2**32, i))
        write_images(args.out_dir / f"{key}-images-idx3-ubyte", [images[i] for i in order])
        write_labels(args.out_dir / f"{key}-labels-idx1-ubyte", [labels[i] for i in order])
        print(f"{key}: {len(labels)} images")
    print("per digit:", per_digit)


if __name__ == "__main__":
    main()
