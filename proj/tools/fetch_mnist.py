#!/usr/bin/env python3
"""Fetch MNIST digits and write them as standard IDX files.

The upstream MNIST host is frequently unreachable from build machines, so by
default the digits are taken from the `mnist` npm package (10,000 genuine
MNIST test digits stored as per-class JSON with pixels scaled to [0, 1]).
They are re-quantised to bytes and split per class into a train and a test
source so that synthesized train/test images never share a digit instance.

If the original IDX files are already available, pass --idx-dir instead and
they are copied through unchanged.

Usage:
    python3 tools/fetch_mnist.py --out data/mnist [--test-fraction 0.2]
"""

import argparse
import json
import pathlib
import shutil
import struct
import subprocess
import tarfile
import tempfile

ROWS = COLS = 28


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), ROWS, COLS))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def npm_digits(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=workdir,
                   check=True, stdout=subprocess.DEVNULL)
    tgz = next(pathlib.Path(workdir).glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tar:
        tar.extractall(workdir)
    digits = {}
    for d in range(10):
        raw = json.loads((pathlib.Path(workdir) / "package" / "src" / "digits"
                          / f"{d}.json").read_text())["data"]
        if len(raw) % (ROWS * COLS) != 0:
            raise SystemExit(f"digit {d}: payload is not a multiple of 784")
        pixels = [min(255, max(0, round(v * 255))) for v in raw]
        digits[d] = [pixels[i:i + ROWS * COLS]
                     for i in range(0, len(pixels), ROWS * COLS)]
    return digits


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--test-fraction", type=float, default=0.2)
    ap.add_argument("--idx-dir", help="copy existing IDX files from here")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.idx_dir:
        for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                     "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            shutil.copyfile(pathlib.Path(args.idx_dir) / name, out / name)
        return

    with tempfile.TemporaryDirectory() as tmp:
        digits = npm_digits(tmp)

    train_x, train_y, test_x, test_y = [], [], [], []
    for d in range(10):
        imgs = digits[d]
        n_test = int(round(len(imgs) * args.test_fraction))
        split = len(imgs) - n_test
        train_x += imgs[:split]
        train_y += [d] * split
        test_x += imgs[split:]
        test_y += [d] * n_test

    write_idx_images(out / "train-images-idx3-ubyte", train_x)
    write_idx_labels(out / "train-labels-idx1-ubyte", train_y)
    write_idx_images(out / "t10k-images-idx3-ubyte", test_x)
    write_idx_labels(out / "t10k-labels-idx1-ubyte", test_y)
    print(f"wrote {len(train_x)} train / {len(test_x)} test digits to {out}")


if __name__ == "__main__":
    main()
