#!/usr/bin/env python3
"""Build a 28x28 handwritten-digit dataset in IDX format.

The sandbox has no network access to fetch MNIST itself, so this uses the
handwritten-digit images bundled with scikit-learn (1797 real 8x8 samples),
bilinearly upscaled to 28x28. The training split is padded to the requested
size with small deterministic pixel shifts; the test split is untouched
originals. Output is bit-deterministic for a fixed seed.
"""

import argparse
from pathlib import Path

import numpy as np
from scipy import ndimage
from sklearn.datasets import load_digits

from qcaps.model_io import save_idx


def upscale(images8: np.ndarray) -> np.ndarray:
    """8x8 float (0..16) -> 28x28 uint8 (0..255)."""
    out = np.empty((len(images8), 28, 28), dtype=np.uint8)
    for i, img in enumerate(images8):
        big = ndimage.zoom(img / 16.0, 28 / 8, order=1)
        out[i] = np.clip(np.round(big * 255.0), 0, 255).astype(np.uint8)
    return out


def shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    canvas = np.zeros_like(img)
    h, w = img.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    yd = slice(max(-dy, 0), min(h - dy, h))
    xd = slice(max(-dx, 0), min(w - dx, w))
    canvas[ys, xs] = img[yd, xd]
    return canvas


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--train", type=int, default=2000)
    parser.add_argument("--test", type=int, default=400)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    bundle = load_digits()
    images = upscale(bundle.images)
    labels = bundle.target.astype(np.uint8)

    gen = np.random.default_rng(args.seed)
    order = gen.permutation(len(images))
    images, labels = images[order], labels[order]

    if args.test > len(images) // 3:
        raise SystemExit(f"test split {args.test} too large for "
                         f"{len(images)} base samples")
    test_imgs, test_lbls = images[:args.test], labels[:args.test]
    pool_imgs, pool_lbls = images[args.test:], labels[args.test:]

    train_imgs = list(pool_imgs)
    train_lbls = list(pool_lbls)
    i = 0
    while len(train_imgs) < args.train:
        dy, dx = gen.integers(-2, 3, size=2)
        if dy == 0 and dx == 0:
            dy = 1
        train_imgs.append(shift(pool_imgs[i % len(pool_imgs)], int(dy), int(dx)))
        train_lbls.append(pool_lbls[i % len(pool_lbls)])
        i += 1
    train_imgs = np.stack(train_imgs[:args.train])
    train_lbls = np.array(train_lbls[:args.train], dtype=np.uint8)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_idx(train_imgs, train_lbls,
             out / "train-images.idx3-ubyte", out / "train-labels.idx1-ubyte")
    save_idx(test_imgs, test_lbls,
             out / "t10k-images.idx3-ubyte", out / "t10k-labels.idx1-ubyte")
    print(f"wrote {len(train_imgs)} train / {len(test_imgs)} test samples to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
