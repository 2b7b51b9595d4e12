"""Shared fixtures: synthetic cell images and on-disk dataset trees.

The two synthetic classes are oriented stripe textures (vertical for class 0,
horizontal for class 1) with a little per-image noise. The orientation
difference survives resizing, augmentation and 8-bit PNG quantisation, so
tiny networks can separate the classes quickly.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

STRIPE_PERIOD = 9.0


def synth_image(rng, label, size=130):
    """One stripe-textured image in [0, 1], float32 (size, size, 3)."""
    coords = np.arange(size, dtype=np.float32)
    wave = 0.5 + 0.45 * np.sin(coords * (2 * np.pi / STRIPE_PERIOD))
    if label == 0:
        img = np.repeat(wave[None, :], size, axis=0)
    else:
        img = np.repeat(wave[:, None], size, axis=1)
    img = img[..., None] + rng.normal(0.0, 0.05, size=(size, size, 3))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_records(n, seed=42, size=130):
    """n in-memory records alternating class 0, 1, 0, 1, ..."""
    from ulsq import data

    rng = np.random.default_rng(seed)
    return [data.ImageRecord(f"mem/{i}.png", i % 2, synth_image(rng, i % 2, size))
            for i in range(n)]


def write_png(path, pixels):
    arr = np.clip(np.asarray(pixels) * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def make_dataset_tree(root, per_class, seed=42, size=130):
    """Parasitized/ and Uninfected/ directories of stripe PNGs under root."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for label, dirname in ((0, "Parasitized"), (1, "Uninfected")):
        d = root / dirname
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            write_png(d / f"cell_{i:04d}.png", synth_image(rng, label, size))
    return root


@pytest.fixture
def dataset_tree(tmp_path):
    """Small dataset on disk: 10 images per class."""
    return make_dataset_tree(tmp_path / "cells", per_class=10)


def run_cli(argv):
    """Invoke the command line in-process; returns its exit code."""
    from ulsq import cli

    return cli.main(list(argv))
