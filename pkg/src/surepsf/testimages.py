"""Test images for simulations.

``astronaut`` is a 256x256 grayscale rendition of the public-domain NASA
portrait shipped with scikit-image (2x2 block-averaged luminosity).
``dead_leaves`` is a procedural occlusion texture with natural-image-like
power spectrum, generated from a seed and available at any size.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .imageio import read_image

__all__ = ["astronaut", "dead_leaves", "load_test_image"]


def astronaut() -> np.ndarray:
    ref = resources.files("surepsf").joinpath("data/astronaut256.pgm")
    with resources.as_file(ref) as path:
        return read_image(path)


def dead_leaves(shape=(256, 256), seed=0, n_disks=None, rmin=1.0, rmax=None) -> np.ndarray:
    """Random occluding disks with ``1/r^3`` radius law, values in ``[0, 1]``.

    Disks are drawn back to front with periodic wrap so the texture has no
    boundary seam.
    """
    m, n = shape
    rng = np.random.Generator(np.random.PCG64(seed))
    rmax = rmax or min(m, n) / 4.0
    n_disks = n_disks or int(3 * m * n / (np.pi * rmin * rmax))
    img = np.full((m, n), 0.5)
    yy, xx = np.mgrid[0:m, 0:n]
    # inverse-CDF sampling of p(r) ~ r^-3 on [rmin, rmax]
    t = rng.random(n_disks)
    radii = 1.0 / np.sqrt(1.0 / rmin**2 - t * (1.0 / rmin**2 - 1.0 / rmax**2))
    cy = rng.random(n_disks) * m
    cx = rng.random(n_disks) * n
    vals = rng.random(n_disks)
    for r, y0, x0, val in zip(radii, cy, cx, vals):
        dy = np.abs(yy - y0)
        dy = np.minimum(dy, m - dy)
        dx = np.abs(xx - x0)
        dx = np.minimum(dx, n - dx)
        img[dy**2 + dx**2 <= r * r] = val
    return img


def load_test_image(name="astronaut", shape=None, seed=0) -> np.ndarray:
    """Load a named test image or an image file (RGB is reduced to luminosity)."""
    if name == "astronaut":
        img = astronaut()
    elif name == "dead_leaves":
        img = dead_leaves(shape or (256, 256), seed=seed)
    else:
        img = read_image(Path(name))
        if img.ndim == 3:
            from .tiler import luminosity

            img = luminosity(img[..., 0], img[..., 1], img[..., 2])
    if shape is not None and img.shape != tuple(shape):
        m, n = shape
        if img.shape[0] < m or img.shape[1] < n:
            raise ValueError(f"image {img.shape} smaller than requested {shape}")
        img = img[:m, :n]
    return img
