"""Binarization and thinning of signature images.

Images are plain numpy arrays: grayscale images are 2-D ``uint8`` arrays
(0 = black ink, 255 = white background), binary and skeleton images are 2-D
``bool`` arrays with ``True`` marking ink.
"""

from __future__ import annotations

import logging
import warnings
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateWarning

log = logging.getLogger(__name__)

# 8-neighbourhood in Zhang-Suen order P2..P9: N, NE, E, SE, S, SW, W, NW.
NEIGHBOUR_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def load_image(path) -> np.ndarray:
    """Read a PNG as 8-bit grayscale; colour channels are averaged."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., :3].astype(float).mean(axis=2).round()
    return as_gray(arr)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a boolean mask as a black-ink-on-white PNG."""
    Image.fromarray(np.where(mask, 0, 255).astype(np.uint8), mode="L").save(path)


def as_gray(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("grayscale intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def otsu_threshold(image) -> int | None:
    """Return the Otsu threshold ``t`` (ink is ``pixel <= t``), or None if uniform.

    Ties between thresholds with equal inter-class variance go to the smallest.
    """
    gray = as_gray(image)
    hist = np.bincount(gray.ravel(), minlength=256).astype(float)
    total = hist.sum()
    levels = np.arange(256, dtype=float)
    w0 = np.cumsum(hist)
    s0 = np.cumsum(hist * levels)
    w1 = total - w0
    s1 = s0[-1] - s0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = s0 / w0
        m1 = s1 / w1
        between = (w0 / total) * (w1 / total) * (m0 - m1) ** 2
    between[~valid] = -1.0
    return int(np.argmax(between))


def binarize(image) -> np.ndarray:
    """Global Otsu binarization. Uniform images yield an empty mask and a warning."""
    gray = as_gray(image)
    t = otsu_threshold(gray)
    if t is None:
        warnings.warn("uniform image: no ink detected", DegenerateWarning, stacklevel=2)
        return np.zeros(gray.shape, dtype=bool)
    return gray <= t


def _ring_tables():
    """Per 8-bit neighbourhood code: neighbour count, 0->1 transitions, simple-point flag."""
    count = np.zeros(256, dtype=np.int8)
    transitions = np.zeros(256, dtype=np.int8)
    simple = np.zeros(256, dtype=bool)
    for code in range(256):
        ring = [(code >> k) & 1 for k in range(8)]
        count[code] = sum(ring)
        transitions[code] = sum(ring[k] == 0 and ring[(k + 1) % 8] == 1 for k in range(8))

        # ink neighbours under 8-adjacency: consecutive ring cells, plus the
        # edge-neighbours N, E, S, W which touch each other diagonally
        parent = list(range(8))

        def find(a):
            while parent[a] != a:
                a = parent[a]
            return a

        for k in range(8):
            pairs = [(k, (k + 1) % 8)]
            if k % 2 == 0:
                pairs.append((k, (k + 2) % 8))
            for a, b in pairs:
                if ring[a] and ring[b]:
                    parent[find(a)] = find(b)
        ink_components = len({find(k) for k in range(8) if ring[k]})

        # background runs under 4-adjacency that touch the centre through N/E/S/W
        if not any(ring):
            bg_components = 1
        elif all(ring):
            bg_components = 0
        else:
            start = ring.index(1)
            bg_components, in_run, touches = 0, False, False
            for step in range(1, 9):
                k = (start + step) % 8
                if ring[k] == 0:
                    in_run = True
                    touches = touches or k % 2 == 0
                elif in_run:
                    bg_components += touches
                    in_run, touches = False, False
        simple[code] = ink_components == 1 and bg_components == 1
    return count, transitions, simple


_COUNT, _TRANSITIONS, _SIMPLE = _ring_tables()


def neighbour_codes(mask: np.ndarray) -> np.ndarray:
    """8-bit code of each pixel's neighbourhood; bit k is neighbour P(k+2)."""
    padded = np.pad(mask, 1).astype(np.uint8)
    h, w = mask.shape
    code = np.zeros((h, w), dtype=np.uint8)
    for k, (dy, dx) in enumerate(NEIGHBOUR_OFFSETS):
        code |= padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] << k
    return code


def neighbour_count(mask: np.ndarray) -> np.ndarray:
    return _COUNT[neighbour_codes(mask)]


def _local_code(mask: np.ndarray, y: int, x: int) -> int:
    h, w = mask.shape
    code = 0
    for k, (dy, dx) in enumerate(NEIGHBOUR_OFFSETS):
        yy, xx = y + dy, x + dx
        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx]:
            code |= 1 << k
    return code


def _delete_sequentially(mask: np.ndarray, candidates: np.ndarray) -> bool:
    """Remove candidates in raster order, re-checking each one against the current mask.

    A pixel is only removed if it is still a simple point with at least two
    ink neighbours, so no component can split or vanish.
    """
    changed = False
    for y, x in zip(*np.nonzero(candidates)):
        code = _local_code(mask, y, x)
        if _SIMPLE[code] and _COUNT[code] >= 2:
            mask[y, x] = False
            changed = True
    return changed


def _zhang_suen_pass(mask: np.ndarray) -> bool:
    changed = False
    for step in (0, 1):
        code = neighbour_codes(mask)
        bits = [(code >> k) & 1 for k in range(8)]
        p2, p4, p6, p8 = bits[0], bits[2], bits[4], bits[6]
        b = _COUNT[code]
        cand = mask & (b >= 2) & (b <= 6) & (_TRANSITIONS[code] == 1)
        if step == 0:
            cand &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
        else:
            cand &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
        changed |= _delete_sequentially(mask, cand)
    return changed


def _staircase_pass(mask: np.ndarray) -> bool:
    code = neighbour_codes(mask)
    cand = mask & _SIMPLE[code] & (_COUNT[code] >= 2)
    return _delete_sequentially(mask, cand)


def skeletonize(binary) -> np.ndarray:
    """Thin ink regions to one-pixel-wide, 8-connected curves.

    Zhang-Suen sub-iterations run until nothing changes, followed by removal of
    remaining simple non-end pixels (staircase corners), repeated to a fixpoint.
    Pixels outside the image count as background.
    """
    mask = np.array(binary, dtype=bool, copy=True)
    if mask.ndim != 2:
        raise ValueError("expected a 2-D mask")
    while True:
        changed = False
        while _zhang_suen_pass(mask):
            changed = True
        if _staircase_pass(mask):
            changed = True
        if not changed:
            return mask


def count_components(mask: np.ndarray) -> int:
    return int(ndimage.label(mask, structure=EIGHT_CONNECTED)[1])


def skeleton_from_image(image, debug_dir: str | Path | None = None, stem: str = "image") -> np.ndarray:
    """Binarize and thin a grayscale image; optionally dump both masks as PNG."""
    binary = binarize(image)
    skeleton = skeletonize(binary)
    if debug_dir is not None:
        debug_dir = Path(debug_dir)
        debug_dir.mkdir(parents=True, exist_ok=True)
        save_mask(binary, debug_dir / f"{stem}_binary.png")
        save_mask(skeleton, debug_dir / f"{stem}_skeleton.png")
        log.debug("wrote debug masks for %s to %s", stem, debug_dir)
    return skeleton
