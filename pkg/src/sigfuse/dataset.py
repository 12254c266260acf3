"""Signature dataset layout, manifest handling and a synthetic generator.

On disk a dataset looks like::

    root/manifest.txt
    root/<user>/genuine/01.png ...
    root/<user>/forgery/01.png ...

The manifest is line oriented::

    format 1
    user <id> <n_genuine> <n_forgery>

User order in the manifest fixes user order everywhere else; file numbering
fixes the order of signatures within a user.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy.interpolate import make_interp_spline

from .errors import MalformedManifest, MissingFile
from .preprocess import load_image

MANIFEST = "manifest.txt"
FORMAT_VERSION = 1
_USER_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    genuine: tuple[str, ...]
    forgeries: tuple[str, ...] = ()


@dataclass(frozen=True)
class SignatureDataset:
    """Users with ordered genuine and skilled-forgery image ids.

    Image ids are paths relative to ``root`` (posix style).
    """

    users: tuple[UserRecord, ...]
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ValueError("user ids must be unique")
        for u in self.users:
            if not u.genuine:
                raise ValueError(f"user {u.user_id} has no genuine signatures")

    def __len__(self) -> int:
        return len(self.users)

    def user(self, user_id: str) -> UserRecord:
        for u in self.users:
            if u.user_id == user_id:
                return u
        raise KeyError(user_id)

    def path(self, image_id: str) -> Path:
        if self.root is None:
            raise ValueError("dataset has no root directory")
        return self.root / image_id

    def image(self, image_id: str) -> np.ndarray:
        return _load_cached(str(self.path(image_id)))

    def counts(self) -> tuple[int, int]:
        return sum(len(u.genuine) for u in self.users), sum(len(u.forgeries) for u in self.users)

    def subset(self, user_ids) -> "SignatureDataset":
        wanted = set(user_ids)
        return SignatureDataset(tuple(u for u in self.users if u.user_id in wanted), self.root)


@lru_cache(maxsize=8192)
def _load_cached(path: str) -> np.ndarray:
    img = load_image(path)
    img.setflags(write=False)
    return img


def image_id(user_id: str, kind: str, index: int) -> str:
    """Relative id of the ``index``-th (0-based) image of a kind ('genuine' or 'forgery')."""
    return f"{user_id}/{kind}/{index + 1:02d}.png"


def layout(counts: list[tuple[str, int, int]], root=None) -> SignatureDataset:
    """Dataset object for the standard layout, without touching the filesystem."""
    users = tuple(
        UserRecord(
            uid,
            tuple(image_id(uid, "genuine", i) for i in range(n_gen)),
            tuple(image_id(uid, "forgery", i) for i in range(n_forg)),
        )
        for uid, n_gen, n_forg in counts
    )
    return SignatureDataset(users, Path(root) if root is not None else None)


def parse_manifest(text: str) -> list[tuple[str, int, int]]:
    counts = []
    seen_format = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "format" and len(tok) == 2:
            if tok[1] != str(FORMAT_VERSION):
                raise MalformedManifest(f"unsupported manifest format {tok[1]}")
            seen_format = True
        elif tok[0] == "user" and len(tok) == 4:
            uid = tok[1]
            if not _USER_ID.match(uid):
                raise MalformedManifest(f"line {lineno}: bad user id {uid!r}")
            try:
                n_gen, n_forg = int(tok[2]), int(tok[3])
            except ValueError:
                raise MalformedManifest(f"line {lineno}: counts must be integers") from None
            if n_gen < 1 or n_forg < 0:
                raise MalformedManifest(f"line {lineno}: need >= 1 genuine and >= 0 forgeries")
            counts.append((uid, n_gen, n_forg))
        else:
            raise MalformedManifest(f"line {lineno}: cannot parse {raw!r}")
    if not seen_format:
        raise MalformedManifest("missing 'format' line")
    if not counts:
        raise MalformedManifest("manifest lists no users")
    if len({c[0] for c in counts}) != len(counts):
        raise MalformedManifest("duplicate user ids")
    return counts


def format_manifest(dataset: SignatureDataset) -> str:
    lines = ["# sigfuse dataset manifest", f"format {FORMAT_VERSION}"]
    lines += [f"user {u.user_id} {len(u.genuine)} {len(u.forgeries)}" for u in dataset.users]
    return "\n".join(lines) + "\n"


def write_manifest(dataset: SignatureDataset, root=None) -> Path:
    root = Path(root if root is not None else dataset.root)
    path = root / MANIFEST
    path.write_text(format_manifest(dataset))
    return path


def validate_dataset(root) -> list[str]:
    """Problems found in a dataset directory; empty when consistent."""
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.exists():
        return [f"missing manifest {manifest}"]
    try:
        ds = layout(parse_manifest(manifest.read_text()), root)
    except MalformedManifest as exc:
        return [f"malformed manifest: {exc}"]
    problems = []
    for u in ds.users:
        for iid in u.genuine + u.forgeries:
            if not (root / iid).is_file():
                problems.append(f"missing file {iid}")
    return problems


def load_dataset(root, manifest: str | Path | None = None) -> SignatureDataset:
    root = Path(root)
    manifest = Path(manifest) if manifest is not None else root / MANIFEST
    if not manifest.exists():
        raise MissingFile(f"manifest not found: {manifest}")
    ds = layout(parse_manifest(manifest.read_text()), root)
    for u in ds.users:
        for iid in u.genuine + u.forgeries:
            if not (root / iid).is_file():
                raise MissingFile(str(root / iid))
    return ds


@dataclass(frozen=True)
class SynthConfig:
    users: int = 10
    genuine_per_user: int = 24
    skilled_per_user: int = 30
    strokes: tuple[int, int] = (2, 4)
    control_points: tuple[int, int] = (4, 8)
    jitter: float = 1.5
    forgery_noise: float = 4.0
    canvas: tuple[int, int] = (96, 192)
    seed: int = 0
    first_user: int = 0

    def __post_init__(self):
        if min(self.users, self.genuine_per_user) < 1 or self.skilled_per_user < 0:
            raise ValueError("need at least one user and one genuine signature")
        if self.jitter < 0 or self.forgery_noise < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if self.control_points[0] < 4:
            raise ValueError("cubic strokes need at least 4 control points")


def _base_strokes(cfg: SynthConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Control points of one user's template signature, strokes laid out left to right."""
    h, w = cfg.canvas
    n_strokes = int(rng.integers(cfg.strokes[0], cfg.strokes[1] + 1))
    margin = 0.1 * min(h, w)
    span = (w - 2 * margin) / n_strokes
    strokes = []
    for s in range(n_strokes):
        k = int(rng.integers(cfg.control_points[0], cfg.control_points[1] + 1))
        x0 = margin + s * span
        xs = np.sort(rng.uniform(x0, x0 + 1.3 * span, size=k))
        # a random loop-back keeps strokes from being simple monotone curves
        if k > 4 and rng.random() < 0.5:
            i = int(rng.integers(1, k - 1))
            xs[i] -= rng.uniform(0.2, 0.6) * span
        ys = rng.uniform(margin, h - margin, size=k)
        strokes.append(np.column_stack([xs, ys]))
    return strokes


def _render(strokes: list[np.ndarray], cfg: SynthConfig, width: int) -> Image.Image:
    h, w = cfg.canvas
    img = Image.new("L", (w, h), 255)
    draw = ImageDraw.Draw(img)
    for ctrl in strokes:
        t = np.linspace(0.0, 1.0, len(ctrl))
        curve = make_interp_spline(t, ctrl, k=3)(np.linspace(0.0, 1.0, 24 * len(ctrl)))
        curve[:, 0] = np.clip(curve[:, 0], 1, w - 2)
        curve[:, 1] = np.clip(curve[:, 1], 1, h - 2)
        draw.line([tuple(p) for p in np.round(curve, 2).tolist()], fill=0, width=width, joint="curve")
    return img


def _perturb(base, rng, sigma, endpoint_sigma=0.0):
    out = []
    for ctrl in base:
        c = ctrl + rng.normal(0.0, sigma, size=ctrl.shape)
        if endpoint_sigma > 0:
            c[[0, -1]] += rng.normal(0.0, endpoint_sigma, size=(2, 2))
        out.append(c)
    return out


def render_user(cfg: SynthConfig, user_index: int) -> tuple[list[Image.Image], list[Image.Image]]:
    """Genuine and skilled-forgery images of one synthetic user."""
    base = _base_strokes(cfg, np.random.default_rng([cfg.seed, user_index, 0]))
    genuine, forged = [], []
    for i in range(cfg.genuine_per_user):
        rng = np.random.default_rng([cfg.seed, user_index, 1, i])
        genuine.append(_render(_perturb(base, rng, cfg.jitter), cfg, int(rng.integers(2, 4))))
    for i in range(cfg.skilled_per_user):
        rng = np.random.default_rng([cfg.seed, user_index, 2, i])
        strokes = _perturb(base, rng, cfg.forgery_noise, endpoint_sigma=cfg.forgery_noise)
        forged.append(_render(strokes, cfg, int(rng.integers(2, 4))))
    return genuine, forged


def generate_synthetic(cfg: SynthConfig, out_dir) -> SignatureDataset:
    """Write a synthetic dataset to ``out_dir`` and return it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = []
    for k in range(cfg.users):
        index = cfg.first_user + k
        uid = f"u{index:03d}"
        genuine, forged = render_user(cfg, index)
        for kind, images in (("genuine", genuine), ("forgery", forged)):
            (out / uid / kind).mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(images):
                img.save(out / image_id(uid, kind, i), format="PNG")
        counts.append((uid, len(genuine), len(forged)))
    ds = layout(counts, out)
    write_manifest(ds)
    return ds
