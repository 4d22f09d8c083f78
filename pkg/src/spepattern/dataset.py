"""Patch datasets: PNG I/O, tiling, cropping, phase shifts and a synthetic
symmetric-pattern generator.

Patches are float32 arrays of shape ``[C, H, W]`` with values in ``[-1, 1]``.
On disk a dataset is a directory holding ``manifest.json`` and
``patches/NNNNNN.png``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, FormatError, RangeError
from .symmetry import SymmetryOp, parse_ops, symmetrize, symmetry_residual

logger = logging.getLogger(__name__)

FAMILIES = ("blobs", "stripes", "rings")


# -- image I/O -------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG into a ``[C, H, W]`` array in [-1, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if mode not in ("L", "RGB") or arr.dtype != np.uint8:
        raise FormatError(f"{path}: unsupported image mode {mode!r} (need 8-bit L or RGB)")
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return (arr.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def to_uint8(x: np.ndarray) -> np.ndarray:
    """``[C, H, W]`` in [-1, 1] to ``[H, W]`` or ``[H, W, 3]`` bytes."""
    x = np.asarray(x, dtype=np.float64)
    q = np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)
    if q.shape[0] == 1:
        return q[0]
    return np.ascontiguousarray(q.transpose(1, 2, 0))


def save_image(x: np.ndarray, path) -> None:
    path = Path(path)
    try:
        Image.fromarray(to_uint8(x)).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc


def image_grid(images: Sequence[np.ndarray], cols: int | None = None) -> np.ndarray:
    """Lay ``[C, H, W]`` images out row-major on a grid (unfilled cells are -1)."""
    n = len(images)
    cols = cols or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    c, h, w = np.shape(images[0])
    grid = np.full((c, rows * h, cols * w), -1.0, dtype=np.float32)
    for k, im in enumerate(images):
        r, q = divmod(k, cols)
        grid[:, r * h:(r + 1) * h, q * w:(q + 1) * w] = im
    return grid


# -- geometry ----------------------------------------------------------------

def tile(p: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """Repeat a ``[C, H, W]`` patch ``nx`` times across and ``ny`` times down."""
    if nx < 1 or ny < 1:
        raise RangeError(f"tile counts must be >= 1, got nx={nx}, ny={ny}")
    return np.tile(p, (1, ny, nx))


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int | None = None) -> np.ndarray:
    """Bilinear resampling of the last two axes with half-pixel centers.

    Equal input and output sizes return an exact copy.
    """
    out_w = out_h if out_w is None else out_w
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return np.array(x, copy=True)

    def weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo)

    y0, y1, fy = weights(h, out_h)
    x0, x1, fx = weights(w, out_w)
    a = np.asarray(x, dtype=np.float64)
    rows = a[..., y0, :] * (1 - fy)[:, None] + a[..., y1, :] * fy[:, None]
    out = rows[..., x0] * (1 - fx) + rows[..., x1] * fx
    return out.astype(x.dtype if np.asarray(x).dtype.kind == "f" else np.float32)


def extract_patch(P: np.ndarray, x0: int, y0: int, w: int, h: int, out_size: int) -> np.ndarray:
    """Crop the ``w x h`` window at column ``x0``, row ``y0`` and resize it to ``out_size``."""
    H, W = P.shape[-2:]
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
        raise RangeError(f"window x0={x0}, y0={y0}, w={w}, h={h} outside {W}x{H} image")
    crop = P[..., y0:y0 + h, x0:x0 + w]
    return resize_bilinear(crop, out_size, out_size)


def multi_phase_sample(
    p: np.ndarray,
    phases_x: Sequence[int],
    phases_y: Sequence[int],
    preserve: Sequence[SymmetryOp | str] = (),
    epsilon: float = 1e-3,
) -> list[np.ndarray]:
    """Cyclically shift a seamless patch by every ``(phase_x, phase_y)`` pair.

    With ``preserve`` set, only half-period shifts are allowed and every
    shifted patch is re-checked against those reflections; patches that break
    them are logged and left out of the result.
    """
    H, W = p.shape[-2:]
    preserve = parse_ops(preserve) if preserve else ()
    for px in phases_x:
        if not 0 <= px <= W:
            raise RangeError(f"phase_x {px} outside [0, {W}]")
    for py in phases_y:
        if not 0 <= py <= H:
            raise RangeError(f"phase_y {py} outside [0, {H}]")
    if preserve:
        allowed_x, allowed_y = {0, W // 2, W}, {0, H // 2, H}
        bad = [v for v in phases_x if v not in allowed_x] + [v for v in phases_y if v not in allowed_y]
        if bad:
            raise RangeError(f"phases {bad} are not half-period shifts; symmetry cannot be preserved")
    out = []
    for py in phases_y:
        for px in phases_x:
            s = np.roll(p, shift=(py, px), axis=(-2, -1))
            broken = [op.value for op in preserve if symmetry_residual(s, op) > epsilon]
            if broken:
                logger.warning("phase (%d, %d) breaks symmetry %s; dropped", px, py, "".join(broken))
                continue
            out.append(s)
    return out


# -- synthetic data ----------------------------------------------------------

def _torus_dist(size: int, cy: float, cx: float) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    dy = np.abs(ii - cy)
    dx = np.abs(jj - cx)
    dy = np.minimum(dy, size - dy)
    dx = np.minimum(dx, size - dx)
    return np.sqrt(dy * dy + dx * dx)


def _render(rng: np.random.Generator, size: int, family: str, channels: int) -> np.ndarray:
    """Random smooth field, periodic on the ``size x size`` torus."""
    out = np.zeros((channels, size, size))
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for c in range(channels):
        f = np.zeros((size, size))
        if family == "blobs":
            for _ in range(rng.integers(3, 7)):
                cy, cx = rng.uniform(0, size, 2)
                s = rng.uniform(0.08, 0.25) * size
                f += rng.uniform(-1, 1) * np.exp(-0.5 * (_torus_dist(size, cy, cx) / s) ** 2)
        elif family == "stripes":
            for _ in range(rng.integers(2, 4)):
                ky, kx = rng.integers(-3, 4, 2)
                if ky == 0 and kx == 0:
                    kx = 1
                f += rng.uniform(0.3, 1) * np.cos(2 * np.pi * (ky * ii + kx * jj) / size + rng.uniform(0, 2 * np.pi))
        elif family == "rings":
            for _ in range(rng.integers(1, 3)):
                cy, cx = rng.uniform(0, size, 2)
                freq = rng.uniform(1.5, 3.5) * 2 * np.pi / size
                f += rng.uniform(0.5, 1) * np.cos(freq * _torus_dist(size, cy, cx) + rng.uniform(0, 2 * np.pi))
        else:
            raise ConfigError(f"unknown family {family!r}; expected one of {FAMILIES}")
        f -= f.mean()
        out[c] = np.tanh(1.5 * f / (np.abs(f).max() + 1e-9))
    return out.astype(np.float32)


@dataclass
class Manifest:
    """Metadata describing a :class:`PatchDataset`."""

    count: int
    width: int
    height: int
    channels: int
    declared_symmetry: list[str] = field(default_factory=list)
    source: dict = field(default_factory=dict)
    phase_sampling: dict | None = None

    def validate(self) -> None:
        if not set(self.declared_symmetry) <= {"h", "v", "p", "n"}:
            raise FormatError(f"declared_symmetry {self.declared_symmetry} not within h, v, p, n")
        if self.phase_sampling:
            xs = self.phase_sampling.get("phases_x", [])
            ys = self.phase_sampling.get("phases_y", [])
            if any(not 0 <= v < self.width for v in xs) or any(not 0 <= v < self.height for v in ys):
                raise FormatError("phase_sampling phases outside the patch extent")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Manifest:
        try:
            m = cls(
                count=int(d["count"]),
                width=int(d["width"]),
                height=int(d["height"]),
                channels=int(d["channels"]),
                declared_symmetry=list(d.get("declared_symmetry", [])),
                source=dict(d.get("source", {})),
                phase_sampling=d.get("phase_sampling"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc
        m.validate()
        return m


@dataclass
class PatchDataset:
    patches: list[np.ndarray]
    manifest: Manifest

    def __post_init__(self):
        self.check()

    def __len__(self):
        return len(self.patches)

    @property
    def ids(self) -> list[str]:
        return [f"{i:06d}" for i in range(len(self.patches))]

    @property
    def shape(self) -> tuple[int, int, int]:
        m = self.manifest
        return (m.channels, m.height, m.width)

    def as_array(self) -> np.ndarray:
        return np.stack(self.patches).astype(np.float32)

    def check(self) -> None:
        m = self.manifest
        if m.count != len(self.patches):
            raise FormatError(f"manifest count {m.count} != {len(self.patches)} patches")
        for k, p in enumerate(self.patches):
            if np.shape(p) != self.shape:
                raise FormatError(f"patch {k} has shape {np.shape(p)}, manifest says {self.shape}")
            if np.size(p) and (np.min(p) < -1.0 or np.max(p) > 1.0):
                raise FormatError(f"patch {k} has values outside [-1, 1]")

    @classmethod
    def from_arrays(cls, patches, declared_symmetry=(), source=None) -> PatchDataset:
        patches = [np.asarray(p, dtype=np.float32) for p in patches]
        if not patches:
            raise ContractError("dataset needs at least one patch")
        c, h, w = patches[0].shape
        m = Manifest(len(patches), w, h, c, [op.value for op in parse_ops(declared_symmetry)] if declared_symmetry else [],
                     source or {"kind": "arrays"})
        return cls(patches, m)


def synth_dataset(
    seed: int,
    n: int,
    size: int,
    family: str = "blobs",
    sym: Sequence[SymmetryOp | str] = (),
    channels: int = 3,
) -> PatchDataset:
    """Random periodic fields projected onto the images invariant under ``sym``."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; expected one of {FAMILIES}")
    ops = parse_ops(sym) if sym else ()
    rng = np.random.default_rng(seed)
    patches = [symmetrize(_render(rng, size, family, channels), ops) for _ in range(n)]
    manifest = Manifest(
        count=n, width=size, height=size, channels=channels,
        declared_symmetry=[op.value for op in ops],
        source={"kind": "synthetic", "seed": seed, "family": family},
    )
    return PatchDataset(patches, manifest)


def save_dataset(ds: PatchDataset, root) -> Path:
    root = Path(root)
    ds.check()
    try:
        (root / "patches").mkdir(parents=True, exist_ok=True)
        for pid, p in zip(ds.ids, ds.patches):
            save_image(p, root / "patches" / f"{pid}.png")
        (root / "manifest.json").write_text(json.dumps(ds.manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {root}: {exc}") from exc
    return root


def load_dataset(root) -> PatchDataset:
    """Load a dataset directory; count and shapes are checked against the manifest."""
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise OSError(f"no manifest.json in {root}")
    try:
        manifest = Manifest.from_dict(json.loads(mpath.read_text()))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: invalid JSON: {exc}") from exc
    files = sorted(f for f in os.listdir(root / "patches") if f.endswith(".png")) if (root / "patches").is_dir() else []
    if len(files) != manifest.count:
        raise FormatError(f"{root}: manifest lists {manifest.count} patches, found {len(files)}")
    patches = [load_image(root / "patches" / f) for f in files]
    return PatchDataset(patches, manifest)


def resize_dataset(ds: PatchDataset, size: int) -> PatchDataset:
    if ds.manifest.width == size and ds.manifest.height == size:
        return ds
    patches = [np.clip(resize_bilinear(p, size, size), -1, 1).astype(np.float32) for p in ds.patches]
    m = Manifest(**{**ds.manifest.to_dict(), "width": size, "height": size})
    return PatchDataset(patches, m)

