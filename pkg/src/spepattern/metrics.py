"""Generative evaluation: Frechet distance, improved precision/recall and
density/coverage over a pluggable feature embedder.

Nearest-neighbour conventions: the k-th neighbour of a point is the k-th
smallest distance to the *other* points of its set (duplicates count), and a
point lies inside a ball when its distance is ``<=`` the radius.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import tensor as T
from .dataset import resize_bilinear
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, no_grad

__all__ = [
    "FeatureEmbedder",
    "MetricsReport",
    "embed",
    "frechet_distance",
    "precision_recall",
    "density_coverage",
    "compute_metrics",
    "evaluate",
    "save_features_csv",
    "load_features_csv",
]


@dataclass(frozen=True)
class FeatureEmbedder:
    """``pixels_down``: bilinear downsample to ``side x side`` and flatten.
    ``random_conv``: fixed seeded conv stack followed by global average pooling.
    """

    kind: str = "pixels_down"
    side: int = 8
    grayscale: bool = True
    seed: int = 0
    depth: int = 2
    out_dim: int = 64

    def __post_init__(self):
        if self.kind not in ("pixels_down", "random_conv"):
            raise ConfigError(f"unknown embedder kind {self.kind!r}")
        if self.output_dim(3) < 2:
            raise ConfigError("embedder output dimension must be >= 2")

    def output_dim(self, channels: int) -> int:
        if self.kind == "random_conv":
            return self.out_dim
        return self.side * self.side * (1 if self.grayscale else channels)

    def describe(self) -> dict:
        if self.kind == "pixels_down":
            return {"kind": self.kind, "side": self.side, "grayscale": self.grayscale}
        return {"kind": self.kind, "seed": self.seed, "depth": self.depth, "out_dim": self.out_dim}

    @classmethod
    def from_name(cls, name: str) -> FeatureEmbedder:
        if name.startswith("pixels"):
            side = int(name[len("pixels"):] or 8)
            return cls("pixels_down", side=side)
        if name == "rconv":
            return cls("random_conv")
        raise ConfigError(f"unknown embedder {name!r}; expected pixels<N> or rconv")


def _random_conv_features(x: np.ndarray, e: FeatureEmbedder) -> np.ndarray:
    rng = np.random.default_rng(e.seed)
    c = x.shape[1]
    h = Tensor(x.astype(np.float64))
    with no_grad():
        for layer in range(e.depth):
            c_out = e.out_dim if layer == e.depth - 1 else max(e.out_dim // 2, 8)
            w = Tensor(rng.normal(0, 1 / np.sqrt(9 * c), (c_out, c, 3, 3)))
            h = T.leaky_relu(T.conv2d(h, w, stride=2 if layer < e.depth - 1 else 1))
            c = c_out
    return h.data.mean(axis=(2, 3))


def embed(images, e: FeatureEmbedder = FeatureEmbedder()) -> np.ndarray:
    """Map ``n`` images ``[C, H, W]`` to an ``n x d`` float64 feature matrix."""
    if len(images) == 0:
        raise ContractError("no images to embed")
    shape = np.shape(images[0])
    if any(np.shape(im) != shape for im in images):
        raise DimensionError("images differ in shape")
    x = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    if e.kind == "random_conv":
        return _random_conv_features(x, e)
    if e.grayscale:
        x = x.mean(axis=1, keepdims=True)
    return resize_bilinear(x, e.side, e.side).reshape(len(x), -1)


def _check_feats(a, name: str, min_rows: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d feature matrix, got shape {a.shape}")
    if len(a) < min_rows:
        raise ContractError(f"{name} needs at least {min_rows} rows, got {len(a)}")
    return a


def _psd_sqrt(m: np.ndarray) -> tuple[np.ndarray, float]:
    w, v = np.linalg.eigh((m + m.T) / 2)
    clamp = float(max(0.0, -w.min())) if w.size else 0.0
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T, clamp


def frechet_stats(real_feats, fake_feats) -> tuple[float, float]:
    """Frechet distance plus the largest negative eigenvalue magnitude clamped to 0."""
    r = _check_feats(real_feats, "real_feats", 2)
    f = _check_feats(fake_feats, "fake_feats", 2)
    if r.shape[1] != f.shape[1]:
        raise DimensionError(f"feature dims differ: {r.shape[1]} vs {f.shape[1]}")
    mu1, mu2 = r.mean(axis=0), f.mean(axis=0)
    s1 = np.atleast_2d(np.cov(r, rowvar=False, ddof=1))
    s2 = np.atleast_2d(np.cov(f, rowvar=False, ddof=1))
    root1, c1 = _psd_sqrt(s1)
    inner = root1 @ s2 @ root1
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    c2 = float(max(0.0, -w.min()))
    tr_sqrt = float(np.sqrt(np.clip(w, 0, None)).sum())
    diff = mu1 - mu2
    d2 = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2 * tr_sqrt)
    return max(d2, 0.0), max(c1, c2)


def frechet_distance(real_feats, fake_feats) -> float:
    """Squared Frechet distance between Gaussians fitted to two feature sets."""
    return frechet_stats(real_feats, fake_feats)[0]


def _kth_nn_radii(a: np.ndarray, k: int) -> np.ndarray:
    d = cdist(a, a)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def _fraction_inside(points: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> float:
    inside = cdist(points, centers) <= radii[None, :]
    return float(inside.any(axis=1).mean())


def precision_recall(real_feats, fake_feats, k: int = 3) -> dict[str, float]:
    """Improved precision and recall with k-NN ball manifolds."""
    r = _check_feats(real_feats, "real_feats", k + 1)
    f = _check_feats(fake_feats, "fake_feats", k + 1)
    precision = _fraction_inside(f, r, _kth_nn_radii(r, k))
    recall = _fraction_inside(r, f, _kth_nn_radii(f, k))
    return {"precision": precision, "recall": recall}


def density_coverage(real_feats, fake_feats, k: int = 5) -> dict[str, float]:
    r = _check_feats(real_feats, "real_feats", k + 1)
    f = _check_feats(fake_feats, "fake_feats", 1)
    radii = _kth_nn_radii(r, k)
    inside = cdist(r, f) <= radii[:, None]  # real x fake
    density = float(inside.sum()) / (k * len(f))
    coverage = float(inside.any(axis=1).mean())
    return {"density": density, "coverage": coverage}


@dataclass
class MetricsReport:
    fid: float
    precision: float
    recall: float
    density: float
    coverage: float
    k_pr: int
    k_dc: int
    n_real: int
    n_fake: int
    embedder: dict
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def compute_metrics(real_feats, fake_feats, k_pr: int = 3, k_dc: int = 5, embedder: dict | None = None) -> MetricsReport:
    fid, clamp = frechet_stats(real_feats, fake_feats)
    pr = precision_recall(real_feats, fake_feats, k_pr)
    dc = density_coverage(real_feats, fake_feats, k_dc)
    notes = {"sqrt_eigenvalue_clamp": clamp} if clamp > 1e-6 else {}
    return MetricsReport(
        fid=fid, precision=pr["precision"], recall=pr["recall"], density=dc["density"], coverage=dc["coverage"],
        k_pr=k_pr, k_dc=k_dc, n_real=len(real_feats), n_fake=len(fake_feats), embedder=embedder or {}, notes=notes,
    )


def evaluate(
    real,
    checkpoint=None,
    n_fake: int = 64,
    e: FeatureEmbedder = FeatureEmbedder(),
    seed: int = 0,
    k_pr: int = 3,
    k_dc: int = 5,
    fake_images: Sequence[np.ndarray] | None = None,
) -> MetricsReport:
    """Score ``n_fake`` samples from ``checkpoint`` (or given ``fake_images``)
    against the real patches."""
    from .gan.checkpoint import generate

    patches = getattr(real, "patches", real)
    if fake_images is None:
        if checkpoint is None:
            raise ContractError("evaluate needs a checkpoint or fake_images")
        if n_fake < max(k_pr, k_dc) + 1:
            raise ContractError(f"n_fake must be > {max(k_pr, k_dc)}, got {n_fake}")
        fake_images = generate(checkpoint, n_fake, seed)
    return compute_metrics(embed(patches, e), embed(fake_images, e), k_pr, k_dc, e.describe())


def save_features_csv(feats, path) -> None:
    np.savetxt(Path(path), np.asarray(feats, dtype=np.float64), delimiter=",", fmt="%.17g")


def load_features_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(Path(path), delimiter=",", dtype=np.float64))
