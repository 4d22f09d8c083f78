"""Binary checkpoint format and sampling from checkpoints.

Layout (all integers little-endian)::

    b"SPGC" | uint32 version | uint32 header length | JSON header | float32 payload

The header lists parameters as ``{"name", "shape"}`` in payload order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import image_grid, save_image
from ..errors import CheckpointFormatError
from ..tensor import Tensor, no_grad
from .models import DiscriminatorConfig, Generator, GeneratorConfig, build_discriminator, build_generator

MAGIC = b"SPGC"
VERSION = 1


@dataclass
class Checkpoint:
    generator_config: GeneratorConfig
    discriminator_config: DiscriminatorConfig
    step: int
    seed: int
    params: dict[str, np.ndarray]
    train_config: dict = field(default_factory=dict)

    @classmethod
    def from_models(cls, G, D, step: int, seed: int, train_config: dict | None = None) -> Checkpoint:
        params = {f"G.{k}": v for k, v in G.state_dict().items()}
        params.update({f"D.{k}": v for k, v in D.state_dict().items()})
        return cls(G.cfg, D.cfg, step, seed, params, dict(train_config or {}))

    def _split(self, prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def generator(self) -> Generator:
        G = build_generator(self.generator_config, 0)
        G.load_state_dict(self._split("G."))
        return G

    def discriminator(self):
        D = build_discriminator(self.discriminator_config, 0)
        D.load_state_dict(self._split("D."))
        return D

    def to_bytes(self) -> bytes:
        header = {
            "generator_config": self.generator_config.to_dict(),
            "discriminator_config": self.discriminator_config.to_dict(),
            "train_config": self.train_config,
            "step": int(self.step),
            "seed": int(self.seed),
            "params": [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()],
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        payload = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in self.params.values())
        return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> Checkpoint:
        if len(blob) < 12 or blob[:4] != MAGIC:
            raise CheckpointFormatError("not a checkpoint (bad magic)")
        version, hlen = struct.unpack("<II", blob[4:12])
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        try:
            header = json.loads(blob[12:12 + hlen].decode("utf-8"))
            specs = [(p["name"], tuple(p["shape"])) for p in header["params"]]
            gcfg = GeneratorConfig(**header["generator_config"])
            dcfg = DiscriminatorConfig(**header["discriminator_config"])
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from exc
        payload = blob[12 + hlen:]
        expected = 4 * sum(int(np.prod(s)) for _, s in specs)
        if len(payload) != expected:
            raise CheckpointFormatError(f"checkpoint payload is {len(payload)} bytes, header implies {expected}")
        params, off = {}, 0
        for name, shape in specs:
            n = int(np.prod(shape))
            params[name] = np.frombuffer(payload, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(shape)
            off += 4 * n
        return cls(gcfg, dcfg, header["step"], header["seed"], params, header.get("train_config", {}))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(ckpt.to_bytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint.from_bytes(blob)


def sample_latents(n: int, z_dim: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, z_dim)).astype(np.float32)


def sample_images(G: Generator, z: np.ndarray, chunk: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(z), chunk):
            out.append(G(Tensor(z[i:i + chunk])).data)
    return np.concatenate(out).astype(np.float32)


def generate(checkpoint, n: int, seed, out_png=None) -> list[np.ndarray]:
    """Draw ``n`` seeded samples; optionally write them as one PNG grid."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    G = ckpt.generator()
    images = list(sample_images(G, sample_latents(n, G.cfg.z_dim, seed)))
    if out_png is not None:
        save_image(image_grid(images), out_png)
    return images
