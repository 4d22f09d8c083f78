"""Hinge-loss adversarial training with SPE on the raw generator output."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..dataset import PatchDataset, image_grid, save_image
from ..errors import ConfigError, ContractError, NonFiniteLossError
from ..optim import AdamState, adam_step
from ..symmetry import SpeConfig, spe_loss
from ..tensor import Tensor, no_grad
from .checkpoint import Checkpoint, sample_images, sample_latents, save_checkpoint
from .diffaug import check_policies, diffaug, sample_aug_params
from .models import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)

logger = logging.getLogger(__name__)

CSV_HEADER = ("step", "loss_d", "loss_g", "loss_spe")


@dataclass
class TrainConfig:
    batch_size: int = 8
    total_steps: int = 2000
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    loss: str = "hinge"
    spe: SpeConfig | None = None
    diffaug_policies: tuple[str, ...] = ("color", "translation")
    snapshot_every: int = 1000
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.snapshot_every < 1:
            raise ConfigError(f"snapshot_every must be >= 1, got {self.snapshot_every}")
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.loss != "hinge":
            raise ConfigError(f"only the hinge loss is implemented, got {self.loss!r}")
        check_policies(self.diffaug_policies)

    @property
    def spe_weight(self) -> float:
        return self.spe.weight if self.spe is not None else 0.0

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["spe"] = self.spe.to_dict() if self.spe is not None else None
        d["diffaug_policies"] = list(self.diffaug_policies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["spe"] = SpeConfig.from_dict(d["spe"]) if d.get("spe") else None
        d["diffaug_policies"] = tuple(d.get("diffaug_policies", ()))
        return cls(**d)


@dataclass
class StepLosses:
    step: int
    loss_d: float
    loss_g: float
    loss_spe: float


def make_optimizer(cfg: TrainConfig) -> AdamState:
    return AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)


def hinge_d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    return T.mean(T.relu(1.0 - d_real)) + T.mean(T.relu(1.0 + d_fake))


def hinge_g_loss(d_fake: Tensor) -> Tensor:
    return -T.mean(d_fake)


def generator_objective(G, D, z: np.ndarray, cfg: TrainConfig, step: int, aug_params=None):
    """Generator loss ``-mean(D(aug(G(z)))) + weight * SPE(G(z))``.

    SPE sees the raw generator output; only the adversarial branch is
    augmented. Returns ``(total, spe_term_or_None)``.
    """
    fake = G(Tensor(z))
    adv = hinge_g_loss(D(diffaug(fake, params=aug_params) if aug_params is not None else fake))
    if cfg.spe is None or cfg.spe_weight == 0:
        return adv, None
    spe = spe_loss(fake, cfg.spe, step)
    return adv + spe * cfg.spe_weight, spe


def _check_finite(step, seed, **losses):
    if not all(math.isfinite(v) for v in losses.values()):
        raise NonFiniteLossError(step, seed, losses)


def train_step(
    G: Generator,
    D: Discriminator,
    opt_g: AdamState,
    opt_d: AdamState,
    batch: np.ndarray,
    cfg: TrainConfig,
    step: int,
    rng: np.random.Generator,
    freeze_d: bool = False,
    transcript: list | None = None,
) -> StepLosses:
    """One discriminator update followed by one generator update.

    ``transcript``, when given, receives ``(role, AugParams)`` for every
    augmentation applied, which lets callers check real/fake pairing.
    """
    B = len(batch)
    if B != cfg.batch_size:
        raise ContractError(f"batch has {B} samples, config expects {cfg.batch_size}")
    dtype = G.fc.weight.dtype
    size = batch.shape[2:]
    real = Tensor(np.asarray(batch, dtype=dtype))

    # discriminator
    z = rng.standard_normal((B, G.cfg.z_dim)).astype(dtype)
    with no_grad():
        fake = G(Tensor(z)).detach()
    params = sample_aug_params(cfg.diffaug_policies, B, size, rng)
    if transcript is not None:
        transcript.extend([("real", params), ("fake", params)])
    loss_d = hinge_d_loss(D(diffaug(real, params=params)), D(diffaug(fake, params=params)))
    ld = loss_d.item()
    _check_finite(step, cfg.seed, loss_d=ld)
    if not freeze_d:
        loss_d.backward()
        adam_step(D.parameters(), opt_d)

    # generator
    z = rng.standard_normal((B, G.cfg.z_dim)).astype(dtype)
    params = sample_aug_params(cfg.diffaug_policies, B, size, rng)
    if transcript is not None:
        transcript.append(("generator", params))
    loss_g, spe = generator_objective(G, D, z, cfg, step, params)
    lg, ls = loss_g.item(), (spe.item() if spe is not None else 0.0)
    _check_finite(step, cfg.seed, loss_d=ld, loss_g=lg, loss_spe=ls)
    loss_g.backward()
    adam_step(G.parameters(), opt_g)
    D.zero_grad()
    return StepLosses(step, ld, lg, ls)


@dataclass
class RunResult:
    generator: Generator
    discriminator: Discriminator
    history: list[StepLosses]
    checkpoints: list[Path] = field(default_factory=list)
    sample_z: np.ndarray | None = None


def _seeds(seed: int):
    return np.random.SeedSequence(seed).spawn(5)


def _batch_indices(n: int, batch: int, rng: np.random.Generator):
    """Endless stream of index batches, reshuffled every epoch."""
    pending = np.empty(0, dtype=int)
    while True:
        while len(pending) < batch:
            pending = np.concatenate([pending, rng.permutation(n)])
        yield pending[:batch]
        pending = pending[batch:]


def write_loss_csv(history: list[StepLosses], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for h in history:
            w.writerow([h.step, repr(h.loss_d), repr(h.loss_g), repr(h.loss_spe)])


def train_loop(
    ds: PatchDataset,
    gcfg: GeneratorConfig,
    dcfg: DiscriminatorConfig | None,
    tcfg: TrainConfig,
    out_dir=None,
    freeze_d: bool = False,
) -> RunResult:
    """Train for ``tcfg.total_steps`` minibatches.

    With ``out_dir`` set, a checkpoint and an 8x8 sample grid from fixed
    latents are written every ``snapshot_every`` steps, and the per-step
    losses go to ``losses.csv``.
    """
    tcfg.validate()
    gcfg.validate()
    if len(ds) == 0:
        raise ContractError("cannot train on an empty dataset")
    C, H, W = ds.shape
    if (H, W) != (gcfg.size, gcfg.size) or C != gcfg.output_channels:
        raise ConfigError(f"dataset patches are {C}x{H}x{W}, generator emits {gcfg.output_channels}x{gcfg.size}x{gcfg.size}")
    if tcfg.spe is not None and any(op.diagonal for op in tcfg.spe.ops) and H != W:
        raise ContractError("diagonal SPE ops need square patches")
    dcfg = dcfg or DiscriminatorConfig(input_size=H, input_channels=C)

    s_g, s_d, s_data, s_noise, s_sample = _seeds(tcfg.seed)
    G = build_generator(gcfg, s_g)
    D = build_discriminator(dcfg, s_d)
    opt_g, opt_d = make_optimizer(tcfg), make_optimizer(tcfg)
    data = ds.as_array()
    batches = _batch_indices(len(data), tcfg.batch_size, np.random.default_rng(s_data))
    rng = np.random.default_rng(s_noise)
    sample_z = sample_latents(64, gcfg.z_dim, s_sample)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        try:
            (out / "checkpoints").mkdir(parents=True, exist_ok=True)
            (out / "samples").mkdir(parents=True, exist_ok=True)
            (out / "config.json").write_text(
                json.dumps({"generator": gcfg.to_dict(), "discriminator": dcfg.to_dict(), "train": tcfg.to_dict()},
                           indent=2, sort_keys=True) + "\n"
            )
        except OSError as exc:
            raise OSError(f"cannot write run directory {out}: {exc}") from exc

    history: list[StepLosses] = []
    result = RunResult(G, D, history, sample_z=sample_z)
    for step in range(1, tcfg.total_steps + 1):
        idx = next(batches)
        losses = train_step(G, D, opt_g, opt_d, data[idx], tcfg, step - 1, rng, freeze_d=freeze_d)
        losses.step = step
        history.append(losses)
        if step % tcfg.snapshot_every == 0:
            logger.info("step %d: loss_d=%.4f loss_g=%.4f loss_spe=%.5f", step, losses.loss_d, losses.loss_g, losses.loss_spe)
            if out is not None:
                ckpt = Checkpoint.from_models(G, D, step, tcfg.seed, tcfg.to_dict())
                result.checkpoints.append(save_checkpoint(ckpt, out / "checkpoints" / f"step_{step:06d}.spgc"))
                save_image(image_grid(list(sample_images(G, sample_z))), out / "samples" / f"step_{step:06d}.png")
    if out is not None:
        write_loss_csv(history, out / "losses.csv")
    return result
