"""Reflection operators on square images and the symmetric pattern
enforcement (SPE) loss built on them.

Pixel conventions, for an image indexed ``x[..., i, j]`` (row ``i``, column ``j``):

=======  =========================  ==============================
op       output[i, j]               mirror
=======  =========================  ==============================
``h``    ``x[H-1-i, j]``            top/bottom (horizontal axis)
``v``    ``x[i, W-1-j]``            left/right (vertical axis)
``n``    ``x[j, i]``                main diagonal (transpose)
``p``    ``x[W-1-j, H-1-i]``        anti-diagonal
=======  =========================  ==============================

All four are involutive pixel permutations, so their adjoint is themselves.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

__all__ = [
    "SymmetryOp",
    "SpeConfig",
    "SymmetryReport",
    "PRESETS",
    "apply_symmetry",
    "symmetry_residual",
    "verify_dataset",
    "spe_loss",
    "enumerate_configs",
    "parse_ops",
    "parse_spe",
    "group_closure",
    "symmetrize",
]


class SymmetryOp(str, enum.Enum):
    HFLIP = "h"
    VFLIP = "v"
    PFLIP = "p"
    NFLIP = "n"

    @property
    def diagonal(self) -> bool:
        return self in (SymmetryOp.PFLIP, SymmetryOp.NFLIP)

    def __str__(self):
        return self.value


# canonical letter order used in config names ("hvnp")
OP_ORDER = (SymmetryOp.HFLIP, SymmetryOp.VFLIP, SymmetryOp.NFLIP, SymmetryOp.PFLIP)


def parse_ops(text: str | Iterable) -> tuple[SymmetryOp, ...]:
    """``"hv"`` -> (HFLIP, VFLIP); also accepts iterables of ops or letters."""
    if isinstance(text, SymmetryOp):
        return (text,)
    letters = list(text)
    ops = []
    for ch in letters:
        try:
            op = SymmetryOp(ch.value if isinstance(ch, SymmetryOp) else str(ch).lower())
        except ValueError as exc:
            raise ConfigError(f"unknown symmetry op {ch!r}; expected h, v, p or n") from exc
        if op in ops:
            raise ContractError(f"duplicate symmetry op {op.value!r}")
        ops.append(op)
    return tuple(sorted(ops, key=OP_ORDER.index))


def _ops_name(ops: Iterable[SymmetryOp]) -> str:
    return "".join(op.value for op in sorted(ops, key=OP_ORDER.index))


def _flip_array(a: np.ndarray, op: SymmetryOp) -> np.ndarray:
    if op is SymmetryOp.HFLIP:
        out = a[..., ::-1, :]
    elif op is SymmetryOp.VFLIP:
        out = a[..., :, ::-1]
    elif op is SymmetryOp.NFLIP:
        out = np.swapaxes(a, -1, -2)
    else:
        out = np.swapaxes(a[..., ::-1, ::-1], -1, -2)
    return np.ascontiguousarray(out)


def apply_symmetry(x, op: SymmetryOp | str):
    """Apply a reflection to the two trailing (spatial) axes.

    Works on numpy arrays and on :class:`Tensor`; for tensors the result is
    differentiable and its backward applies the same reflection.
    """
    op = SymmetryOp(op)
    shape = x.shape
    if len(shape) < 2:
        raise DimensionError(f"need at least 2 spatial axes, got shape {shape}")
    if op.diagonal and shape[-1] != shape[-2]:
        raise DimensionError(f"{op.name} needs square spatial extent, got {shape[-2]}x{shape[-1]}")
    if isinstance(x, Tensor):
        return T.make_op(_flip_array(x.data, op), (x,), lambda g: (_flip_array(g, op),), f"flip_{op.value}")
    return _flip_array(np.asarray(x), op)


def symmetry_residual(x, op: SymmetryOp | str, delta: float = 1e-12) -> float:
    """Relative residual ``||x - Tx|| / max(||x||, delta)``, in [0, 2]."""
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    diff = a - apply_symmetry(a, op)
    return float(np.linalg.norm(diff) / max(np.linalg.norm(a), delta))


def group_closure(ops: Sequence[SymmetryOp], shape: tuple[int, int]) -> list[np.ndarray]:
    """Index maps of every element of the group generated by ``ops``.

    Each element is returned as an integer array ``idx`` of ``shape`` such that
    ``g(x).flat == x.flat[idx]``; the identity comes first.
    """
    base = np.arange(shape[0] * shape[1]).reshape(shape)
    elems = {base.tobytes(): base}
    frontier = [base]
    while frontier:
        nxt = []
        for e in frontier:
            for op in ops:
                c = apply_symmetry(e, op)
                key = c.tobytes()
                if key not in elems:
                    elems[key] = c
                    nxt.append(c)
        frontier = nxt
    return list(elems.values())


def _pairwise_sum(stack: np.ndarray) -> np.ndarray:
    while stack.shape[0] > 1:
        if stack.shape[0] % 2:
            stack = np.concatenate([stack[:-2], stack[-2:-1] + stack[-1:]], axis=0)
        else:
            stack = stack[0::2] + stack[1::2]
    return stack[0]


def symmetrize(x: np.ndarray, ops: Sequence[SymmetryOp]) -> np.ndarray:
    """Project ``x`` onto the images invariant under the group generated by ``ops``.

    The orbit values are sorted before a pairwise sum, so each output pixel is
    computed from the same multiset in the same order as its mirror images and
    the result is exactly symmetric. Dihedral subgroups have power-of-two
    order, which makes the projection exactly idempotent as well.
    """
    x = np.asarray(x)
    ops = parse_ops(ops) if ops else ()
    if not ops:
        return x.copy()
    h, w = x.shape[-2:]
    maps = group_closure(ops, (h, w))
    flat = x.reshape(x.shape[:-2] + (h * w,))
    orbit = np.stack([flat[..., m.reshape(-1)] for m in maps], axis=0)
    orbit.sort(axis=0)
    out = _pairwise_sum(orbit) / x.dtype.type(len(maps))
    return out.reshape(x.shape).astype(x.dtype, copy=False)


@dataclass(frozen=True)
class SpeConfig:
    """Which reflections SPE enforces and how.

    ``subsets`` holds one subset for a joint schedule, or several subsets that
    are cycled one per generator step when ``interleaved`` is set.
    """

    subsets: tuple[tuple[SymmetryOp, ...], ...]
    interleaved: bool = False
    similarity: str = "l2"
    weight: float = 1.0
    tag: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.subsets or any(len(s) == 0 for s in self.subsets):
            raise ContractError("SPE config needs at least one nonempty operator subset")
        if not self.interleaved and len(self.subsets) != 1:
            raise ConfigError("a joint schedule has exactly one subset")
        if self.similarity not in ("l2", "l1", "lpips"):
            raise ConfigError(f"unknown similarity {self.similarity!r}")
        if self.weight < 0:
            raise ConfigError(f"SPE weight must be nonnegative, got {self.weight}")

    @classmethod
    def joint(cls, ops, **kw) -> SpeConfig:
        return cls((parse_ops(ops),), **kw)

    @classmethod
    def interleave(cls, *subsets, **kw) -> SpeConfig:
        return cls(tuple(parse_ops(s) for s in subsets), interleaved=True, **kw)

    @property
    def name(self) -> str:
        names = [_ops_name(s) for s in self.subsets]
        return f"[{';'.join(names)}]" if self.interleaved else names[0]

    @property
    def ops(self) -> tuple[SymmetryOp, ...]:
        """Union of all operators the schedule ever activates."""
        return parse_ops({op for s in self.subsets for op in s})

    def active_ops(self, step: int) -> tuple[SymmetryOp, ...]:
        return self.subsets[step % len(self.subsets)]

    def to_dict(self) -> dict:
        return {"name": self.name, "similarity": self.similarity, "weight": self.weight}

    @classmethod
    def from_dict(cls, d: dict) -> SpeConfig:
        return parse_spe(d["name"], weight=d.get("weight", 1.0), similarity=d.get("similarity", "l2"))


PRESETS = {
    "hv": SpeConfig.joint("hv", tag="hv"),
    "np": SpeConfig.joint("np", tag="np"),
    "hvnp": SpeConfig.joint("hvnp", tag="hvnp"),
    "[hv;np]": SpeConfig.interleave("hv", "np", tag="[hv;np]"),
}


def parse_spe(text: str, weight: float = 1.0, similarity: str = "l2") -> SpeConfig | None:
    """Parse ``hv``, ``hvnp``, ``[hv;np]``, ``[hv,np]`` or ``hv,np``; ``none`` gives None."""
    t = text.strip().lower()
    if t in ("", "none"):
        return None
    bracketed = t.startswith("[") and t.endswith("]")
    body = t[1:-1] if bracketed else t
    parts = [p for p in body.replace(";", ",").split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"empty SPE config {text!r}")
    if len(parts) == 1 and not bracketed:
        return SpeConfig.joint(parts[0].strip(), weight=weight, similarity=similarity)
    return SpeConfig.interleave(*(p.strip() for p in parts), weight=weight, similarity=similarity)


def _similarity(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "l2":
        return T.mean_sq_diff(a, b)
    if kind == "l1":
        return T.mean_abs_diff(a, b)
    # extension slot: perceptual similarity would need a pretrained network
    raise NotImplementedError("LPIPS similarity is not available")


def spe_loss(g_out: Tensor, cfg: SpeConfig, step: int = 0) -> Tensor:
    """Average similarity between generator output and its reflections.

    Normalized by the size of the subset active at ``step``.
    """
    ops = cfg.active_ops(step)
    if not ops:
        raise ContractError("active SPE subset is empty")
    if not isinstance(g_out, Tensor):
        g_out = Tensor(g_out)
    total = None
    for op in ops:
        term = _similarity(g_out, apply_symmetry(g_out, op), cfg.similarity)
        total = term if total is None else total + term
    out = total * (1.0 / len(ops))
    out.name = "spe_loss"
    return out


def enumerate_configs(base_ops: Sequence[SymmetryOp | str] = OP_ORDER) -> list[SpeConfig]:
    """Every nonempty joint subset of ``base_ops`` plus the interleaved preset.

    Configs coinciding with a named preset carry its ``tag``.
    """
    if not base_ops:
        raise ContractError("base_ops must be nonempty")
    ops = parse_ops(base_ops)
    by_name = {p.name: k for k, p in PRESETS.items()}
    configs = []
    for r in range(1, len(ops) + 1):
        for combo in itertools.combinations(ops, r):
            cfg = SpeConfig.joint(combo)
            tag = by_name.get(cfg.name)
            configs.append(SpeConfig(cfg.subsets, tag=tag) if tag else cfg)
    inter = PRESETS["[hv;np]"]
    if set(inter.ops) <= set(ops):
        configs.append(inter)
    return configs


@dataclass
class SymmetryReport:
    """Per-image residuals and the common symmetry set they support."""

    epsilon: float
    candidates: tuple[SymmetryOp, ...]
    residuals: list[dict[str, float]]
    ids: list[str]

    @property
    def common_set(self) -> tuple[SymmetryOp, ...]:
        return tuple(op for op in self.candidates if all(r[op.value] <= self.epsilon for r in self.residuals))

    @property
    def passing(self) -> list[tuple[SymmetryOp, ...]]:
        return [tuple(op for op in self.candidates if r[op.value] <= self.epsilon) for r in self.residuals]

    @property
    def is_symmetric_task(self) -> bool:
        return bool(self.common_set)

    def to_dict(self) -> dict:
        return {
            "per_image": [{"id": i, "residuals": r} for i, r in zip(self.ids, self.residuals)],
            "common_set": [op.value for op in self.common_set],
            "epsilon": self.epsilon,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def verify_dataset(ds, candidate_ops=OP_ORDER, epsilon: float = 1e-3) -> SymmetryReport:
    """Check which candidate reflections leave every patch unchanged (to ``epsilon``).

    ``ds`` is a :class:`~spepattern.dataset.PatchDataset` or any sequence of
    ``[C, H, W]`` arrays.
    """
    patches = getattr(ds, "patches", ds)
    if len(patches) == 0:
        raise ContractError("cannot verify an empty dataset")
    ops = parse_ops(candidate_ops)
    shape = np.shape(patches[0])
    if any(np.shape(p) != shape for p in patches):
        raise DimensionError("patches differ in shape")
    if any(op.diagonal for op in ops) and shape[-1] != shape[-2]:
        raise ContractError(f"diagonal ops need square patches, got {shape[-2]}x{shape[-1]}")
    residuals = [{op.value: symmetry_residual(p, op) for op in ops} for p in patches]
    ids = list(getattr(ds, "ids", None) or [f"{i:06d}" for i in range(len(patches))])
    return SymmetryReport(epsilon=epsilon, candidates=ops, residuals=residuals, ids=ids)
