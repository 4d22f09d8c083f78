"""Command-line entry point (``spg``).

Exit codes: 0 ok, 1 I/O, 2 bad flags, 3 no common symmetry, 4 SPE ops not
satisfied by the dataset, 5 non-finite training loss, 6 checkpoint format.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import FAMILIES, load_dataset, resize_dataset, save_dataset, synth_dataset
from .errors import CheckpointFormatError, ConfigError, ContractError, FormatError, NonFiniteLossError
from .gan.checkpoint import generate, load_checkpoint
from .gan.models import DiscriminatorConfig, GeneratorConfig
from .gan.train import TrainConfig, train_loop
from .metrics import FeatureEmbedder, compute_metrics, embed, evaluate, load_features_csv
from .symmetry import parse_ops, parse_spe, symmetry_residual, verify_dataset

logger = logging.getLogger("spepattern")

EXIT_OK, EXIT_IO, EXIT_FLAGS, EXIT_NO_SYMMETRY, EXIT_SPE_MISMATCH, EXIT_NAN, EXIT_CHECKPOINT = range(7)


class UsageError(Exception):
    pass


def _sym_arg(text: str) -> str:
    if text.lower() == "none":
        return ""
    try:
        return "".join(op.value for op in parse_ops(text))
    except (ConfigError, ContractError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _attn_arg(text: str) -> int | None:
    if text == "none":
        return None
    if text.startswith("eattn@") and text[6:] in ("8", "16", "32"):
        return int(text[6:])
    raise argparse.ArgumentTypeError(f"expected none or eattn@8|16|32, got {text!r}")


def _spe_arg(text: str) -> str:
    try:
        parse_spe(text)
    except (ConfigError, ContractError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return text


def split_configs(text: str) -> list[str]:
    """Split a sweep list on commas outside brackets: ``hv,[hv;np]`` -> ``[hv, [hv;np]]``."""
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def _policies(text: str) -> tuple[str, ...]:
    return tuple(p for p in text.split(",") if p and p != "none")


# -- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    ds = synth_dataset(args.seed, args.n, args.size, args.family, args.sym, channels=args.channels)
    save_dataset(ds, args.out)
    report = verify_dataset(ds, "hvnp", args.epsilon)
    common = "".join(op.value for op in report.common_set)
    print(f"wrote {len(ds)} patches ({args.size}x{args.size}, {args.family}) to {args.out}")
    print(f"declared symmetry: {args.sym or 'none'}; verified common set: {common or 'none'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    ds = load_dataset(args.dir)
    report = verify_dataset(ds, args.ops, args.epsilon)
    if args.json:
        Path(args.json).write_text(report.to_json(indent=2, sort_keys=True) + "\n")
    common = "".join(op.value for op in report.common_set)
    print(f"patches: {len(ds)}  epsilon: {args.epsilon:g}")
    for op in report.candidates:
        worst = max(r[op.value] for r in report.residuals)
        print(f"  {op.value}: max residual {worst:.3e}  {'pass' if op in report.common_set else 'fail'}")
    if not common:
        print("common symmetry set: none (not a symmetric pattern generation task)")
        return EXIT_NO_SYMMETRY
    print(f"common symmetry set: {common}")
    return EXIT_OK


def _train_configs(args, ds, spe_text: str, seed: int):
    spe = parse_spe(spe_text, weight=args.spe_lambda)
    size = ds.manifest.width
    gcfg = GeneratorConfig.for_size(size, z_dim=args.z_dim, base_channels=args.base_channels,
                                    attention=args.attn, output_channels=ds.manifest.channels)
    dcfg = DiscriminatorConfig(input_size=size, input_channels=ds.manifest.channels)
    tcfg = TrainConfig(batch_size=args.batch_size, total_steps=args.steps, lr=args.lr, spe=spe,
                       diffaug_policies=_policies(args.diffaug), snapshot_every=args.snapshot_every, seed=seed)
    return gcfg, dcfg, tcfg


def _load_training_data(args, spe_text: str):
    ds = load_dataset(args.dir)
    if args.size and args.size != ds.manifest.width:
        ds = resize_dataset(ds, args.size)
    spe = parse_spe(spe_text)
    if spe is not None:
        report = verify_dataset(ds, spe.ops, args.epsilon)
        missing = [op.value for op in spe.ops if op not in report.common_set]
        if missing:
            raise SpeMismatch(f"dataset does not satisfy SPE ops {''.join(missing)} at epsilon {args.epsilon:g}")
    return ds


class SpeMismatch(Exception):
    pass


def cmd_train(args) -> int:
    ds = _load_training_data(args, args.spe)
    gcfg, dcfg, tcfg = _train_configs(args, ds, args.spe, args.seed)
    result = train_loop(ds, gcfg, dcfg, tcfg, out_dir=args.out)
    last = result.history[-1] if result.history else None
    print(f"trained {tcfg.total_steps} steps, {len(result.checkpoints)} checkpoints in {args.out}")
    if last:
        print(f"final losses: d={last.loss_d:.4f} g={last.loss_g:.4f} spe={last.loss_spe:.5f}")
    return EXIT_OK


def cmd_generate(args) -> int:
    images = generate(args.ckpt, args.n, args.seed, out_png=args.out)
    print(f"wrote {len(images)} samples to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    e = FeatureEmbedder.from_name(args.embedder)
    if args.real_features or args.fake_features:
        if not (args.real_features and args.fake_features):
            raise UsageError("--real-features and --fake-features must be given together")
        report = compute_metrics(load_features_csv(args.real_features), load_features_csv(args.fake_features),
                                 args.k_pr, args.k_dc, {"kind": "external"})
    else:
        ds = load_dataset(args.dir)
        if args.fake_from_real:
            report = evaluate(ds, e=e, k_pr=args.k_pr, k_dc=args.k_dc, fake_images=ds.patches)
        else:
            if args.ckpt is None:
                raise UsageError("a checkpoint is required unless --fake-from-real is set")
            report = evaluate(ds, args.ckpt, args.nfake, e, args.seed, args.k_pr, args.k_dc)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


@dataclass
class SweepRow:
    config: str
    fid: float = float("nan")
    precision: float = float("nan")
    density: float = float("nan")
    recall: float = float("nan")
    coverage: float = float("nan")
    best_step: int = 0
    sym_residual: float = float("nan")
    error: str = ""


def _safe_name(config: str) -> str:
    return config.replace("[", "I-").replace("]", "").replace(";", "-").replace(",", "-")


def _run_sweep_config(args, config: str, repeat: int) -> SweepRow:
    row = SweepRow(config)
    try:
        ds = _load_training_data(args, config)
        seed = args.seed + repeat
        gcfg, dcfg, tcfg = _train_configs(args, ds, config, seed)
        out = Path(args.out) / f"{_safe_name(config)}_r{repeat}"
        result = train_loop(ds, gcfg, dcfg, tcfg, out_dir=out)
        e = FeatureEmbedder.from_name(args.embedder)
        ops = parse_ops(ds.manifest.declared_symmetry) or parse_ops("hv")
        best = None
        for path in result.checkpoints:
            images = generate(path, args.nfake, args.seed)
            rep = evaluate(ds, e=e, fake_images=images)
            if best is None or rep.fid < best[0].fid:
                best = (rep, load_checkpoint(path).step, images)
        if best is None:
            raise ContractError("no snapshots were written; lower --snapshot-every")
        rep, step, images = best
        resid = float(np.mean([symmetry_residual(x, op) for x in images for op in ops]))
        row = SweepRow(config, rep.fid, rep.precision, rep.density, rep.recall, rep.coverage, step, resid)
    except Exception as exc:  # recorded in the table, the sweep continues
        logger.exception("config %s failed", config)
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def format_sweep_table(rows: list[SweepRow]) -> str:
    ok = sorted((r for r in rows if not r.error), key=lambda r: r.fid)
    lines = [
        "| config | FID | Pre | Den | Rec | Cov | best step | sym residual |",
        "|---|---:|---:|---:|---:|---:|---:|---:|",
    ]
    for i, r in enumerate(ok):
        mark = "*" if i == 0 else ""
        lines.append(f"| {r.config}{mark} | {r.fid:.3f} | {r.precision:.3f} | {r.density:.3f} | {r.recall:.3f} "
                     f"| {r.coverage:.3f} | {r.best_step} | {r.sym_residual:.4f} |")
    for r in rows:
        if r.error:
            lines.append(f"| {r.config} | error: {r.error} | | | | | | |")
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    configs = split_configs(args.configs)
    for c in configs:
        _spe_arg(c)
    jobs = [(c, k) for c in configs for k in range(args.repeats)]
    workers = max(1, min(args.parallel, _thread_cap() or args.parallel))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sweep_config, [args] * len(jobs), *zip(*jobs)))
    else:
        results = [_run_sweep_config(args, c, k) for c, k in jobs]
    rows = []
    for c in configs:
        mine = [r for (cc, _), r in zip(jobs, results) if cc == c]
        good = [r for r in mine if not r.error]
        rows.append(min(good, key=lambda r: r.fid) if good else mine[0])
    table = format_sweep_table(rows)
    print(table)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "sweep.md").write_text(table + "\n")
    (Path(args.out) / "sweep.json").write_text(json.dumps([r.__dict__ for r in rows], indent=2) + "\n")
    return EXIT_OK if any(not r.error for r in rows) else EXIT_IO


# -- parser ------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--lambda", dest="spe_lambda", type=float, default=1.0, help="SPE loss weight")
    p.add_argument("--steps", type=int, default=2000, help="training minibatches")
    p.add_argument("--size", type=int, default=None, help="training resolution (default: dataset size)")
    p.add_argument("--attn", type=_attn_arg, default=None, help="none or eattn@8|16|32")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--batch-size", type=int, default=8, help="minibatch size")
    p.add_argument("--lr", type=float, default=2e-4, help="Adam learning rate")
    p.add_argument("--snapshot-every", type=int, default=1000, help="checkpoint interval in steps")
    p.add_argument("--diffaug", default="color,translation", help="DiffAug policies (color,translation,cutout)")
    p.add_argument("--base-channels", type=int, default=32, help="generator width")
    p.add_argument("--z-dim", type=int, default=64, help="latent dimension")
    p.add_argument("--epsilon", type=float, default=1e-3, help="symmetry verification tolerance")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="spg", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic symmetric patch dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, default=64, help="number of patches")
    p.add_argument("--size", type=int, default=16, help="patch side length")
    p.add_argument("--family", choices=FAMILIES, default="blobs", help="random field family")
    p.add_argument("--sym", type=_sym_arg, default="hv", help="symmetry to impose (letters from hvnp, or none)")
    p.add_argument("--channels", type=int, default=3, help="image channels")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--epsilon", type=float, default=1e-3, help="verification tolerance")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="find the reflections every patch satisfies", formatter_class=fmt)
    p.add_argument("dir", help="dataset directory")
    p.add_argument("--ops", type=_sym_arg, default="hvnp", help="candidate reflections")
    p.add_argument("--epsilon", type=float, default=1e-3, help="relative residual tolerance")
    p.add_argument("--json", default=None, help="write the symmetry report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train a GAN with optional SPE", formatter_class=fmt)
    p.add_argument("dir", help="dataset directory")
    p.add_argument("--spe", type=_spe_arg, default="hv", help="hv|np|hvnp|hv,np|[hv;np]|none")
    p.add_argument("--out", required=True, help="run directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample a PNG grid from a checkpoint", formatter_class=fmt)
    p.add_argument("ckpt", help="checkpoint file")
    p.add_argument("--n", type=int, default=64, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="latent seed")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="FID, precision, recall, density, coverage", formatter_class=fmt)
    p.add_argument("dir", help="real dataset directory")
    p.add_argument("ckpt", nargs="?", default=None, help="checkpoint file")
    p.add_argument("--embedder", default="pixels8", help="pixels<N> or rconv")
    p.add_argument("--nfake", type=int, default=64, help="generated samples")
    p.add_argument("--seed", type=int, default=0, help="latent seed")
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--fake-from-real", action="store_true", help="score the real set against itself")
    p.add_argument("--k-pr", type=int, default=3, help="k for precision/recall")
    p.add_argument("--k-dc", type=int, default=5, help="k for density/coverage")
    p.add_argument("--real-features", default=None, help="CSV of precomputed real features")
    p.add_argument("--fake-features", default=None, help="CSV of precomputed fake features")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train and score several SPE configs", formatter_class=fmt)
    p.add_argument("dir", help="dataset directory")
    p.add_argument("--configs", default="hv,np,hvnp,[hv;np],none", help="comma-separated SPE configs")
    p.add_argument("--out", default="sweep_runs", help="directory for runs and the result table")
    p.add_argument("--repeats", type=int, default=1, help="runs per config; best FID is kept")
    p.add_argument("--parallel", type=int, default=1, help="configs trained concurrently")
    p.add_argument("--nfake", type=int, default=64, help="samples per evaluation")
    p.add_argument("--embedder", default="pixels8", help="pixels<N> or rconv")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def _thread_cap() -> int | None:
    v = os.environ.get("SPG_THREADS")
    return int(v) if v and v.isdigit() and int(v) > 0 else None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cap = _thread_cap()
    limiter = None
    if cap:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=cap)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except SpeMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPE_MISMATCH
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT if isinstance(exc, CheckpointFormatError) else EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
