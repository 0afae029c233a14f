"""Command-line entry point: ``poisson-retinex <command> [options]``.

Commands::

    simulate     clean images -> <out-root>/level<k>/{low,high}
    train        paired dataset -> run directory (manifest, train_log.csv, checkpoints)
    enhance      checkpoint + image(s) -> enhanced image(s)
    decompose    checkpoint + image(s) -> L, R, N and enhanced maps per image
    evaluate     output dir vs reference dir -> metrics.csv and an aggregate line
    fit-niqe     pristine images -> NIQE model file
    report       run directory -> loss curve CSV and per-image RGB histogram CSVs

Exit codes: 0 success, 1 usage or input error, 2 I/O or format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import torch

from . import __version__
from .config import ConfigError, load_config
from .container import ContainerError
from .enhance import decompose_to_files, enhance
from .image_io import IMAGE_SUFFIXES, DatasetError, ImageFormatError, load_image, save_image
from .metrics import IdMismatchError, channel_histograms, evaluate
from .niqe import N_FEATURES, NiqeError, NiqeModel, fit_niqe_model
from .noise import DEFAULT_PHOTON_SCALE, level_ladder, simulate_low_light
from .trainer import (
    CHECKPOINT_FORMAT_VERSION,
    LOG_NAME,
    NonFiniteLossError,
    load_checkpoint,
    train,
)

logger = logging.getLogger("poisson_retinex")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    """Bad arguments or missing inputs (exit 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- run manifest


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    started: str
    finished: str | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, directory: Path) -> None:
        """Atomically (re)write ``manifest.json`` in ``directory``."""
        directory.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        os.replace(tmp, directory / MANIFEST_NAME)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(root: Path, skip=(MANIFEST_NAME,)) -> dict[str, str]:
    if root.is_file():
        return {root.name: sha256_file(root)}
    return {
        str(p.relative_to(root)): sha256_file(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name not in skip and not p.name.startswith(".manifest")
    }


def _start_manifest(args, directory: Path, config: dict | None = None, inputs=None) -> RunManifest:
    resolved = config if config is not None else {
        k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "handler"
    }
    manifest = RunManifest(
        command=args.command,
        config=resolved,
        seed=getattr(args, "seed", None),
        started=_now(),
        inputs={k: str(v) for k, v in (inputs or {}).items()},
        outputs={"dir": str(directory)},
    )
    manifest.write(directory)
    return manifest


def _finish_manifest(manifest: RunManifest, directory: Path) -> None:
    manifest.finished = _now()
    manifest.hashes = _hash_tree(directory)
    manifest.write(directory)


# ---------------------------------------------------------------- helpers


def _require_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise UsageError(f"{what} not found: {path}")
    return path


def _list_images(directory: Path, recursive: bool = False) -> list[Path]:
    found = directory.rglob("*") if recursive else directory.iterdir()
    return sorted(p for p in found if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _image_jobs(src: Path, out: Path) -> list[tuple[Path, Path]]:
    """(input file, output path without suffix) pairs, mirroring directory layout."""
    if src.is_file():
        return [(src, out / src.stem)]
    if src.is_dir():
        files = _list_images(src, recursive=True)
        if not files:
            raise UsageError(f"no PNG/JPEG images under {src}")
        return [(p, out / p.relative_to(src).with_suffix("")) for p in files]
    raise UsageError(f"input not found: {src}")


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    src = _require_dir(args.input_dir, "input directory")
    files = _list_images(src)
    if not files:
        raise UsageError(f"no PNG/JPEG images in {src}")
    if args.levels < 1:
        raise UsageError("--levels must be at least 1")
    out = args.out_root
    manifest = _start_manifest(args, out, inputs={"input_dir": src})
    exposures = level_ladder(args.levels)
    for i, path in enumerate(files):
        clean = load_image(path)
        for k, e in enumerate(exposures, start=1):
            low = simulate_low_light(clean, e, args.photon_scale, args.seed, index=(k, i))
            save_image(low, out / f"level{k}" / "low" / f"{path.stem}.png")
            save_image(clean, out / f"level{k}" / "high" / f"{path.stem}.png")
    manifest.config["exposures"] = exposures
    _finish_manifest(manifest, out)
    print(f"simulated {len(files)} images at {len(exposures)} levels into {out}")
    return EXIT_OK


TRAIN_OVERRIDES = (
    ("epochs", int), ("lr", float), ("batch_size", int), ("patch", int), ("width", int),
    ("photon_scale", float), ("checkpoint_every", int), ("val_fraction", float),
    ("grad_clip", float), ("lambda1", float), ("lambda2", float), ("gamma", float),
    ("beta", float), ("alpha", float), ("lr_schedule", str), ("crop_mode", str),
    ("noise_head_activation", str), ("head_init", str), ("dtype", str),
)


def cmd_train(args) -> int:
    if args.config is not None and not args.config.is_file():
        raise UsageError(f"config file not found: {args.config}")
    overrides = {name: getattr(args, name) for name, _ in TRAIN_OVERRIDES}
    config = load_config(args.config, seed=args.seed, **overrides)
    _require_dir(args.data, "data directory")
    resume = None
    if args.resume is not None:
        resume = load_checkpoint(args.resume, width=config.width)
        resume.config = config
    out = args.out
    inputs = {"data": args.data}
    if args.config is not None:
        inputs["config"] = args.config
    if args.resume is not None:
        inputs["resume"] = args.resume
    manifest = _start_manifest(args, out, config=config.to_flat(), inputs=inputs)
    manifest.seed = config.seed

    def progress(epoch, row):
        logger.info("epoch %d/%d total %s", epoch, config.epochs, row[-1])

    ckpt, rows = train(config, args.data, run_dir=out, resume=resume, progress=progress)
    _finish_manifest(manifest, out)
    print(f"trained {ckpt.epoch} epochs ({ckpt.step} steps); final total loss "
          f"{rows[-1][-1] if rows else 'n/a'}; run directory {out}")
    return EXIT_OK


def _load_net(path: Path):
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    net = load_checkpoint(path).params
    net.eval()
    return net


def _net_inputs(args) -> dict:
    return {"ckpt": args.ckpt, "ckpt_sha256": sha256_file(args.ckpt), "input": args.input}


def cmd_enhance(args) -> int:
    net = _load_net(args.ckpt)
    jobs = _image_jobs(args.input, args.out)
    manifest = _start_manifest(args, args.out, inputs=_net_inputs(args))
    for src, dst in jobs:
        save_image(enhance(net, load_image(src)).enhanced, dst.with_suffix(".png"))
    _finish_manifest(manifest, args.out)
    print(f"enhanced {len(jobs)} image(s) into {args.out}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    net = _load_net(args.ckpt)
    jobs = _image_jobs(args.input, args.out)
    manifest = _start_manifest(args, args.out, inputs=_net_inputs(args))
    for src, dst in jobs:
        decompose_to_files(net, load_image(src), dst)
    _finish_manifest(manifest, args.out)
    print(f"decomposed {len(jobs)} image(s) into {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require_dir(args.output_dir, "output directory")
    _require_dir(args.reference_dir, "reference directory")
    model = None
    if args.niqe_model is None:
        logger.warning("no --niqe-model given; the NIQE column is omitted")
    else:
        if not args.niqe_model.is_file():
            raise UsageError(f"NIQE model not found: {args.niqe_model}")
        model = NiqeModel.load(args.niqe_model)
    report = evaluate(args.output_dir, args.reference_dir, model, jobs=args.jobs)
    report.write_csv(args.report)
    print(report.summary_line())
    return EXIT_OK


def cmd_fit_niqe(args) -> int:
    src = _require_dir(args.pristine_dir, "pristine directory")
    model = fit_niqe_model(src, patch=args.patch)
    model.save(args.out_model)
    n_images = len(_list_images(src))
    print(f"NIQE model: {N_FEATURES} features, patch {args.patch}, {n_images} pristine images -> {args.out_model}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = _require_dir(args.run_dir, "run directory")
    log = run_dir / LOG_NAME
    if not log.is_file():
        raise UsageError(f"no training log in {run_dir} (expected {LOG_NAME})")
    out = args.out
    manifest = _start_manifest(args, out, inputs={"run_dir": run_dir})
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(log, out / "loss_curve.csv")
    image_dir = args.images if args.images is not None else run_dir
    if args.images is not None:
        _require_dir(image_dir, "image directory")
    images = _list_images(image_dir, recursive=args.images is not None)
    for path in images:
        img = load_image(path)
        hist = channel_histograms(img if img.shape[2] == 3 else img.repeat(3, axis=2), args.bins)
        rel = path.relative_to(image_dir).with_suffix(".csv")
        dst = out / "histograms" / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        with open(dst, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel"] + [f"bin{b}" for b in range(args.bins)])
            for name, row in zip("RGB", hist):
                w.writerow([name] + [repr(float(v)) for v in row])
    _finish_manifest(manifest, out)
    print(f"wrote loss curve and {len(images)} histogram file(s) into {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poisson-retinex", description="Low-light enhancement by Retinex decomposition under Poisson noise.")
    p.add_argument(
        "--version", action="version",
        version=f"poisson-retinex {__version__} (checkpoint format {CHECKPOINT_FORMAT_VERSION})",
    )
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads (default: logical cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="synthesize low-light pairs at a ladder of exposures")
    s.add_argument("--input-dir", type=Path, required=True)
    s.add_argument("--out-root", type=Path, required=True)
    s.add_argument("--levels", type=int, default=4)
    s.add_argument("--photon-scale", type=float, default=DEFAULT_PHOTON_SCALE)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(handler=cmd_simulate)

    t = sub.add_parser("train", help="train the decomposition network")
    t.add_argument("--data", type=Path, required=True, help="dataset root with low/ and high/")
    t.add_argument("--config", type=Path, help="key = value config file; flags override it")
    t.add_argument("--out", type=Path, required=True, help="run directory")
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")
    t.add_argument("--seed", type=int)
    for name, kind in TRAIN_OVERRIDES:
        t.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)
    t.set_defaults(handler=cmd_train)

    for name, handler, helptext in (
        ("enhance", cmd_enhance, "enhance an image or a directory of images"),
        ("decompose", cmd_decompose, "write L, R, N and enhanced maps per image"),
    ):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--ckpt", type=Path, required=True)
        e.add_argument("--input", type=Path, required=True, help="image file or directory")
        e.add_argument("--out", type=Path, required=True, help="output directory")
        e.set_defaults(handler=handler)

    v = sub.add_parser("evaluate", help="score outputs against references")
    v.add_argument("--output-dir", type=Path, required=True)
    v.add_argument("--reference-dir", type=Path, required=True)
    v.add_argument("--niqe-model", type=Path)
    v.add_argument("--report", type=Path, default=Path("metrics.csv"))
    v.set_defaults(handler=cmd_evaluate)

    f = sub.add_parser("fit-niqe", help="fit a NIQE model on pristine images")
    f.add_argument("--pristine-dir", type=Path, required=True)
    f.add_argument("--out-model", type=Path, required=True)
    f.add_argument("--patch", type=int, default=96)
    f.set_defaults(handler=cmd_fit_niqe)

    r = sub.add_parser("report", help="export loss curve and RGB histograms as CSV")
    r.add_argument("--run-dir", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--images", type=Path, help="images to histogram (default: those in the run directory)")
    r.add_argument("--bins", type=int, default=64)
    r.set_defaults(handler=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    torch.set_num_threads(args.jobs)
    try:
        return args.handler(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, DatasetError, IdMismatchError, NiqeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContainerError, ImageFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
