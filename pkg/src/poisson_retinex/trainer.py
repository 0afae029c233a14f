"""Paired-patch training loop, checkpoints and the CSV loss log."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .container import ContainerError, read_container, write_container
from .image_io import PairedDataset, PairedSample, random_crop_pair
from .losses import LossBreakdown, total_loss
from .model import RetinexNet, init_model
from .noise import noise_target
from .optim import Adam, clip_grad_norm, cosine_lr
from .rng import stream

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
LOG_HEADER = ["step", "epoch", "rec", "decom", "sps", "noise", "total"]
LOG_NAME = "train_log.csv"


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, terms: dict[str, float]):
        bad = [k for k, v in terms.items() if not math.isfinite(v)]
        culprit = next((k for k in bad if k != "total"), "total")
        super().__init__(f"non-finite loss at step {step}: {culprit} = {terms[culprit]} ({terms})")
        self.step = step
        self.terms = terms
        self.culprit = culprit


class CheckpointShapeError(ContainerError):
    pass


@dataclass
class Checkpoint:
    params: RetinexNet
    optimizer: Adam
    epoch: int
    step: int
    config: TrainConfig
    loss_digest: dict = field(default_factory=dict)


def torch_dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


def to_batch(images, dtype=torch.float32) -> torch.Tensor:
    """Stack H x W x C numpy images into a (B, C, H, W) tensor."""
    arr = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    return torch.from_numpy(arr.transpose(0, 3, 1, 2).copy()).to(dtype)


def new_checkpoint(config: TrainConfig) -> Checkpoint:
    net = init_model(config.seed, config.width, config.noise_head_activation, torch_dtype(config.dtype), config.head_init)
    opt = Adam(net.named_parameters(), config.lr, config.beta1, config.beta2, config.eps)
    return Checkpoint(net, opt, 0, 0, config, {"rows": 0, "sha256": hashlib.sha256().hexdigest()})


# ---------------------------------------------------------------- checkpoint I/O


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in ckpt.params.state_dict().items()}
    arrays.update({f"adam/{k}": v.detach().cpu().numpy() for k, v in ckpt.optimizer.state_arrays().items()})
    meta = {
        "format": "poisson-retinex-checkpoint",
        "version": CHECKPOINT_FORMAT_VERSION,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "adam_t": ckpt.optimizer.t,
        "config": ckpt.config.to_flat(),
        "loss_digest": ckpt.loss_digest,
    }
    write_container(path, arrays, meta)


def load_checkpoint(path, width: int | None = None) -> Checkpoint:
    """Read a checkpoint and rebuild the network and optimizer state.

    ``width``, if given, must match the width recorded in the file.
    """
    arrays, meta = read_container(path)
    if meta.get("format") != "poisson-retinex-checkpoint":
        raise ContainerError(f"{path}: not a checkpoint")
    if meta.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise ContainerError(
            f"{path}: checkpoint format version {meta.get('version')}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    config = TrainConfig.from_flat(meta["config"])
    if width is not None and width != config.width:
        raise CheckpointShapeError(f"{path}: checkpoint width {config.width} does not match requested width {width}")
    net = init_model(config.seed, config.width, config.noise_head_activation, torch_dtype(config.dtype), config.head_init)
    state = net.state_dict()
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    if set(params) != set(state):
        raise CheckpointShapeError(f"{path}: parameter names do not match the architecture")
    for k, ref in state.items():
        if tuple(params[k].shape) != tuple(ref.shape):
            raise CheckpointShapeError(
                f"{path}: {k} has shape {params[k].shape}, architecture expects {tuple(ref.shape)}"
            )
    net.load_state_dict({k: torch.from_numpy(v) for k, v in params.items()})
    opt = Adam(net.named_parameters(), config.lr, config.beta1, config.beta2, config.eps)
    adam = {k[len("adam/"):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("adam/")}
    if set(adam) != set(opt.state_arrays()):
        raise CheckpointShapeError(f"{path}: optimizer state does not match the architecture")
    for k, ref in opt.state_arrays().items():
        if adam[k].shape != ref.shape:
            raise CheckpointShapeError(f"{path}: optimizer moment {k} has wrong shape")
    opt.load_state_arrays(adam, meta["adam_t"])
    return Checkpoint(net, opt, int(meta["epoch"]), int(meta["step"]), config, meta.get("loss_digest", {}))


# ---------------------------------------------------------------- training


def train_step(
    params: RetinexNet,
    opt: Adam,
    batch: list[PairedSample],
    config: TrainConfig,
    step: int = 0,
    lr: float | None = None,
) -> LossBreakdown:
    """One forward/backward pass and Adam update on a batch of crops.

    The low image is the network input; the high image only enters the
    decomposition term. A fresh noise target is sampled from the ``noise``
    stream at index ``step``. Parameters and optimizer state change in place.
    """
    dtype = torch_dtype(config.dtype)
    y = to_batch([s.low for s in batch], dtype)
    x = to_batch([s.high for s in batch], dtype)
    w = config.weights
    target = noise_target(y.numpy().astype(np.float64), config.photon_scale, w.alpha, config.seed, index=(step,))
    target = torch.from_numpy(target).to(dtype)

    opt.zero_grad()
    triple = params(y)
    losses = total_loss(y, x, triple, target, w)
    values = losses.floats()
    if not all(math.isfinite(v) for v in values.values()):
        raise NonFiniteLossError(step, values)
    losses.total.backward()
    if config.grad_clip > 0:
        clip_grad_norm(params.parameters(), config.grad_clip)
    opt.step(lr)
    return losses


def split_ids(ids: list[str], config: TrainConfig) -> tuple[list[str], list[str]]:
    """Seeded hold-out of ``val_fraction`` of the ids (rounded down)."""
    n_val = int(len(ids) * config.val_fraction)
    if n_val == 0:
        return list(ids), []
    order = stream(config.seed, "split").permutation(len(ids))
    val = sorted(ids[i] for i in order[:n_val])
    held = set(val)
    return [i for i in ids if i not in held], val


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return stream(seed, "shuffle", epoch).permutation(n)


class _Source:
    """Uniform access to an on-disk dataset or an in-memory list of pairs."""

    def __init__(self, data):
        if isinstance(data, (str, Path)):
            self.dataset = PairedDataset(data)
            self.ids = list(self.dataset.ids)
            self._mem = None
        else:
            self.dataset = None
            self._mem = {s.id: s for s in data}
            self.ids = sorted(self._mem)
            if not self.ids:
                raise ValueError("no training pairs")

    def get(self, sample_id: str) -> PairedSample:
        return self._mem[sample_id] if self._mem is not None else self.dataset.load(sample_id)


def _digest_update(digest: dict, rows: list[list]) -> dict:
    h = hashlib.sha256(bytes.fromhex(digest.get("sha256", hashlib.sha256().hexdigest())))
    for row in rows:
        h.update(",".join(map(str, row)).encode())
    return {"rows": digest.get("rows", 0) + len(rows), "sha256": h.hexdigest()}


def _format_row(step, epoch, vals):
    return [step, epoch] + [repr(vals[k]) for k in LossBreakdown.FIELDS]


def train(
    config: TrainConfig,
    data,
    run_dir=None,
    resume: Checkpoint | None = None,
    progress=None,
) -> tuple[Checkpoint, list[list]]:
    """Train for ``config.epochs`` epochs and return the final checkpoint and log rows.

    ``data`` is a dataset root (``low/`` + ``high/``) or a list of
    ``PairedSample``. With ``run_dir`` set, ``train_log.csv`` and
    ``ckpt_epoch<k>.bin`` files are written there. ``resume`` continues from a
    checkpoint taken at an epoch boundary; the random streams are keyed by
    epoch/step so the continuation matches an uninterrupted run.
    """
    source = _Source(data)
    train_ids, val_ids = split_ids(source.ids, config)
    if not train_ids:
        raise ValueError("validation split left no training pairs")
    ckpt = resume if resume is not None else new_checkpoint(config)
    net, opt = ckpt.params, ckpt.optimizer
    steps_per_epoch = math.ceil(len(train_ids) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs

    log_path = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        log_path = run_dir / LOG_NAME
        if resume is None or not log_path.exists():
            with open(log_path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_HEADER)

    rows: list[list] = []
    step = ckpt.step
    for epoch in range(ckpt.epoch, config.epochs):
        order = epoch_order(len(train_ids), config.seed, epoch)
        epoch_rows = []
        for b in range(steps_per_epoch):
            chosen = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = []
            for i in chosen:
                sample = source.get(train_ids[i])
                crop_index = (0, int(i)) if config.crop_mode == "fixed" else (epoch, int(i))
                batch.append(random_crop_pair(sample, config.patch, config.seed, *crop_index))
            lr = cosine_lr(config.lr, step, total_steps) if config.lr_schedule == "cosine" else config.lr
            losses = train_step(net, opt, batch, config, step, lr)
            epoch_rows.append(_format_row(step, epoch, losses.floats()))
            step += 1
        rows.extend(epoch_rows)
        ckpt.loss_digest = _digest_update(ckpt.loss_digest, epoch_rows)
        ckpt.epoch, ckpt.step = epoch + 1, step
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh).writerows(epoch_rows)
        last = epoch_rows[-1]
        logger.info("epoch %d/%d step %d total %s", epoch + 1, config.epochs, step, last[-1])
        if progress is not None:
            progress(epoch + 1, last)
        if run_dir is not None and ((epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs):
            save_checkpoint(ckpt, run_dir / f"ckpt_epoch{epoch + 1}.bin")
            if val_ids:
                logger.info("epoch %d validation total %.6f", epoch + 1, validation_loss(net, source, val_ids, config))

    if run_dir is not None and config.epochs == ckpt.epoch == 0:
        save_checkpoint(ckpt, run_dir / "ckpt_epoch0.bin")
    return ckpt, rows


@torch.no_grad()
def validation_loss(net: RetinexNet, source, val_ids: list[str], config: TrainConfig) -> float:
    dtype = torch_dtype(config.dtype)
    totals = []
    for k, sample_id in enumerate(val_ids):
        s = random_crop_pair(source.get(sample_id), config.patch, config.seed, 0, k)
        y, x = to_batch([s.low], dtype), to_batch([s.high], dtype)
        target = noise_target(
            y.numpy().astype(np.float64), config.photon_scale, config.weights.alpha,
            rng=stream(config.seed, "validate", k),
        )
        losses = total_loss(y, x, net(y), torch.from_numpy(target).to(dtype), config.weights)
        totals.append(float(losses.total))
    return float(np.mean(totals))


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
