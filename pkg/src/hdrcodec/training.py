"""End-to-end rate-distortion training.

The objective is the weighted sum of the two per-pixel rate terms and the
two distortions: bits-per-pixel of the HDR side stream, lambda_h times the
exposure-stack distortion of the reconstruction, bits-per-pixel of the LDR
stream, and lambda_l times the pyramid distance of the LDR output. Latents
are noise-proxied throughout training; the clipping and absolute-value
kinks inside the distortions are smoothed by a configurable width so the
loss is smooth end to end.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .display import DisplayModel
from .hdr_io import HdrImage, luminance
from .metrics import BASE_METRICS, NlpdConfig, d_h_t, luminance_t, nlpd_luminance_t
from .display import render_luminance_t, choose_exposures
from .model import CHECKPOINT_VERSION, HdrCodec
from .networks import NetworkConfig


class TrainingFault(RuntimeError):
    """Non-finite loss or other unrecoverable optimization failure."""


class CheckpointError(ValueError):
    """Checkpoint file is corrupt or has an incompatible version."""


@dataclass
class TrainConfig:
    lambda_l: float = 100.0
    lambda_h: float = 1500.0
    lr: float = 1e-4
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 200  # epochs
    epochs: int = 600
    max_steps: int | None = None  # desk-scale override; caps total steps
    batch: int = 4
    crop: int = 64
    l_max_set: tuple[float, ...] = (1e4, 1e5, 1e6, 1e7)
    seed: int = 0
    exposure_count: int = 4
    base_metric: str = "dssim"
    smooth_eps: float = 1e-2
    smooth_clip_delta: float = 1e-2
    checkpoint_every: int = 0  # epochs; 0 = final only
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.lambda_l <= 0 or self.lambda_h <= 0:
            raise ValueError("trade-off weights must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not self.l_max_set:
            raise ValueError("l_max_set must be non-empty")
        if self.base_metric not in BASE_METRICS:
            raise ValueError(f"unknown base metric {self.base_metric!r}")
        if isinstance(self.network, dict):
            self.network = NetworkConfig(**self.network)
        self.l_max_set = tuple(float(v) for v in self.l_max_set)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def lr_for_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-indexed epoch: divided by the decay factor
    after every ``lr_decay_every`` epochs."""
    if epoch < 1:
        raise ValueError("epochs are 1-indexed")
    return cfg.lr / cfg.lr_decay_factor ** ((epoch - 1) // cfg.lr_decay_every)


def rd_loss(
    model: HdrCodec,
    batch: torch.Tensor,
    l_max: torch.Tensor,
    cfg: TrainConfig,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, dict]:
    """Rate-distortion objective for a pre-processed (B, 3, H, W) batch.

    Rates enter per source pixel so the trade-off weights match across crop
    sizes. Returns the scalar loss and detached per-term diagnostics.
    """
    display = DisplayModel()
    base = BASE_METRICS[cfg.base_metric]
    out = model(batch, l_max, generator=generator, training_noise=True)
    b = batch.shape[0]
    npix = batch.shape[-1] * batch.shape[-2]

    r_l = out["bits_ldr"] / (b * npix)
    r_h = out["bits_hdr"] / (b * npix)

    nlpd_cfg = NlpdConfig(smooth_eps=cfg.smooth_eps)
    ref_lum = luminance_t(batch) * l_max[:, None, None, None]
    test_lum = render_luminance_t(luminance_t(out["ldr"]), display)
    d_l = nlpd_luminance_t(ref_lum, test_lum, nlpd_cfg).mean()

    d_h_total = batch.new_zeros(())
    for i in range(b):
        ref_img = HdrImage(batch[i].permute(1, 2, 0).detach().numpy().astype(np.float64))
        exposures = choose_exposures(ref_img, float(l_max[i]), cfg.exposure_count)
        d_h_total = d_h_total + d_h_t(
            batch[i],
            out["hdr"][i],
            float(l_max[i]),
            exposures,
            base=base,
            display=display,
            smooth_delta=cfg.smooth_clip_delta,
        )
    d_h = d_h_total / b

    loss = r_h + cfg.lambda_h * d_h + r_l + cfg.lambda_l * d_l
    parts = {
        "loss": float(loss.detach()),
        "r_l": float(r_l.detach()),
        "r_h": float(r_h.detach()),
        "d_l": float(d_l.detach()),
        "d_h": float(d_h.detach()),
    }
    if not math.isfinite(parts["loss"]):
        raise TrainingFault(f"non-finite loss: {parts}")
    return loss, parts


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: HdrCodec,
    optimizer: torch.optim.Optimizer | None = None,
    train_config: TrainConfig | None = None,
    epoch: int = 0,
    step: int = 0,
    rng_states: dict | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "network_config": asdict(model.cfg),
        "train_config": asdict(train_config) if train_config else None,
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer else None,
        "epoch": epoch,
        "step": step,
        "rng_states": rng_states or {},
        "model_id": model.model_id,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[HdrCodec, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError("not a codec checkpoint")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['format_version']} != {CHECKPOINT_VERSION}"
        )
    model = HdrCodec(NetworkConfig(**payload["network_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: HdrCodec
    history: list[dict]
    checkpoint_path: Path | None


def _stratified_l_max(cfg: TrainConfig, n: int, generator: torch.Generator) -> list[float]:
    """Balanced conditioning luminances for one epoch, randomly ordered, so
    every value of the set is visited whenever n >= len(l_max_set)."""
    reps = -(-n // len(cfg.l_max_set))
    pool = list(cfg.l_max_set) * reps
    perm = torch.randperm(len(pool), generator=generator).tolist()
    return [pool[i] for i in perm[:n]]


def _random_crop(
    px: torch.Tensor, crop: int, generator: torch.Generator
) -> torch.Tensor:
    _, h, w = px.shape
    if h < crop or w < crop:
        raise ValueError(f"image {h}x{w} smaller than crop {crop}")
    top = int(torch.randint(0, h - crop + 1, (1,), generator=generator))
    left = int(torch.randint(0, w - crop + 1, (1,), generator=generator))
    return px[:, top : top + crop, left : left + crop]


def train(
    cfg: TrainConfig,
    images: list[HdrImage],
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    log_fn=None,
) -> TrainResult:
    """Optimize a codec on pre-processed images; deterministic given the
    seed (data order, conditioning draws, noise and initialization)."""
    if len(images) < 1:
        raise ValueError("need at least one training image")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    tensors = [
        torch.from_numpy(img.pixels).float().permute(2, 0, 1) for img in images
    ]

    torch.manual_seed(cfg.seed)
    model = HdrCodec(cfg.network)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    data_gen = torch.Generator().manual_seed(cfg.seed + 1)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 2)
    start_epoch = 1
    step = 0

    if resume_from is not None:
        model, payload = load_checkpoint(resume_from)
        if payload["optimizer"] is None:
            raise CheckpointError("checkpoint has no optimizer state to resume from")
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        optimizer.load_state_dict(payload["optimizer"])
        data_gen.set_state(payload["rng_states"]["data"])
        noise_gen.set_state(payload["rng_states"]["noise"])
        start_epoch = payload["epoch"] + 1
        step = payload["step"]
        model.train()

    n = len(tensors)
    steps_per_epoch = -(-n // cfg.batch)
    history: list[dict] = []
    log_file = (out_dir / "train_log.jsonl").open("a") if out_dir else None
    last_good = None

    def _snapshot(epoch):
        return {
            "model": copy.deepcopy(model.state_dict()),
            "optimizer": copy.deepcopy(optimizer.state_dict()),
            "epoch": epoch,
            "step": step,
            "rng": {"data": data_gen.get_state(), "noise": noise_gen.get_state()},
        }

    def _write_checkpoint(path, snap):
        torch.save(
            {
                "format_version": CHECKPOINT_VERSION,
                "network_config": asdict(model.cfg),
                "train_config": asdict(cfg),
                "state_dict": snap["model"],
                "optimizer": snap["optimizer"],
                "epoch": snap["epoch"],
                "step": snap["step"],
                "rng_states": snap["rng"],
                "model_id": model.model_id,
            },
            path,
        )

    model.train()
    done = False
    try:
        for epoch in range(start_epoch, cfg.epochs + 1):
            lr = lr_for_epoch(cfg, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = torch.randperm(n, generator=data_gen).tolist()
            l_max_epoch = _stratified_l_max(cfg, n, data_gen)
            for k in range(steps_per_epoch):
                idxs = order[k * cfg.batch : (k + 1) * cfg.batch]
                crops = torch.stack(
                    [_random_crop(tensors[i], cfg.crop, data_gen) for i in idxs]
                )
                l_max = torch.tensor([l_max_epoch[i] for i in idxs])
                try:
                    loss, parts = rd_loss(model, crops, l_max, cfg, noise_gen)
                except TrainingFault:
                    if out_dir is not None and last_good is not None:
                        _write_checkpoint(out_dir / "last_good.pt", last_good)
                    raise
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                step += 1
                record = {"step": step, "epoch": epoch, "lr": lr, **parts}
                history.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                if log_fn:
                    log_fn(record)
                last_good = _snapshot(epoch)
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    done = True
                    break
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and out_dir:
                _write_checkpoint(out_dir / f"epoch_{epoch:05d}.pt", _snapshot(epoch))
            if done:
                break
    finally:
        if log_file:
            log_file.close()

    model.eval()
    ckpt_path = None
    if out_dir is not None:
        ckpt_path = out_dir / "checkpoint.pt"
        snap = last_good if last_good is not None else _snapshot(start_epoch - 1)
        _write_checkpoint(ckpt_path, snap)
    return TrainResult(model=model, history=history, checkpoint_path=ckpt_path)
