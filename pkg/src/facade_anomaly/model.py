"""Colour-to-thermal translation network and its adversarial training.

The generator is a pix2pix U-Net (4x4 stride-2 convolutions, skip
connections, tanh output) that maps an RGB image in [-1, 1] to one thermal
channel in [-1, 1]; the 31 code levels are recovered by rounding. The
discriminator is a 70x70 PatchGAN scoring (RGB, thermal) pairs. Training
uses the usual conditional GAN loss plus an L1 term weighted by 100, Adam
with betas (0.5, 0.999), and per-sample masked L1 so invalid pixels never
contribute.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn

from .codec import EncodedThermal, EncodingParams
from .dataset import DatasetCatalog, batches
from .errors import EmptySplit, NonFiniteLoss, ResolutionMismatch, ShapeMismatch

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "facade-anomaly-c2t/1"
MAX_CODE = 30
MAX_DEPTH = 8
NONFINITE_PATIENCE = 3


# -- normalization ---------------------------------------------------------

def codes_to_model(codes, max_code: int = MAX_CODE) -> torch.Tensor:
    """Affine map of codes 0..max_code onto [-1, 1]."""
    return torch.as_tensor(np.asarray(codes), dtype=torch.float32) * (2.0 / max_code) - 1.0


def model_to_codes(x, max_code: int = MAX_CODE) -> np.ndarray:
    """Nearest code for model outputs; values outside [-1, 1] saturate."""
    x = x.detach().cpu().numpy() if isinstance(x, torch.Tensor) else np.asarray(x, dtype=np.float64)
    codes = np.floor((x + 1.0) * (max_code / 2.0) + 0.5)
    return np.clip(codes, 0, max_code).astype(np.int16)


def normalize_for_model(enc: EncodedThermal) -> torch.Tensor:
    return codes_to_model(enc.codes, enc.params.max_code)


def rgb_to_model(rgb) -> torch.Tensor:
    """(..., H, W, 3) uint8 to (..., 3, H, W) float in [-1, 1]."""
    t = torch.as_tensor(np.asarray(rgb), dtype=torch.float32) / 127.5 - 1.0
    return t.movedim(-1, -3)


# -- networks --------------------------------------------------------------

def scaled_width(base: int, scale: float) -> int:
    return max(1, int(round(base * scale)))


def unet_depth(resolution: int) -> int:
    """Down/up levels: 8 at 512 px and one fewer per halving."""
    if resolution < 4 or resolution & (resolution - 1):
        raise ShapeMismatch(f"resolution must be a power of two >= 4, got {resolution}")
    return min(MAX_DEPTH, int(math.log2(resolution)) - 1)


class UNetGenerator(nn.Module):
    def __init__(self, in_channels: int = 3, out_channels: int = 1, ngf: int = 64, depth: int = 8,
                 dropout: float = 0.5):
        super().__init__()
        widths = [ngf * min(8, 2 ** i) for i in range(depth)]
        self.depth = depth
        self.down = nn.ModuleList()
        for i in range(depth):
            cin = in_channels if i == 0 else widths[i - 1]
            layers = []
            if i > 0:
                layers.append(nn.LeakyReLU(0.2))
            layers.append(nn.Conv2d(cin, widths[i], 4, 2, 1, bias=(i == 0 or i == depth - 1)))
            if 0 < i < depth - 1:
                layers.append(nn.BatchNorm2d(widths[i]))
            self.down.append(nn.Sequential(*layers))

        # up[i] produces the input of level i (the mirror of down[i])
        n_dropout = max(0, depth - 5)
        self.up = nn.ModuleList()
        for i in range(depth):
            cin = widths[i] if i == depth - 1 else 2 * widths[i]
            layers = [nn.ReLU()]
            if i == 0:
                layers += [nn.ConvTranspose2d(cin, out_channels, 4, 2, 1), nn.Tanh()]
            else:
                layers += [nn.ConvTranspose2d(cin, widths[i - 1], 4, 2, 1, bias=False),
                           nn.BatchNorm2d(widths[i - 1])]
                if depth - 1 - n_dropout <= i < depth - 1:
                    layers.append(nn.Dropout(dropout))
            self.up.append(nn.Sequential(*layers))

    def forward(self, x):
        skips = []
        for layer in self.down:
            x = layer(x)
            skips.append(x)
        x = self.up[-1](skips[-1])
        for i in range(self.depth - 2, -1, -1):
            x = self.up[i](torch.cat([skips[i], x], dim=1))
        return x


class PatchDiscriminator(nn.Module):
    """PatchGAN; with three strided layers its receptive field is 70x70."""

    def __init__(self, in_channels: int = 4, ndf: int = 64, n_layers: int = 3):
        super().__init__()
        layers = [nn.Conv2d(in_channels, ndf, 4, 2, 1), nn.LeakyReLU(0.2)]
        mult = 1
        for n in range(1, n_layers + 1):
            prev, mult = mult, min(2 ** n, 8)
            stride = 2 if n < n_layers else 1
            layers += [nn.Conv2d(ndf * prev, ndf * mult, 4, stride, 1, bias=False),
                       nn.BatchNorm2d(ndf * mult), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(ndf * mult, 1, 4, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, rgb, thermal):
        return self.net(torch.cat([rgb, thermal], dim=1))


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)


# -- model container -------------------------------------------------------

@dataclass
class TrainingConfig:
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    epochs: int = 200
    batch_size: int = 1
    l1_weight: float = 100.0
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    augment: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")


# Winter nets train from scratch; the summer preset is meant for fine-tuning a winter model.
PRESETS = {
    "winter": TrainingConfig(lr_generator=1e-3, lr_discriminator=1e-3, epochs=150, batch_size=3),
    "summer": TrainingConfig(lr_generator=2e-4, lr_discriminator=2e-4, epochs=30, batch_size=3),
}


@dataclass
class GeneratorModel:
    """Trained colour-to-thermal mapping plus everything needed to reuse it."""

    generator: UNetGenerator
    discriminator: PatchDiscriminator
    resolution: int
    scale: float
    encoding: EncodingParams = field(default_factory=EncodingParams)
    provenance: dict = field(default_factory=dict)
    config: Optional[TrainingConfig] = None
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, resolution: int, scale: float = 1.0, seed: int = 0,
               encoding: Optional[EncodingParams] = None) -> "GeneratorModel":
        depth = unet_depth(resolution)
        torch.manual_seed(seed)
        g = UNetGenerator(ngf=scaled_width(64, scale), depth=depth)
        d = PatchDiscriminator(ndf=scaled_width(64, scale))
        init_weights(g)
        init_weights(d)
        g.eval()
        d.eval()
        enc = encoding or EncodingParams()
        return cls(g, d, resolution, scale, EncodingParams(0.0, enc.range_lo, enc.range_hi, enc.step),
                   provenance={"init_seed": seed, "fine_tuned_from": None})

    @property
    def architecture(self) -> dict:
        return {
            "generator": "unet",
            "depth": self.generator.depth,
            "ngf": scaled_width(64, self.scale),
            "discriminator": "patchgan70",
            "ndf": scaled_width(64, self.scale),
            "resolution": self.resolution,
            "scale": self.scale,
            "norm": "batch",
            "dropout": 0.5,
        }

    def copy(self) -> "GeneratorModel":
        return copy.deepcopy(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "architecture": self.architecture,
                "generator": self.generator.state_dict(),
                "discriminator": self.discriminator.state_dict(),
                "encoding": self.encoding.to_dict(),
                "provenance": self.provenance,
                "config": asdict(self.config) if self.config else None,
                "history": self.history,
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path) -> "GeneratorModel":
        ckpt = torch.load(Path(path), map_location="cpu", weights_only=False)
        if ckpt.get("format") != CHECKPOINT_FORMAT:
            raise ShapeMismatch(f"{path} is not a facade-anomaly checkpoint")
        arch = ckpt["architecture"]
        model = cls.create(arch["resolution"], arch["scale"], encoding=EncodingParams.from_dict(ckpt["encoding"]))
        model.generator.load_state_dict(ckpt["generator"])
        model.discriminator.load_state_dict(ckpt["discriminator"])
        model.provenance = ckpt["provenance"]
        model.config = TrainingConfig(**ckpt["config"]) if ckpt.get("config") else None
        model.history = ckpt.get("history", [])
        return model


# -- inference -------------------------------------------------------------

def _check_resolution(model: GeneratorModel, shape) -> None:
    if tuple(shape) != (model.resolution, model.resolution):
        raise ResolutionMismatch(f"model expects {model.resolution}x{model.resolution}, got {shape[0]}x{shape[1]}")


@torch.no_grad()
def predict_raw(model: GeneratorModel, rgb: np.ndarray) -> torch.Tensor:
    """Continuous generator output (B, 1, H, W) for a (B, H, W, 3) batch."""
    _check_resolution(model, rgb.shape[1:3])
    model.generator.eval()
    return model.generator(rgb_to_model(rgb))


def predict(model: GeneratorModel, rgb, t_out: float = 0.0) -> EncodedThermal:
    """Expected thermal codes for one RGB image."""
    rgb = np.asarray(getattr(rgb, "pixels", rgb))
    out = predict_raw(model, rgb[None])
    codes = model_to_codes(out[0, 0], model.encoding.max_code)
    enc = model.encoding
    return EncodedThermal(codes=codes, params=EncodingParams(t_out, enc.range_lo, enc.range_hi, enc.step))


def predict_many(model: GeneratorModel, rgbs, t_outs, batch_size: int = 8) -> list:
    out = []
    rgbs = list(rgbs)
    t_outs = list(t_outs)
    for start in range(0, len(rgbs), batch_size):
        chunk = np.stack(rgbs[start:start + batch_size])
        raw = predict_raw(model, chunk)
        enc = model.encoding
        for j in range(len(chunk)):
            params = EncodingParams(t_outs[start + j], enc.range_lo, enc.range_hi, enc.step)
            out.append(EncodedThermal(codes=model_to_codes(raw[j, 0], enc.max_code), params=params))
    return out


# -- training --------------------------------------------------------------

def masked_l1(pred: torch.Tensor, target: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Per-sample mean |pred - target| over valid pixels, averaged over the batch."""
    valid = valid.to(pred.dtype)
    per_sample = (torch.abs(pred - target) * valid).flatten(1).sum(1) / valid.flatten(1).sum(1).clamp_min(1.0)
    return per_sample.mean()


def _batch_tensors(batch):
    rgb = rgb_to_model(batch.rgb)
    target = codes_to_model(batch.codes)[:, None]
    valid = torch.as_tensor(batch.valid)[:, None]
    return rgb, target, valid


@torch.no_grad()
def validation_scores(model: GeneratorModel, catalog: DatasetCatalog, split: str = "eval") -> dict:
    """Masked L1 in model units and mean absolute deviation in °C on ``split``."""
    model.generator.eval()
    l1s, mads = [], []
    step = model.encoding.step
    for batch in batches(catalog, split, batch_size=8, shuffle_seed=None):
        rgb, target, valid = _batch_tensors(batch)
        out = model.generator(rgb)
        for j in range(len(batch)):
            l1s.append(float(masked_l1(out[j:j + 1], target[j:j + 1], valid[j:j + 1])))
            codes = model_to_codes(out[j, 0])
            v = batch.valid[j]
            mads.append(float(np.mean(np.abs(codes[v].astype(np.int32) - batch.codes[j][v])) * step))
    return {"val_l1": float(np.mean(l1s)), "val_mad_c": float(np.mean(mads))}


@dataclass
class TrainResult:
    model: GeneratorModel
    history: list


def train(
    catalog: DatasetCatalog,
    cfg: TrainingConfig,
    init: Optional[GeneratorModel] = None,
    scale: float = 1.0,
    eval_catalog: Optional[DatasetCatalog] = None,
    checkpoint_dir: Optional[Path] = None,
    init_name: Optional[str] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Adversarial training of the colour-to-thermal generator.

    With ``init`` the run continues from a copy of that model (fine-tuning);
    otherwise weights start from a seeded random draw. Validation metrics
    come from the ``eval`` split of ``eval_catalog`` (default: ``catalog``)
    when it is non-empty.
    """
    train_ids = catalog.scene_ids("train")
    if not train_ids:
        raise EmptySplit("catalog has no training pairs")
    first = catalog.load(train_ids[0])
    resolution = first.thermal.shape[0]
    if first.thermal.shape[0] != first.thermal.shape[1]:
        raise ShapeMismatch(f"pairs must be square, got {first.thermal.shape}")

    if init is not None:
        if init.resolution != resolution:
            raise ShapeMismatch(f"init model is {init.resolution} px but the data is {resolution} px")
        model = init.copy()
        model.provenance = {
            "init_seed": init.provenance.get("init_seed"),
            "fine_tuned_from": init_name or init.provenance.get("condition", "unnamed"),
            "parent": init.provenance,
        }
        model.history = []
    else:
        model = GeneratorModel.create(resolution, scale, seed=cfg.seed)
    model.config = cfg
    model.provenance.update(condition=catalog.condition.name, t_out=catalog.condition.t_out,
                            epochs=cfg.epochs, seed=cfg.seed, train_pairs=len(train_ids),
                            threads=torch.get_num_threads())

    torch.manual_seed(cfg.seed)
    g, d = model.generator, model.discriminator
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr_generator, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.lr_discriminator, betas=(cfg.beta1, cfg.beta2))
    bce = nn.BCEWithLogitsLoss()
    eval_catalog = eval_catalog or catalog
    has_eval = bool(eval_catalog.scene_ids("eval"))

    bad_steps = 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        g.train()
        d.train()
        t0 = time.perf_counter()
        sums = {"loss_d": 0.0, "loss_g_gan": 0.0, "loss_g_l1": 0.0}
        n_samples = 0
        for batch in batches(catalog, "train", cfg.batch_size, cfg.seed, cfg.augment, epoch=epoch):
            rgb, target, valid = _batch_tensors(batch)
            _check_resolution(model, rgb.shape[-2:])
            fake = g(rgb)

            opt_d.zero_grad()
            pred_real = d(rgb, target)
            pred_fake = d(rgb, fake.detach())
            loss_d = 0.5 * (bce(pred_real, torch.ones_like(pred_real)) + bce(pred_fake, torch.zeros_like(pred_fake)))

            loss_l1 = masked_l1(fake, target, valid)

            if not (torch.isfinite(loss_d) and torch.isfinite(loss_l1)):
                bad_steps += 1
                logger.warning("non-finite loss at epoch %d (%d in a row)", epoch, bad_steps)
                if bad_steps >= NONFINITE_PATIENCE:
                    raise NonFiniteLoss(
                        f"loss non-finite for {bad_steps} consecutive steps at epoch {epoch} "
                        f"(d={float(loss_d)}, l1={float(loss_l1)}); lower the learning rate"
                    )
                continue
            bad_steps = 0
            loss_d.backward()
            opt_d.step()

            opt_g.zero_grad()
            pred_fake_g = d(rgb, fake)
            loss_gan = bce(pred_fake_g, torch.ones_like(pred_fake_g))
            loss_g = loss_gan + cfg.l1_weight * loss_l1
            loss_g.backward()
            opt_g.step()

            b = len(batch)
            n_samples += b
            sums["loss_d"] += loss_d.item() * b
            sums["loss_g_gan"] += loss_gan.item() * b
            sums["loss_g_l1"] += loss_l1.item() * b

        entry = {"epoch": epoch, **{k: v / max(n_samples, 1) for k, v in sums.items()}}
        if has_eval:
            entry.update(validation_scores(model, eval_catalog))
        entry["seconds"] = round(time.perf_counter() - t0, 3)
        history.append(entry)
        logger.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in entry.items() if k != "epoch"})
        if on_epoch is not None:
            on_epoch(entry)
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            model.history = list(history)
            model.save(Path(checkpoint_dir) / f"epoch_{epoch:04d}.pt")

    g.eval()
    d.eval()
    model.history = history
    return TrainResult(model=model, history=history)


# -- gradient check --------------------------------------------------------

def l1_gradient_check(scale: float = 0.1, resolution: int = 64, n_params: int = 20, seed: int = 0,
                      eps: float = 1e-6) -> list:
    """Compare autograd and central differences for the L1 term.

    Runs in float64 with batch-norm using batch statistics, as in training,
    and dropout switched off, so the loss is a deterministic function of the
    weights. Fixed running statistics would shrink the signal of a freshly
    initialized network until the gradients sink below finite-difference
    round-off. Returns ``[(name, index, analytic, numeric, rel_err)]``.
    """
    model = GeneratorModel.create(resolution, scale, seed=seed)
    g = model.generator.double().train()
    for m in g.modules():
        if isinstance(m, nn.Dropout):
            m.eval()
    rng = np.random.default_rng(seed)
    rgb = torch.as_tensor(rng.uniform(-1, 1, size=(1, 3, resolution, resolution)))
    target = torch.as_tensor(rng.integers(0, MAX_CODE + 1, size=(1, 1, resolution, resolution)) * (2.0 / MAX_CODE) - 1.0)
    valid = torch.ones_like(target, dtype=torch.bool)

    def loss():
        return masked_l1(g(rgb), target, valid)

    g.zero_grad()
    loss().backward()
    params = [(n, p) for n, p in g.named_parameters()]
    sizes = np.array([p.numel() for _, p in params])
    flat_choice = rng.choice(int(sizes.sum()), size=n_params, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    results = []
    with torch.no_grad():
        for k in sorted(flat_choice):
            pi = int(np.searchsorted(offsets, k, side="right") - 1)
            name, p = params[pi]
            idx = int(k - offsets[pi])
            flat = p.view(-1)
            analytic = float(p.grad.view(-1)[idx])
            orig = float(flat[idx])
            flat[idx] = orig + eps
            up = float(loss())
            flat[idx] = orig - eps
            down = float(loss())
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(analytic), abs(numeric), 1e-12)
            results.append((name, idx, analytic, numeric, abs(analytic - numeric) / denom))
    return results
