"""Adam, the alpha-mixed training loop (img2prog and refiner modes) and inference."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dataset import PSEUDO_REAL, SYNTHETIC, SamplePair
from ..instructions import InstructionMap
from ..render import render
from .losses import ALL_SHIFTS, NO_SHIFT, mil_cross_entropy
from .nets import (DESK_WIDTHS, INPUT_SIZE, NUM_RES_BLOCKS, Img2prog, Model, PatchDiscriminator, Refiner,
                   normalize_image)
from .tensor import Tensor, concat, dot_const, l1_loss, log_softmax, mse_to, softmax_np, weighted_sum

IMG2PROG = "img2prog"
REFINER = "refiner"


class EmptyCorpus(ValueError):
    pass


class DivergedLoss(RuntimeError):
    def __init__(self, iteration: int, trace: list[dict]):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


class BadInputSize(ValueError):
    pass


@dataclass
class TrainingConfig:
    alpha: float = 0.5
    mode: str = IMG2PROG
    iterations: int = 1000
    seed: int = 0
    lr: float = 5e-4
    decay_rate: float = 0.3
    betas: tuple[float, float] = (0.9, 0.999)
    batch_per_domain: int = 2
    lambda_ce: float = 3.0
    lambda_content: float = 1.0
    lambda_gan: float = 0.2
    widths: tuple[int, int, int] = DESK_WIDTHS
    n_res: int = NUM_RES_BLOCKS
    skips: bool = False
    refiner_width: int = 8
    refiner_res: int = 2
    disc_width: int = 8
    gan: bool = True
    synthetic_shifts: tuple = NO_SHIFT
    real_shifts: tuple = ALL_SHIFTS

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lr <= 0 or self.iterations < 1:
            raise ValueError("need a positive learning rate and at least one iteration")
        if self.mode not in (IMG2PROG, REFINER):
            raise ValueError(f"unknown mode {self.mode!r}")

    def lr_at(self, it: int) -> float:
        """Exponential decay by ``decay_rate`` every third of the run."""
        return self.lr * self.decay_rate ** (it / (self.iterations / 3))


class Adam:
    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class _Domain:
    images: np.ndarray  # (N, 1, 160, 160) normalized
    codes: np.ndarray  # (N, 20, 20)
    clean: np.ndarray | None = None  # clean renders for refiner content loss

    @classmethod
    def build(cls, samples: Sequence[SamplePair], with_clean: bool = False) -> "_Domain | None":
        if not samples:
            return None
        images = np.stack([normalize_image(s.image) for s in samples])[:, None]
        codes = np.stack([s.map.codes for s in samples]).astype(np.int64)
        clean = np.stack([normalize_image(render(s.map)) for s in samples])[:, None] if with_clean else None
        return cls(images, codes, clean)


@dataclass
class TrainResult:
    model: Model
    trace: list[dict] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.trace[-1]["loss"]


def _batch_sizes(cfg: TrainingConfig, has_syn: bool, has_real: bool) -> tuple[int, int]:
    b = cfg.batch_per_domain
    if cfg.mode == REFINER:
        return (b if has_syn else 0), b
    # a domain with zero weight contributes no gradient, so it is not sampled at all
    return (b if has_syn and cfg.alpha > 0 else 0), (b if has_real and cfg.alpha < 1 else 0)


def train(cfg: TrainingConfig, samples: Sequence[SamplePair], log_every: int = 0) -> TrainResult:
    syn_samples = [s for s in samples if s.domain == SYNTHETIC]
    real_samples = [s for s in samples if s.domain == PSEUDO_REAL]
    if cfg.alpha > 0 and not syn_samples and cfg.mode == IMG2PROG:
        raise EmptyCorpus("alpha > 0 needs synthetic samples")
    if (cfg.alpha < 1 or cfg.mode == REFINER) and not real_samples:
        raise EmptyCorpus("alpha < 1 and refiner mode need pseudo-real samples")
    syn = _Domain.build(syn_samples)
    real = _Domain.build(real_samples, with_clean=cfg.mode == REFINER)
    n_syn, n_real = _batch_sizes(cfg, syn is not None, real is not None)

    net = Img2prog(cfg.widths, cfg.n_res, cfg.skips, seed=cfg.seed)
    params = net.parameters()
    refiner = disc = disc_opt = None
    if cfg.mode == REFINER:
        refiner = Refiner(cfg.refiner_width, cfg.refiner_res, seed=cfg.seed + 1)
        params += refiner.parameters()
        if cfg.gan and syn is not None:
            disc = PatchDiscriminator(cfg.disc_width, seed=cfg.seed + 2)
            disc_opt = Adam(disc.parameters(), cfg.betas)
    opt = Adam(params, cfg.betas)

    trace: list[dict] = []
    for it in range(cfg.iterations):
        rng = np.random.default_rng([cfg.seed, it])
        si = rng.integers(0, len(syn.codes), n_syn) if n_syn else np.zeros(0, int)
        ri = rng.integers(0, len(real.codes), n_real) if n_real else np.zeros(0, int)
        lr = cfg.lr_at(it)
        record = {"it": it, "lr": lr}

        inputs, codes, shifts, weights = [], [], [], []
        if n_syn:
            inputs.append(Tensor(syn.images[si]))
            codes.append(syn.codes[si])
            shifts += [cfg.synthetic_shifts] * n_syn
            weights += [cfg.alpha / n_syn] * n_syn
        refined = None
        if n_real:
            x_real = Tensor(real.images[ri])
            refined = refiner(x_real) if refiner is not None else x_real
            inputs.append(refined)
            codes.append(real.codes[ri])
            shifts += [cfg.real_shifts] * n_real
            weights += [(1 - cfg.alpha) / n_real] * n_real
        weights = np.array(weights)
        if cfg.mode == REFINER and n_syn and cfg.alpha == 0:
            weights[:n_syn] = 0.0  # synthetic images only feed the discriminator

        x = inputs[0] if len(inputs) == 1 else concat(inputs, axis=0)
        per_image = mil_cross_entropy(log_softmax(net(x)), np.concatenate(codes), image_shifts=shifts)
        ce = dot_const(per_image, weights)
        terms = [(cfg.lambda_ce, ce)]
        record["ce"] = float(ce.data)
        if refiner is not None:
            content = l1_loss(refined, real.clean[ri])
            terms.append((cfg.lambda_content, content))
            record["content"] = float(content.data)
            if disc is not None:
                adv = mse_to(disc(refined), 1.0)
                terms.append((cfg.lambda_gan, adv))
                record["gan"] = float(adv.data)
        loss = weighted_sum(terms) if len(terms) > 1 else cfg.lambda_ce * ce
        record["loss"] = float(loss.data)
        trace.append(record)
        if not math.isfinite(record["loss"]):
            raise DivergedLoss(it, trace)
        opt.zero_grad()
        loss.backward()
        opt.step(lr)

        if disc is not None and it % 2 == 0:
            disc_opt.zero_grad()
            d_loss = weighted_sum([(1.0, mse_to(disc(Tensor(syn.images[si])), 1.0)),
                                   (1.0, mse_to(disc(Tensor(refined.data)), -1.0))])
            d_loss.backward()
            disc_opt.step(lr)
            record["disc"] = float(d_loss.data)
        if log_every and it % log_every == 0:
            print(" ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items()))
    return TrainResult(Model(net, refiner), trace)


# ---------------------------------------------------------------------------
# inference

def _check_input(image: np.ndarray) -> None:
    if image.shape != (INPUT_SIZE, INPUT_SIZE):
        raise BadInputSize(f"expected a {INPUT_SIZE}x{INPUT_SIZE} image, got {image.shape}")


def infer_batch(model: Model, images: Sequence[np.ndarray], use_refiner: bool = True,
                batch: int = 16) -> np.ndarray:
    """SoftmaxMaps (N, 20, 20, 17) for a list of 160x160 images."""
    dtype = model.img2prog.dtype
    out = []
    for start in range(0, len(images), batch):
        chunk = images[start:start + batch]
        for img in chunk:
            _check_input(img)
        x = Tensor(np.stack([normalize_image(img, dtype) for img in chunk])[:, None])
        if use_refiner and model.refiner is not None:
            x = Tensor(model.refiner(x).data)
        out.append(softmax_np(model.img2prog(x).data, axis=1).transpose(0, 2, 3, 1))
    return np.concatenate(out)


def infer(model: Model, image: np.ndarray, use_refiner: bool = True) -> np.ndarray:
    """SoftmaxMap (20, 20, 17) for one 160x160 image."""
    _check_input(image)
    return infer_batch(model, [image], use_refiner)[0]


def decode(softmax_map: np.ndarray) -> InstructionMap:
    """Argmax per cell; ties go to the lowest instruction index."""
    return InstructionMap(softmax_map.argmax(axis=-1))
