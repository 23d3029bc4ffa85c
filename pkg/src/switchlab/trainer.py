"""Two-phase training orchestration, evaluation, and the mask-strategy study.

Phase 1 (pretrain): the student trains on switched pairs built from labeled
data only, with the plain (dice + ce)/2 loss; the teacher does not exist yet.

Phase 2 (self-train): each step draws labeled and unlabeled sub-batches,
splits them in half, pseudo-labels the unlabeled halves with the teacher
(argmax + largest-component filtering), augments, mixes both directions
through one multiscale mask, builds the frequency-switched twin pair with
the same mask, and optimizes the region-weighted mixed loss plus contrastive
and consistency terms. The teacher follows the student by EMA.

Everything is a pure function of (config, seed): identical runs produce
bitwise-identical logs and checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fds, losses, mss, network
from .augment import AugmentPolicy, apply_augmentations, sample_augmentations
from .errors import ConfigError, DataError
from .fds import FdsConfig
from .grid import argmax_channels, softmax_channels
from .losses import LossWeights
from .metrics import MetricReport
from .mss import MssConfig
from .network import NetConfig, SegNetParams
from .pseudo import largest_connected_component
from .synthdata import DatasetSplit, SynthConfig


@dataclass(frozen=True)
class DataConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    labeled_ratio: float = 0.05
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    dir: str = "data"


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    lr0: float = 0.05
    momentum: float = 0.9
    pretrain_iters: int = 10000
    selftrain_iters: int = 30000
    labeled_batch: int = 8
    unlabeled_batch: int = 8
    ema_alpha: float = 0.99
    use_mss: bool = True          # off: the switch mask degenerates to all-true
    use_fds: bool = True          # off: no frequency branch, no contrastive/consistency
    eval_every: int = 1000
    eval_with: str = "teacher"    # which network the eval/selection step scores
    net: NetConfig = field(default_factory=NetConfig)
    mss: MssConfig = field(default_factory=MssConfig)
    fds: FdsConfig = field(default_factory=FdsConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        try:
            self.net.validate()
            self.mss.validate(self.net.height, self.net.width)
            self.fds.validate()
            self.loss.validate()
            self.augment.validate()
            self.data.synth.validate()
        except (ValueError, ConfigError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.pretrain_iters < 1 or self.selftrain_iters < 1:
            raise ConfigError("iteration counts must be at least 1")
        for name in ("labeled_batch", "unlabeled_batch"):
            size = getattr(self, name)
            if size < 2 or size % 2:
                raise ConfigError(f"{name} must be an even number >= 2 (it splits into halves)")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigError("ema_alpha must be in [0, 1]")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1")
        if self.eval_with not in ("teacher", "student"):
            raise ConfigError("eval_with must be 'teacher' or 'student'")
        if (self.net.height, self.net.width) != (self.data.synth.height, self.data.synth.width):
            raise ConfigError("network input size must match the dataset image size")


# ---------------------------------------------------------------------------
# config (de)serialization: one JSON document, paper defaults as defaults


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if name in _NESTED:
            kwargs[name] = _build(_NESTED[name], value, f"{path}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_NESTED = {
    "net": NetConfig,
    "mss": MssConfig,
    "fds": FdsConfig,
    "loss": LossWeights,
    "augment": AugmentPolicy,
    "data": DataConfig,
    "synth": SynthConfig,
}


def config_from_dict(data: dict) -> TrainConfig:
    cfg = _build(TrainConfig, data, "config")
    cfg.validate()
    return cfg


def load_config(path) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(path, cfg: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# training log


class TrainLog:
    """Ordered step/eval records, serializable as line-delimited JSON."""

    def __init__(self):
        self.records: list[dict] = []

    def add(self, **record) -> None:
        self.records.append(record)

    def lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True) for r in self.records]

    def write(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for line in self.lines():
                fh.write(line + "\n")


# ---------------------------------------------------------------------------
# batch construction


@dataclass
class StepBatch:
    """All arrays one self-training step consumes (built once per step)."""

    mix_ub: np.ndarray                 # unlabeled-base switched images (N, H, W)
    mix_lb: np.ndarray                 # labeled-base switched images
    base_ub: np.ndarray                # pseudo labels on the mask region of mix_ub
    patch_ub: np.ndarray               # ground truth on the complement of mix_ub
    base_lb: np.ndarray                # ground truth on the mask region of mix_lb
    patch_lb: np.ndarray               # pseudo labels on the complement of mix_lb
    mask: np.ndarray                   # shared switch mask (H, W)
    mix_ub_freq: Optional[np.ndarray]  # frequency-switched twins (None if FDS off)
    mix_lb_freq: Optional[np.ndarray]


def _draw(items, size: int, rng: np.random.Generator):
    if not items:
        raise DataError("cannot draw a batch from an empty item pool")
    idx = rng.choice(len(items), size=size, replace=len(items) < size)
    return [items[int(i)] for i in idx]


def _stack_images(items) -> np.ndarray:
    return np.stack([it.image for it in items]).astype(np.float64)


def _augment_batch(images, labels, policy: AugmentPolicy, rng) -> tuple[np.ndarray, np.ndarray]:
    if not (policy.use_weak or policy.use_strong) or policy.max_ops == 0:
        return images, labels
    out_i = np.empty_like(images)
    out_l = np.empty_like(labels)
    for k in range(images.shape[0]):
        ops = sample_augmentations(policy, rng)
        out_i[k], out_l[k] = apply_augmentations(images[k], labels[k], ops)
    return out_i, out_l


def _pseudo_label_batch(teacher: SegNetParams, images: np.ndarray) -> np.ndarray:
    logits = network.forward(teacher, images).logits
    raw = argmax_channels(softmax_channels(logits))
    return np.stack([largest_connected_component(m) for m in raw])


def _switch_mask(cfg: TrainConfig, rng) -> np.ndarray:
    if not cfg.use_mss:
        return np.ones((cfg.net.height, cfg.net.width), dtype=bool)
    return mss.generate_multiscale_mask(cfg.net.height, cfg.net.width, cfg.mss, rng)


def build_selftrain_batch(
    cfg: TrainConfig, data: DatasetSplit, teacher: SegNetParams, rng: np.random.Generator
) -> StepBatch:
    """Draw, pseudo-label, augment, switch, and frequency-switch one step's data."""
    if not data.unlabeled:
        raise DataError("self-training requires unlabeled items")
    labeled = _draw(data.labeled, cfg.labeled_batch, rng)
    unlabeled = _draw(data.unlabeled, cfg.unlabeled_batch, rng)
    half_l = cfg.labeled_batch // 2
    half_u = cfg.unlabeled_batch // 2

    x1 = _stack_images(labeled[:half_l])
    x2 = _stack_images(labeled[half_l:])
    y1 = np.stack([it.mask for it in labeled[:half_l]]).astype(np.uint8)
    y2 = np.stack([it.mask for it in labeled[half_l:]]).astype(np.uint8)
    u1 = _stack_images(unlabeled[:half_u])
    u2 = _stack_images(unlabeled[half_u:])

    # teacher sees the raw unlabeled images; geometry applied afterwards to
    # image and pseudo label together keeps them aligned
    pseudo = _pseudo_label_batch(teacher, np.concatenate([u1, u2]))
    yu1, yu2 = pseudo[:half_u], pseudo[half_u:]

    x1, y1 = _augment_batch(x1, y1, cfg.augment, rng)
    x2, y2 = _augment_batch(x2, y2, cfg.augment, rng)
    u1, yu1 = _augment_batch(u1, yu1, cfg.augment, rng)
    u2, yu2 = _augment_batch(u2, yu2, cfg.augment, rng)

    m = _switch_mask(cfg, rng)
    mix_ub = np.where(m, u1, x1)
    mix_lb = np.where(m, x2, u2)

    mix_ub_freq = mix_lb_freq = None
    if cfg.use_fds:
        x1f, u1f = fds.fds_batch(x1, u1, cfg.fds)
        x2f, u2f = fds.fds_batch(x2, u2, cfg.fds)
        mix_ub_freq = np.where(m, u1f, x1f)
        mix_lb_freq = np.where(m, x2f, u2f)

    return StepBatch(
        mix_ub=mix_ub,
        mix_lb=mix_lb,
        base_ub=yu1,
        patch_ub=y1,
        base_lb=y2,
        patch_lb=yu2,
        mask=m,
        mix_ub_freq=mix_ub_freq,
        mix_lb_freq=mix_lb_freq,
    )


# ---------------------------------------------------------------------------
# loss + gradient assembly


ALL_TERMS = ("mss", "contrastive", "consistency")


def selftrain_loss_and_grad(
    student: SegNetParams,
    batch: StepBatch,
    cfg: TrainConfig,
    terms: tuple[str, ...] = ALL_TERMS,
    frozen_keys: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[dict, SegNetParams]:
    """Loss components and the full parameter gradient for one step.

    The contrastive keys (projections of the frequency-switched pair) are
    constants: they are either recomputed fresh from the current student or
    supplied via ``frozen_keys``, and never backpropagated. The consistency
    term does flow through the frequency branch's logits.

    Both mixing directions ride through one fused forward/backward; the loss
    arithmetic stays per-direction.
    """
    w = cfg.loss
    grads = SegNetParams(student.cfg)
    comp = {"mss": 0.0, "contrastive": 0.0, "consistency": 0.0}
    n = batch.mix_ub.shape[0]

    cache_main: dict = {}
    out_main = network.forward(
        student, np.concatenate([batch.mix_ub, batch.mix_lb]), cache_main
    )
    logits_ub, logits_lb = out_main.logits[:n], out_main.logits[n:]
    dlog_main = np.zeros_like(out_main.logits)
    dfeat_main = None

    if "mss" in terms:
        d_ub, c_ub, g_ub = losses.mixed_region_terms_grad(
            logits_ub, batch.base_ub, batch.patch_ub, batch.mask, w
        )
        d_lb, c_lb, g_lb = losses.mixed_region_terms_grad(
            logits_lb, batch.base_lb, batch.patch_lb, batch.mask, w
        )
        comp["mss"] = losses.mss_loss(d_ub, c_ub, d_lb, c_lb)
        dlog_main[:n] += 0.25 * g_ub
        dlog_main[n:] += 0.25 * g_lb

    has_freq = batch.mix_ub_freq is not None
    want_consist = "consistency" in terms and has_freq and w.lambda_consistency > 0
    want_cont = "contrastive" in terms and has_freq and w.lambda_contrastive > 0

    cache_freq: Optional[dict] = {} if want_consist else None
    out_freq = None
    if want_consist or (want_cont and frozen_keys is None):
        out_freq = network.forward(
            student, np.concatenate([batch.mix_ub_freq, batch.mix_lb_freq]), cache_freq
        )

    dlog_freq = None
    if want_consist:
        v1, da1, db1 = losses.consistency_mse_grad(logits_ub, out_freq.logits[:n])
        v2, da2, db2 = losses.consistency_mse_grad(logits_lb, out_freq.logits[n:])
        comp["consistency"] = 0.5 * (v1 + v2)
        scale = w.lambda_consistency * 0.5
        dlog_main[:n] += scale * da1
        dlog_main[n:] += scale * da2
        dlog_freq = np.concatenate([scale * db1, scale * db2])

    if want_cont:
        def proj_input(out: network.ForwardOutput) -> np.ndarray:
            return out.logits if cfg.net.project_logits else out.features

        pcache: dict = {}
        h_raw = network.project(student, proj_input(out_main), pcache)
        if frozen_keys is not None:
            keys = np.concatenate(frozen_keys)
        else:
            keys = network.project(student, proj_input(out_freq))
        if w.normalize_embeddings:
            h, h_norms = losses.l2_normalize_positions(h_raw)
            keys, _ = losses.l2_normalize_positions(keys)
        else:
            h = h_raw
        k_ub, k_lb = keys[:n], keys[n:]
        v1, dh1 = losses.infonce_grad(h[:n], k_ub, w.temperature, w.include_positive_in_denominator)
        v2, dh2 = losses.infonce_grad(h[n:], k_lb, w.temperature, w.include_positive_in_denominator)
        comp["contrastive"] = 0.5 * (v1 + v2)
        scale = w.lambda_contrastive * 0.5
        dh = np.concatenate([scale * dh1, scale * dh2])
        if w.normalize_embeddings:
            dh = losses.l2_normalize_backward(h, h_norms, dh)
        dproj = network.project_backward(student, pcache, dh, grads)
        if cfg.net.project_logits:
            dlog_main += dproj
        else:
            dfeat_main = dproj

    network.backward(student, cache_main, dlog_main, dfeat_main, grads)
    if want_consist:
        network.backward(student, cache_freq, dlog_freq, None, grads)

    comp["total"] = losses.total_loss(comp["mss"], comp["contrastive"], comp["consistency"], w)
    return comp, grads


def build_pretrain_batch(
    cfg: TrainConfig, data: DatasetSplit, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Labeled-only switched pairs: both mixing directions with composed labels."""
    if not data.labeled:
        raise DataError("pretraining requires labeled items")
    labeled = _draw(data.labeled, cfg.labeled_batch, rng)
    half = cfg.labeled_batch // 2
    a = _stack_images(labeled[:half])
    b = _stack_images(labeled[half:])
    ya = np.stack([it.mask for it in labeled[:half]]).astype(np.uint8)
    yb = np.stack([it.mask for it in labeled[half:]]).astype(np.uint8)
    a, ya = _augment_batch(a, ya, cfg.augment, rng)
    b, yb = _augment_batch(b, yb, cfg.augment, rng)
    m = _switch_mask(cfg, rng)
    images = np.concatenate([np.where(m, a, b), np.where(m, b, a)])
    labels = np.concatenate([np.where(m, ya, yb), np.where(m, yb, ya)])
    return images, labels


def pretrain_loss_and_grad(
    student: SegNetParams, images: np.ndarray, labels: np.ndarray
) -> tuple[float, SegNetParams]:
    cache: dict = {}
    out = network.forward(student, images, cache)
    loss, dlogits = losses.pretrain_loss_grad(out.logits, labels)
    grads = network.backward(student, cache, dlogits)
    return loss, grads


# ---------------------------------------------------------------------------
# phases


@dataclass
class PhaseResult:
    student: SegNetParams
    teacher: Optional[SegNetParams]
    velocity: np.ndarray
    log: TrainLog
    best: Optional[SegNetParams]       # best-validation copy of the eval target
    best_val_dice: Optional[float]


def _maybe_eval(cfg, data, params, log, phase, step, best, best_dice, name):
    if not data.val:
        return best, best_dice
    report = evaluate(params, data.val, batch_size=max(cfg.labeled_batch, 2))
    agg = report.aggregate()
    log.add(phase=phase, step=step, event="eval", split="val", model=name, **agg)
    if best_dice is None or agg["dice_mean"] > best_dice:
        return params.copy(), agg["dice_mean"]
    return best, best_dice


def pretrain(cfg: TrainConfig, data: DatasetSplit) -> PhaseResult:
    """Supervised phase on switched labeled pairs; the teacher stays untouched."""
    cfg.validate()
    rng_init = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(10,)))
    student = network.init_params(cfg.net, rng_init)
    velocity = np.zeros_like(student.vector)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(11,)))
    log = TrainLog()
    best, best_dice = None, None
    for step in range(cfg.pretrain_iters):
        lr = network.cosine_lr(step, cfg.pretrain_iters, cfg.lr0)
        images, labels = build_pretrain_batch(cfg, data, rng)
        loss, grads = pretrain_loss_and_grad(student, images, labels)
        network.sgd_step(student, grads, lr, cfg.momentum, velocity)
        log.add(phase="pretrain", step=step, lr=lr, loss=loss)
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.pretrain_iters:
            best, best_dice = _maybe_eval(
                cfg, data, student, log, "pretrain", step, best, best_dice, "student"
            )
    return PhaseResult(student, None, velocity, log, best, best_dice)


def self_train(cfg: TrainConfig, data: DatasetSplit, init: SegNetParams) -> PhaseResult:
    """Semi-supervised phase; the teacher starts as a copy of the student."""
    cfg.validate()
    student = init.copy()
    teacher = init.copy()
    velocity = np.zeros_like(student.vector)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(12,)))
    log = TrainLog()
    best, best_dice = None, None
    for step in range(cfg.selftrain_iters):
        lr = network.cosine_lr(step, cfg.selftrain_iters, cfg.lr0)
        batch = build_selftrain_batch(cfg, data, teacher, rng)
        comp, grads = selftrain_loss_and_grad(student, batch, cfg)
        network.sgd_step(student, grads, lr, cfg.momentum, velocity)
        network.ema_update(teacher, student, cfg.ema_alpha)
        log.add(
            phase="selftrain",
            step=step,
            lr=lr,
            mss=comp["mss"],
            cont=comp["contrastive"],
            consist=comp["consistency"],
            total=comp["total"],
        )
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.selftrain_iters:
            target = teacher if cfg.eval_with == "teacher" else student
            best, best_dice = _maybe_eval(
                cfg, data, target, log, "selftrain", step, best, best_dice, cfg.eval_with
            )
    return PhaseResult(student, teacher, velocity, log, best, best_dice)


def evaluate(params: SegNetParams, items, batch_size: int = 8, use_lcc: bool = False) -> MetricReport:
    """Score a network on items with ground truth; no post-processing by default."""
    report = MetricReport()
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        images = _stack_images(chunk)
        logits = network.forward(params, images).logits
        preds = argmax_channels(softmax_channels(logits))
        for item, pred in zip(chunk, preds):
            if item.mask is None:
                raise DataError(f"item {item.id} has no ground truth to evaluate against")
            if use_lcc:
                pred = largest_connected_component(pred)
            report.add(item.id, pred, item.mask)
    return report


# ---------------------------------------------------------------------------
# mask-strategy study


def strategy_analysis(n_iter: int = 10000, height: int = 256, width: int = 256, seed: int = 0) -> dict:
    """Monte Carlo comparison of switch-mask strategies.

    Patch sizes scale with the raster (h/2 coarse, h/8 fine), matching the
    standard 128/32 at 256x256. Reductions are relative to the single-square
    2/3 baseline; n_iter of a few thousand or more gives stable statistics.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    coarse = max(1, height // 2)
    fine = max(1, height // 8)
    strategies = {
        "mss_p2_q2": lambda rng, c=MssConfig(2, 2, coarse, fine): mss.generate_multiscale_mask(
            height, width, c, rng
        ),
        "mss_p2_q10": lambda rng, c=MssConfig(2, 10, coarse, fine): mss.generate_multiscale_mask(
            height, width, c, rng
        ),
        "bcp_2_3": lambda rng: mss.generate_bcp_mask(height, width, 2.0 / 3.0, rng),
    }
    report: dict = {"n_iter": n_iter, "height": height, "width": width, "seed": seed, "strategies": {}}
    maps = {}
    for i, (name, sampler) in enumerate(strategies.items()):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(20, i)))
        pmap = mss.switch_probability_map(sampler, n_iter, rng)
        maps[name] = pmap
        report["strategies"][name] = {
            "strategy": name,
            "n_iter": n_iter,
            "mean": float(pmap.mean()),
            "std": float(pmap.std()),
            "gradient_variance": mss.mask_gradient_variance(pmap),
        }
    base = report["strategies"]["bcp_2_3"]
    report["reductions_vs_bcp"] = {}
    for name in ("mss_p2_q2", "mss_p2_q10"):
        s = report["strategies"][name]
        report["reductions_vs_bcp"][name] = {
            "std_reduction_pct": 100.0 * (base["std"] - s["std"]) / base["std"],
            "gradient_variance_reduction_pct": 100.0
            * (base["gradient_variance"] - s["gradient_variance"])
            / base["gradient_variance"],
        }
    report["probability_maps"] = maps
    return report
