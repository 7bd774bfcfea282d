"""Teacher-student self-supervised training on individual sub-bands."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .encoder import EchoConfig, band_inputs, forward, init_params, prepare_signal
from .errors import ConfigError, NumericError, UsageError
from .nn import tensor as T
from .nn.params import ParamStore

STREAMS = {"init": 0, "data": 1, "mask": 2}


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent named sub-stream of a single run seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],)))


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 400_000
    batch_size: int = 256
    base_lr: float = 1e-4
    warmup_steps: int = 40_000
    min_lr: float = 1e-5
    weight_decay: float = 0.05
    clip_norm_initial: float = 1.0
    clip_norm_after: float = 0.3
    clip_switch_step: int = 60_000
    ema_alpha: float = 0.999
    ema_ramp: bool = False
    ema_alpha_start: float = 0.99
    mask_ratio: float = 0.8
    loss_weight: float = 1.0
    target_norm: str = "none"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigError(f"ema_alpha must lie in [0, 1], got {self.ema_alpha}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be >= 1")
        if self.target_norm not in ("none", "layer"):
            raise ConfigError(f"target_norm must be 'none' or 'layer', got {self.target_norm!r}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"warmup_steps {self.warmup_steps} must lie in [0, total_steps={self.total_steps}]")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        base = dict(total_steps=2000, batch_size=32, warmup_steps=200, clip_switch_step=300)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown train config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# schedule, clipping, masking, EMA
# --------------------------------------------------------------------------


def scaled_base_lr(cfg: TrainConfig) -> float:
    return cfg.base_lr * cfg.batch_size / 256.0


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up to the batch-scaled base rate, cosine decay to min_lr."""
    if not 0 <= step <= cfg.total_steps:
        raise UsageError(f"step {step} outside [0, {cfg.total_steps}]")
    peak = scaled_base_lr(cfg)
    if step < cfg.warmup_steps:
        return peak * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    if span == 0:
        return peak
    frac = (step - cfg.warmup_steps) / span
    return cfg.min_lr + (peak - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * frac))


def clip_threshold(step: int, cfg: TrainConfig) -> float:
    return cfg.clip_norm_initial if step < cfg.clip_switch_step else cfg.clip_norm_after


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for _, g in sorted(grads.items())))


def clip_gradients(grads: dict, step: int, cfg: TrainConfig):
    """Rescale so the global L2 norm does not exceed the staged threshold.

    Returns ``(clipped, pre_clip_norm)``.
    """
    norm = global_norm(grads)
    limit = clip_threshold(step, cfg)
    if norm <= limit or norm == 0.0:
        return dict(grads), norm
    scale = limit / norm
    return {n: g * scale for n, g in grads.items()}, norm


def num_masked(P: int, ratio: float) -> int:
    # half-up rounding
    return int(math.floor(ratio * P + 0.5))


def make_mask(P: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"mask ratio {ratio} outside [0, 1]")
    m = np.zeros(P, dtype=bool)
    k = num_masked(P, ratio)
    if k:
        m[rng.choice(P, size=k, replace=False)] = True
    return m


def ema_alpha_at(step: int, cfg: TrainConfig) -> float:
    if not cfg.ema_ramp or cfg.warmup_steps == 0 or step >= cfg.warmup_steps:
        return cfg.ema_alpha
    return cfg.ema_alpha_start + (cfg.ema_alpha - cfg.ema_alpha_start) * step / cfg.warmup_steps


def ema_update(teacher: ParamStore, student: ParamStore, alpha: float) -> ParamStore:
    """In place: teacher <- alpha * teacher + (1 - alpha) * student."""
    teacher.check_same_schema(student)
    for name, t in teacher.items():
        s = student[name].data
        if alpha == 1.0:
            continue
        if alpha == 0.0:
            t.data = s.copy()
        else:
            t.data = alpha * t.data + (1.0 - alpha) * s
    return teacher


# --------------------------------------------------------------------------
# targets and losses
# --------------------------------------------------------------------------


def _standardize(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(x.var(axis=-1, keepdims=True) + eps)


def average_layer_output(layers, target_norm: str = "none"):
    """Mean of the captured per-block token outputs (CLS positions already dropped).

    ``target_norm="layer"`` standardizes each block output over features
    before averaging.
    """
    if target_norm == "layer":
        return sum(_standardize(l.data) for l in layers) / len(layers)
    return sum(l.data for l in layers) / len(layers)


def teacher_targets_batch(teacher: ParamStore, cfg: EchoConfig, patches, freq_pe, target_norm="none"):
    _, _, layers = forward(teacher, cfg, patches, freq_pe, mask=None, capture=True)
    frame = average_layer_output(layers, target_norm)
    return frame.mean(axis=1), frame


def teacher_targets(band, teacher: ParamStore, cfg: EchoConfig, target_norm: str = "none") -> dict:
    x = band_inputs(band, cfg)
    g, f = teacher_targets_batch(teacher, cfg, x[None], band.freq_pe[None], target_norm)
    return {"global_target": g[0], "frame_targets": f[0]}


def alignment_losses(cls, tokens, global_target, frame_targets, mask, weight=1.0):
    """Batched global/frame MSE as Tensors, each averaged over the batch.

    cls (B, d), tokens (B, P, d); mask (B, P) bool. A sample with no masked
    positions contributes zero frame loss.
    """
    B, P, d = tokens.shape
    g = T.mean(T.square(T.sub(cls, global_target)))
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=1)
    if counts.sum() == 0:
        f = T.Tensor(0.0)
    else:
        w = np.where(mask, 1.0 / np.maximum(counts, 1)[:, None], 0.0) / (B * d)
        f = T.total(T.mul(T.square(T.sub(tokens, frame_targets)), w[:, :, None]))
    return g, f, T.add(g, T.mul(f, weight))


def compute_loss(student_cls, student_tokens, targets: dict, mask, weight: float = 1.0) -> dict:
    """Single-sample loss values: global MSE, masked-frame MSE and their weighted sum."""
    cls = np.asarray(student_cls, dtype=np.float64)[None]
    tok = np.asarray(student_tokens, dtype=np.float64)[None]
    g, f, t = alignment_losses(
        T.Tensor(cls),
        T.Tensor(tok),
        np.asarray(targets["global_target"])[None],
        np.asarray(targets["frame_targets"])[None],
        np.asarray(mask, dtype=bool)[None],
        weight,
    )
    return {"global_loss": g.item(), "frame_loss": f.item(), "total": t.item()}


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


def decays(name: str) -> bool:
    if name in ("cls_token", "mask_token"):
        return False
    return not (name.startswith("norm.") or ".ln1." in name or ".ln2." in name)


@dataclass
class AdamWState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "AdamWState":
        return cls({n: np.zeros(p.shape) for n, p in params.items()}, {n: np.zeros(p.shape) for n, p in params.items()})


def adamw_step(params: ParamStore, grads: dict, state: AdamWState, lr: float, cfg: TrainConfig):
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        data = p.data
        if cfg.weight_decay and decays(name):
            data = data * (1.0 - lr * cfg.weight_decay)
        p.data = data - lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


# --------------------------------------------------------------------------
# data and state
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BandSample:
    patches: np.ndarray  # (P, W*L)
    freq_pe: np.ndarray  # (d,)
    source: str = ""
    band_index: int = 0

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]


def band_samples(waveform, cfg: EchoConfig, source: str = "") -> list:
    bands = prepare_signal(waveform, cfg)
    return [BandSample(band_inputs(b, cfg), b.freq_pe, source, b.band_index) for b in bands]


@dataclass
class TrainState:
    student: ParamStore
    teacher: ParamStore
    opt: AdamWState
    step: int
    data_rng: np.random.Generator
    mask_rng: np.random.Generator
    history: list = field(default_factory=list)

    @classmethod
    def initialize(cls, echo_cfg: EchoConfig, train_cfg: TrainConfig) -> "TrainState":
        student = init_params(echo_cfg, stream_rng(train_cfg.seed, "init"))
        return cls(
            student=student,
            teacher=student.copy(requires_grad=False),
            opt=AdamWState.zeros_like(student),
            step=0,
            data_rng=stream_rng(train_cfg.seed, "data"),
            mask_rng=stream_rng(train_cfg.seed, "mask"),
        )


def train_step(batch, state: TrainState, echo_cfg: EchoConfig, cfg: TrainConfig) -> dict:
    """One optimizer update (``state.step`` advances by one).

    Masks are drawn per sample in batch order; samples with equal patch
    counts are encoded together.
    """
    if not batch:
        raise UsageError("empty training batch")
    step = state.step + 1
    masks = [make_mask(s.num_patches, cfg.mask_ratio, state.mask_rng) for s in batch]
    groups = {}
    for i, s in enumerate(batch):
        groups.setdefault(s.num_patches, []).append(i)
    student = state.student
    student.zero_grad()
    n = len(batch)
    g_sum = f_sum = None
    for P in sorted(groups):
        idx = groups[P]
        x = np.stack([batch[i].patches for i in idx])
        pe = np.stack([batch[i].freq_pe for i in idx])
        mk = np.stack([masks[i] for i in idx])
        gt, ft = teacher_targets_batch(state.teacher, echo_cfg, x, pe, cfg.target_norm)
        cls, tokens, _ = forward(student, echo_cfg, x, pe, mask=mk)
        g, f, _ = alignment_losses(cls, tokens, gt, ft, mk)
        share = len(idx) / n
        g, f = T.mul(g, share), T.mul(f, share)
        g_sum = g if g_sum is None else T.add(g_sum, g)
        f_sum = f if f_sum is None else T.add(f_sum, f)
    loss = T.add(g_sum, T.mul(f_sum, cfg.loss_weight))
    lr = lr_at(step, cfg)
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite loss at step {step}", {"step": step, "lr": lr, "grad_norm": float("nan")})
    grads = T.backward(loss, student)
    grads, norm = clip_gradients(grads, step, cfg)
    if not math.isfinite(norm):
        raise NumericError(f"non-finite gradient norm at step {step}", {"step": step, "lr": lr, "grad_norm": norm})
    adamw_step(student, grads, state.opt, lr, cfg)
    student.zero_grad()
    ema_update(state.teacher, student, ema_alpha_at(step, cfg))
    state.step = step
    return {
        "step": step,
        "total": loss.item(),
        "global": g_sum.item(),
        "frame": f_sum.item(),
        "lr": lr,
        "grad_norm": norm,
    }


def sample_batch(samples, batch_size: int, rng: np.random.Generator) -> list:
    n = len(samples)
    idx = rng.choice(n, size=batch_size, replace=n < batch_size)
    return [samples[i] for i in idx]


# --------------------------------------------------------------------------
# checkpoint glue
# --------------------------------------------------------------------------


def state_tensors(state: TrainState) -> dict:
    out = {}
    for name, t in state.student.items():
        out[f"student/{name}"] = t.data
        out[f"teacher/{name}"] = state.teacher[name].data
        out[f"opt.m/{name}"] = state.opt.m[name]
        out[f"opt.v/{name}"] = state.opt.v[name]
    return out


def state_meta(state: TrainState, echo_cfg: EchoConfig, cfg: TrainConfig) -> dict:
    return {
        "model": echo_cfg.to_dict(),
        "train": cfg.to_dict(),
        "step": state.step,
        "opt_t": state.opt.t,
        "rng": {"data": state.data_rng.bit_generator.state, "mask": state.mask_rng.bit_generator.state},
    }


def _restore_rng(s: dict) -> np.random.Generator:
    bg = getattr(np.random, s["bit_generator"])()
    bg.state = s
    return np.random.Generator(bg)


def state_from_checkpoint(tensors: dict, meta: dict) -> TrainState:
    def group(prefix):
        return {n[len(prefix):]: a for n, a in tensors.items() if n.startswith(prefix)}

    student = ParamStore(group("student/"))
    teacher = ParamStore(group("teacher/"), requires_grad=False)
    opt = AdamWState(group("opt.m/"), group("opt.v/"), int(meta["opt_t"]))
    return TrainState(
        student=student,
        teacher=teacher,
        opt=opt,
        step=int(meta["step"]),
        data_rng=_restore_rng(meta["rng"]["data"]),
        mask_rng=_restore_rng(meta["rng"]["mask"]),
    )


def save_train_state(path, state, echo_cfg, cfg, extra_meta=None):
    from .checkpoint import save_checkpoint

    meta = state_meta(state, echo_cfg, cfg)
    meta.update(extra_meta or {})
    return save_checkpoint(path, state_tensors(state), meta)


def load_train_state(path):
    from .checkpoint import load_checkpoint

    tensors, meta = load_checkpoint(path)
    if "train" not in meta:
        raise UsageError(f"{path} is not a training checkpoint (no optimizer/rng state)")
    return state_from_checkpoint(tensors, meta), EchoConfig.from_dict(meta["model"]), TrainConfig.from_dict(meta["train"])


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------


def train(samples, echo_cfg: EchoConfig, cfg: TrainConfig, state: TrainState | None = None,
          metrics_path=None, ckpt_dir=None, on_step=None, extra_meta=None) -> TrainState:
    """Run updates until ``cfg.total_steps``; resumes from ``state`` if given."""
    if not samples:
        raise UsageError("no training samples")
    state = state or TrainState.initialize(echo_cfg, cfg)
    fh = open(metrics_path, "a") if metrics_path else None
    try:
        while state.step < cfg.total_steps:
            batch = sample_batch(samples, cfg.batch_size, state.data_rng)
            metrics = train_step(batch, state, echo_cfg, cfg)
            state.history.append(metrics)
            if fh:
                fh.write(json.dumps(metrics, sort_keys=True) + "\n")
                fh.flush()
            if on_step:
                on_step(metrics)
            if ckpt_dir and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0 \
                    and state.step < cfg.total_steps:
                save_train_state(Path(ckpt_dir) / f"step_{state.step:07d}.json", state, echo_cfg, cfg, extra_meta)
    finally:
        if fh:
            fh.close()
    if ckpt_dir:
        save_train_state(Path(ckpt_dir) / "final.json", state, echo_cfg, cfg, extra_meta)
    return state
