"""Student-teacher fine-tuning loop.

The student (encoder + projector + predictor) sees speaker-perturbed audio;
the teacher (encoder + projector, no predictor) sees the clean audio and is
tracked as an exponential moving average of the student. The loss is the
frame-wise mean squared error between l2-normalized student predictions and
teacher targets, with a stop-gradient on the teacher side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import perturb_speaker
from .featurize import FeaturizerConfig, log_mel
from .io import FrameFeatures, UtteranceRecord, read_wav
from .neural import (
    AdamWState,
    EncoderConfig,
    LrSchedule,
    MlpHeadConfig,
    ParamStore,
    Tensor,
    adamw_step,
    build_encoder_params,
    build_head_params,
    concat,
    encoder_apply,
    head_apply,
    save_checkpoint,
)


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class ByolConfig:
    momentum: float = 0.999
    epochs: int = 15
    batch_seconds: float = 360.0
    target_layer: int | str = "projector"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.momentum <= 1.0):
            raise TrainerError("momentum must be in [0, 1]")
        if self.batch_seconds <= 0:
            raise TrainerError("batch_seconds must be positive")
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")
        if self.target_layer != "projector" and not isinstance(self.target_layer, int):
            raise TrainerError('target_layer must be "projector" or a layer index')


@dataclass
class TrainState:
    student: ParamStore
    teacher: ParamStore
    encoder_cfg: EncoderConfig
    projector_cfg: MlpHeadConfig
    predictor_cfg: MlpHeadConfig
    byol: ByolConfig
    opt: AdamWState = field(default_factory=AdamWState)
    step: int = 0


def make_student(encoder_cfg: EncoderConfig, projector_cfg: MlpHeadConfig,
                 predictor_cfg: MlpHeadConfig,
                 rng: np.random.Generator, dtype=np.float32) -> ParamStore:
    """Student parameters: encoder plus projector and predictor heads."""
    if projector_cfg.in_dim != encoder_cfg.d_model:
        raise TrainerError("projector in_dim must equal encoder d_model")
    if predictor_cfg.in_dim != projector_cfg.out:
        raise TrainerError("predictor in_dim must equal projector out dim")
    store = build_encoder_params(encoder_cfg, rng, dtype)
    build_head_params(projector_cfg, rng, "projector", store, dtype)
    build_head_params(predictor_cfg, rng, "predictor", store, dtype)
    return store


def make_teacher(student: ParamStore) -> ParamStore:
    """Teacher initialized as a copy of the student without the predictor;
    every tensor is non-trainable (the teacher never sees gradients)."""
    teacher = ParamStore()
    for name, p in student.items():
        if name.startswith("predictor."):
            continue
        teacher.add(name, p.data.copy(), trainable=False,
                    reinitialized=p.reinitialized)
    return teacher


def init_state(encoder_cfg: EncoderConfig, projector_cfg: MlpHeadConfig,
               predictor_cfg: MlpHeadConfig, byol: ByolConfig) -> TrainState:
    rng = np.random.default_rng(byol.seed)
    student = make_student(encoder_cfg, projector_cfg, predictor_cfg, rng)
    return TrainState(student=student, teacher=make_teacher(student),
                      encoder_cfg=encoder_cfg, projector_cfg=projector_cfg,
                      predictor_cfg=predictor_cfg, byol=byol)


# -- loss and EMA --------------------------------------------------------------

_NORM_EPS = 1e-12


def _normalize_rows_t(x: Tensor) -> Tensor:
    return x / ((x**2).sum(axis=-1, keepdims=True) + _NORM_EPS).sqrt()


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x**2).sum(axis=-1, keepdims=True) + _NORM_EPS)


def byol_loss(student_out, teacher_out):
    """Frame-wise MSE between l2-normalized rows:
    L = (1/T) * sum_t ||h_t - g_t||^2 = (1/T) * sum_t (2 - 2 cos_t).

    The teacher side is always treated as a constant (stop-gradient). Returns
    a graph Tensor when student_out is one, else a float.
    """
    graph = isinstance(student_out, Tensor)
    student_t = student_out if graph else Tensor(np.asarray(student_out, dtype=np.float64))
    target = teacher_out.data if isinstance(teacher_out, Tensor) else np.asarray(teacher_out)
    if tuple(student_t.shape) != tuple(target.shape):
        raise TrainerError(
            f"shape mismatch: student {tuple(student_t.shape)} vs teacher {tuple(target.shape)}")
    diff = _normalize_rows_t(student_t) - Tensor(_normalize_rows(target))
    loss = (diff**2).sum() * (1.0 / student_t.shape[0])
    return loss if graph else loss.item()


def ema_update(teacher: ParamStore, student: ParamStore, m: float) -> None:
    """xi <- m * xi + (1 - m) * theta for every teacher tensor."""
    if m == 1.0:
        return
    for name, p in teacher.items():
        if name not in student:
            raise TrainerError(f"teacher tensor {name} missing from student")
        s = student[name].data
        if s.shape != p.data.shape:
            raise TrainerError(f"shape mismatch for {name}")
        p.data[...] = m * p.data + (1.0 - m) * s.astype(p.data.dtype)


# -- forward passes -------------------------------------------------------------


def teacher_targets(state: TrainState, clean: FrameFeatures | np.ndarray) -> np.ndarray:
    """Target matrix for one clean utterance: the teacher's projection of its
    final encoder layer, or raw hidden states of the configured layer."""
    x = clean.data if isinstance(clean, FrameFeatures) else np.asarray(clean)
    mode = state.byol.target_layer
    cfg = state.encoder_cfg
    p = state.teacher.bind()
    states = encoder_apply(p, Tensor(x), cfg)
    if mode == "projector":
        return head_apply(p, states[-1], "projector", state.projector_cfg,
                          training=True, update_running=False).data
    if not (0 <= mode <= cfg.n_layers):
        raise TrainerError(f"target layer {mode} out of range 0..{cfg.n_layers}")
    if state.predictor_cfg.out != cfg.d_model:
        raise TrainerError(
            f"predictor out dim {state.predictor_cfg.out} must equal d_model "
            f"{cfg.d_model} when targeting hidden states")
    return states[mode].data


def student_predictions(p: dict, state: TrainState,
                        perturbed_batch: list[np.ndarray]) -> Tensor:
    """Student forward over a packed batch: encode each utterance, then run
    the frame-wise heads over all frames jointly (batch x time axis)."""
    finals = []
    for x in perturbed_batch:
        states = encoder_apply(p, Tensor(x), state.encoder_cfg)
        finals.append(states[-1])
    frames = finals[0] if len(finals) == 1 else concat(finals, axis=0)
    proj = head_apply(p, frames, "projector", state.projector_cfg, training=True)
    return head_apply(p, proj, "predictor", state.predictor_cfg, training=True)


def train_step(state: TrainState, batch: list[tuple], lr: float,
               warmup: bool = False, weight_decay: float = 0.0) -> float:
    """One optimization step on a batch of (clean, perturbed) feature pairs.

    Gradient flows only into the student; during warm-up only reinitialized
    parameters are updated; the EMA update runs after the optimizer step.
    """
    if not batch:
        raise TrainerError("empty batch")
    clean_list, pert_list = [], []
    for clean, pert in batch:
        c = clean.data if isinstance(clean, FrameFeatures) else np.asarray(clean)
        q = pert.data if isinstance(pert, FrameFeatures) else np.asarray(pert)
        if c.shape[0] != q.shape[0]:
            raise TrainerError(
                f"paired sequences must share frame count, got {c.shape[0]} vs {q.shape[0]}")
        clean_list.append(c)
        pert_list.append(q)
    targets = np.concatenate([teacher_targets(state, c) for c in clean_list], axis=0)
    p = state.student.bind(requires_grad=True)
    preds = student_predictions(p, state, pert_list)
    loss = byol_loss(preds, targets)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainerError(f"non-finite loss {value} at step {state.step}")
    loss.backward()
    grads = {name: t.grad for name, t in p.items() if t.grad is not None}
    adamw_step(state.student, grads, state.opt, lr,
               weight_decay=weight_decay, reinitialized_only=warmup)
    ema_update(state.teacher, state.student, state.byol.momentum)
    state.step += 1
    return value


# -- training loop --------------------------------------------------------------


def _pack_batches(order: np.ndarray, durations: list[float],
                  batch_seconds: float) -> list[list[int]]:
    """Pack utterances (in the given order) into batches holding up to
    batch_seconds of clean audio; oversized utterances get their own batch."""
    batches: list[list[int]] = []
    current: list[int] = []
    total = 0.0
    for idx in order:
        d = durations[int(idx)]
        if current and total + d > batch_seconds:
            batches.append(current)
            current, total = [], 0.0
        current.append(int(idx))
        total += d
    if current:
        batches.append(current)
    return batches


def run_training(records: list[UtteranceRecord], out_dir: str | Path,
                 encoder_cfg: EncoderConfig, projector_cfg: MlpHeadConfig,
                 predictor_cfg: MlpHeadConfig, byol: ByolConfig,
                 featurizer: FeaturizerConfig = FeaturizerConfig(),
                 lr_min: float = 1e-5, lr_max: float = 1e-4,
                 warmup_frac: float = 0.03, hold_frac: float = 0.47,
                 weight_decay: float = 0.0) -> TrainState:
    """Full fine-tuning run over a manifest.

    Every epoch re-draws a fresh perturbed voice per utterance, packs the
    shuffled corpus into batches of clean-audio seconds, and runs one
    optimizer + EMA step per batch. Deterministic given byol.seed. Writes
    per-epoch checkpoints and a step,lr,loss CSV under out_dir.
    """
    if not records:
        raise TrainerError("empty manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    waves = []
    for rec in records:
        if rec.audio is None:
            raise TrainerError(f"{rec.utterance_id}: training needs audio "
                               "(perturbation runs on waveforms)")
        waves.append(read_wav(rec.audio))
    clean_feats = [log_mel(w, featurizer) for w in waves]
    durations = [w.duration for w in waves]

    rng = np.random.default_rng(byol.seed)
    epoch_orders = [rng.permutation(len(records)) for _ in range(byol.epochs)]
    epoch_batches = [_pack_batches(order, durations, byol.batch_seconds)
                     for order in epoch_orders]
    total_steps = sum(len(b) for b in epoch_batches)
    schedule = LrSchedule(total_steps=total_steps, lr_min=lr_min, lr_max=lr_max,
                          warmup_frac=warmup_frac, hold_frac=hold_frac)
    warmup_steps = warmup_frac * total_steps

    state = init_state(encoder_cfg, projector_cfg, predictor_cfg, byol)
    log_rows: list[tuple[int, float, float]] = []
    for epoch, batches in enumerate(epoch_batches):
        for batch_ids in batches:
            pairs = []
            for idx in batch_ids:
                seed = int(rng.integers(0, 2**31 - 1))
                perturbed = perturb_speaker(waves[idx], rng_seed=seed)
                pairs.append((clean_feats[idx], log_mel(perturbed, featurizer)))
            lr = schedule.lr_at(state.step)
            warmup = state.step < warmup_steps
            loss = train_step(state, pairs, lr, warmup=warmup,
                              weight_decay=weight_decay)
            log_rows.append((state.step - 1, lr, loss))
        save_checkpoint(out_dir / f"epoch_{epoch + 1:03d}",
                        {"student": state.student, "teacher": state.teacher},
                        state.step)

    with open(out_dir / "loss_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        writer.writerows(log_rows)
    return state
