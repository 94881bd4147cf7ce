"""laneattn.training

Negative log-likelihood objective, Adam with global-norm clipping, the
plateau learning-rate schedule and the epoch loop that keeps the
best-validation checkpoint.
"""
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from laneattn import format as fmt
from laneattn.errors import ConfigError, DomainError, ShapeError
from laneattn.graph import TrackSample
from laneattn.model import Checkpoint, GaussianOut, ModelConfig, ModelParams, init_params, rollout
from laneattn.numerics import Tensor, backward, leaves

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 3e-4
    plateau_patience: int = 3
    lr_factor: float = 0.3
    batch_size: int = 32
    max_epochs: int = 50
    grad_clip_norm: float = 5.0
    seed: int = 0
    teacher_forcing: bool = False
    min_improve: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    workers: int = 1
    log_every: int = 10

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not 0 < self.lr_factor < 1:
            raise ConfigError("lr_factor must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.plateau_patience < 1:
            raise ConfigError("batch_size and plateau_patience must be positive, max_epochs non-negative")
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be positive")

    def replace(self, **changes) -> "TrainConfig":
        values = asdict(self)
        values.update(changes)
        return TrainConfig(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    lr: float = 3e-4

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], lr: float) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, lr)


@dataclass
class PlateauState:
    lr: float
    best: float = math.inf
    bad_epochs: int = 0
    reductions: int = 0


def nll_loss(gaussians: Sequence[GaussianOut], truth) -> Tensor:
    """Sum over steps of -log N(truth | mu, sigma, rho) for bivariate normals."""
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim != 2 or truth.shape[1] != 2 or len(truth) != len(gaussians):
        raise ShapeError(f"nll_loss: {len(gaussians)} Gaussians against truth of shape {truth.shape}")
    total = Tensor(0.0)
    for g, (tx, ty) in zip(gaussians, truth.tolist()):
        sx, sy = g.sigma[0], g.sigma[1]
        zx = (tx - g.mu[0]) / sx
        zy = (ty - g.mu[1]) / sy
        one_minus = 1.0 - g.rho * g.rho
        quad = zx * zx + zy * zy - 2.0 * g.rho * zx * zy
        step = LOG_2PI + sx.log() + sy.log() + 0.5 * one_minus.log() + quad / (2.0 * one_minus)
        total = total + step
    return total


def truth_deltas(sample: TrackSample, steps: Optional[int] = None) -> np.ndarray:
    future = sample.future if steps is None else sample.future[:steps]
    prev = np.vstack([sample.positions[-1:], future[:-1]])
    return future - prev


def sample_loss(P: Mapping[str, Tensor], config: ModelConfig, sample: TrackSample,
                teacher_forcing: bool = False) -> Tensor:
    steps = config.T_pred_steps
    if sample.horizon_steps < steps:
        raise DomainError(f"sample {sample.sample_id} has {sample.horizon_steps} future steps, model predicts {steps}")
    result = rollout(P, config, sample, steps=steps, teacher_forcing=teacher_forcing, record_trace=False)
    return nll_loss(result.gaussians, truth_deltas(sample, steps))


def sample_loss_and_grads(params: ModelParams, config: ModelConfig, sample: TrackSample,
                          teacher_forcing: bool = False) -> Tuple[float, Dict[str, np.ndarray]]:
    P = leaves(params.tensors)
    loss = sample_loss(P, config, sample, teacher_forcing)
    grads = backward(loss, P)
    return loss.item(), grads


def _loss_and_grads_job(job):
    return sample_loss_and_grads(*job)


def evaluate_nll(params: ModelParams, config: ModelConfig, samples: Sequence[TrackSample]) -> float:
    """Mean per-sample NLL, always without teacher forcing."""
    if not samples:
        return math.nan
    P = leaves(params.tensors, requires_grad=False)
    return float(np.mean([sample_loss(P, config, s, teacher_forcing=False).item() for s in samples]))


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients together so their global L2 norm is at most max_norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    scale = max_norm / norm if norm > max_norm else 1.0
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState,
              cfg: TrainConfig = TrainConfig()) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """Bias-corrected Adam update after global-norm clipping."""
    for name, p in params.items():
        if name not in grads or grads[name].shape != p.shape:
            raise ShapeError(f"gradient for '{name}' missing or mis-shaped")
    clipped, _ = clip_gradients(grads, cfg.grad_clip_norm)
    step = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = clipped[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[name], new_v[name] = m, v
    return new_params, OptimizerState(new_m, new_v, step, state.lr)


def plateau_schedule(history: Sequence[float], state: PlateauState, cfg: TrainConfig = TrainConfig()) -> float:
    """Feed the newest validation loss; cut lr by lr_factor after `plateau_patience` flat epochs."""
    if not history:
        raise DomainError("plateau schedule needs at least one validation loss")
    latest = float(history[-1])
    if latest < state.best - cfg.min_improve:
        state.best = latest
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= cfg.plateau_patience:
            state.lr *= cfg.lr_factor
            state.bad_epochs = 0
            state.reductions += 1
            logger.info("validation loss plateaued, lr reduced to %.3g", state.lr)
    return state.lr


@dataclass
class FitResult:
    checkpoint: Checkpoint
    log: List[dict] = field(default_factory=list)


def _batch_gradients(params, config, batch, teacher_forcing, pool):
    jobs = [(params, config, s, teacher_forcing) for s in batch]
    results = list(pool.map(_loss_and_grads_job, jobs)) if pool is not None else [_loss_and_grads_job(j) for j in jobs]
    losses = [loss for loss, _ in results]
    mean = {name: np.zeros_like(v) for name, v in params.tensors.items()}
    # fixed summation order keeps runs reproducible
    for _, grads in results:
        for name in mean:
            mean[name] += grads[name]
    for name in mean:
        mean[name] /= len(results)
    return losses, mean


def fit(train: Sequence[TrackSample], val: Sequence[TrackSample], model_cfg: ModelConfig,
        train_cfg: TrainConfig, out_dir: Optional[str] = None, init: Optional[ModelParams] = None) -> FitResult:
    """Train with shuffled mini-batches; keep the parameters with the best validation NLL."""
    if not train:
        raise DomainError("training set is empty")
    overlap = {s.sample_id for s in train} & {s.sample_id for s in val}
    if overlap:
        raise DomainError(f"train and validation sets share samples: {sorted(overlap)[:5]}")
    params = init if init is not None else init_params(model_cfg, train_cfg.seed)
    opt = OptimizerState.for_params(params.tensors, train_cfg.lr0)
    plateau = PlateauState(lr=train_cfg.lr0)
    rng = np.random.default_rng(train_cfg.seed)
    log_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.jsonl")
        open(log_path, "w").close()
    monitor = val if val else train
    best = Checkpoint(model_cfg, params, {"epoch": 0, "val_nll": evaluate_nll(params, model_cfg, monitor),
                                          "seed": train_cfg.seed, "aggregator": model_cfg.aggregator})
    log: List[dict] = []
    val_history: List[float] = []
    pool = ProcessPoolExecutor(max_workers=train_cfg.workers) if train_cfg.workers > 1 else None
    try:
        for epoch in range(1, train_cfg.max_epochs + 1):
            order = rng.permutation(len(train))
            epoch_losses = []
            for b, start in enumerate(range(0, len(order), train_cfg.batch_size)):
                batch = [train[i] for i in order[start:start + train_cfg.batch_size]]
                losses, grads = _batch_gradients(params, model_cfg, batch, train_cfg.teacher_forcing, pool)
                epoch_losses.extend(losses)
                opt.lr = plateau.lr
                new_arrays, opt = adam_step(params.tensors, grads, opt, train_cfg)
                params = ModelParams.from_arrays(new_arrays)
                if train_cfg.log_every and (b + 1) % train_cfg.log_every == 0:
                    logger.debug("epoch %d batch %d mean nll %.4f", epoch, b + 1, float(np.mean(losses)))
            train_nll = float(np.mean(epoch_losses))
            val_nll = evaluate_nll(params, model_cfg, monitor)
            val_history.append(val_nll)
            record = {"epoch": epoch, "train_nll": train_nll, "val_nll": val_nll, "lr": plateau.lr}
            log.append(record)
            if log_path:
                fmt.append_record(record, log_path)
            logger.info("epoch %d train_nll %.4f val_nll %.4f lr %.3g", epoch, train_nll, val_nll, plateau.lr)
            if val_nll < best.meta["val_nll"]:
                best = Checkpoint(model_cfg, params, {"epoch": epoch, "val_nll": val_nll,
                                                      "seed": train_cfg.seed, "aggregator": model_cfg.aggregator})
            plateau_schedule(val_history, plateau, train_cfg)
    finally:
        if pool is not None:
            pool.shutdown()
    if out_dir:
        best.save(os.path.join(out_dir, "checkpoint.json.gz"))
    return FitResult(best, log)
