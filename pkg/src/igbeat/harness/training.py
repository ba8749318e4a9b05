"""NLL training loop with early stopping on validation NLL per beat."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..backbone import ModelParameters, ig_nll, init_params, predict, sequence_loss
from .config import ExperimentConfig

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EarlyStopping:
    patience: int
    best: float = math.inf
    best_epoch: int = 0
    bad_epochs: int = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    params: ModelParameters
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_nll: float = math.inf
    epochs_trained: int = 0
    stop_reason: str = ""


def _stack(segments) -> np.ndarray:
    segs = [np.asarray(s, dtype=np.float64) for s in segments]
    if not segs:
        raise ValueError("no segments")
    if len({s.size for s in segs}) != 1:
        raise ValueError("segments must share one length")
    return np.stack(segs)


def mean_nll_per_beat(params: ModelParameters, segments, chunk: int = 64) -> float:
    """Mean one-step-ahead NLL per predicted beat (no tape)."""
    x = _stack(segments)
    total, count = 0.0, 0
    for i in range(0, x.shape[0], chunk):
        xb = x[i:i + chunk]
        mu, logvar = predict(xb, params, training=False)
        nll = ig_nll(xb[:, 1:].T, mu[:-1], logvar[:-1])
        total += float(np.sum(nll.value))
        count += nll.size
    return total / count


def train(train_segments, val_segments, cfg: ExperimentConfig, rng: np.random.Generator,
          params: ModelParameters | None = None, max_seconds: float | None = None) -> TrainResult:
    """Adam on the summed NLL of each minibatch of training segments.

    Every epoch visits all training segments once in an order shuffled by
    ``rng``. After each epoch the mean validation NLL per beat is computed;
    training stops after ``cfg.patience`` epochs without improvement (or at
    ``cfg.max_epochs``) and the best-validation parameters are restored. With
    ``cfg.lr_factor < 1`` the learning rate is also cut after every
    ``cfg.lr_patience`` epochs without improvement, down to ``cfg.min_lr``.
    With ``cfg.ema_decay > 0`` an exponential moving average of the weights is
    updated after every step; validation, model selection and the returned
    parameters all use the average, which removes most of the step-to-step
    jitter in the predicted mean level. ``cfg.restore_best=False`` keeps the
    weights from the last epoch instead of the best-validation ones.
    """
    x_train = _stack(train_segments)
    x_val = _stack(val_segments)
    if params is None:
        params = init_params(cfg.backbone(), rng)
    opt = ad.Adam(params.tensors(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    stopper = EarlyStopping(cfg.patience)
    best_state = params.state()
    result = TrainResult(params)
    t0 = time.monotonic()
    n_beats = x_train.shape[0] * (x_train.shape[1] - 1)
    since_cut = 0
    ema = params.state() if cfg.ema_decay > 0 else None

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(x_train.shape[0])
        total = 0.0
        for i in range(0, order.size, cfg.batch_size):
            batch = x_train[order[i:i + cfg.batch_size]]
            params.zero_grad()
            with ad.Tape() as tape:
                loss = sequence_loss(batch, params)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}, batch {i // cfg.batch_size}")
            tape.backward(loss)
            opt.step()
            if ema is not None:
                for k, t in params.items():
                    ema[k] *= cfg.ema_decay
                    ema[k] += (1.0 - cfg.ema_decay) * t.value
            total += float(loss.value)
        if not params.all_finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        live = None
        if ema is not None:
            live = params.state()
            params.load_state(ema)
        val = validation_nll(params, x_val)
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation NLL at epoch {epoch}")
        result.history.append({"epoch": epoch, "train_nll": total / n_beats, "val_nll": val, "lr": opt.lr})
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, total / n_beats, val, opt.lr)
        stop = stopper.update(val, epoch)
        if stopper.best_epoch == epoch:
            best_state = params.state()
            since_cut = 0
        else:
            since_cut += 1
            if cfg.lr_factor < 1 and since_cut >= cfg.lr_patience:
                opt.lr = max(opt.lr * cfg.lr_factor, cfg.min_lr)
                since_cut = 0
        if live is not None:
            params.load_state(live)
        result.epochs_trained = epoch
        if stop:
            result.stop_reason = f"no improvement for {cfg.patience} epochs"
            break
        if max_seconds is not None and time.monotonic() - t0 > max_seconds:
            result.stop_reason = "time budget"
            break
    else:
        result.stop_reason = "max_epochs"

    if cfg.restore_best:
        params.load_state(best_state)
    elif ema is not None:
        params.load_state(ema)
    result.best_epoch = stopper.best_epoch
    result.best_val_nll = stopper.best
    return result


def validation_nll(params: ModelParameters, segments) -> float:
    return mean_nll_per_beat(params, segments)
