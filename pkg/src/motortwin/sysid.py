"""Plant emulator training (RNN2): learn PWM-window -> next-RPM from logged
traces, evaluate fidelity, and stream predictions over whole traces.

The trained network is the digital twin used in place of the machine. The
default window is x=3; x=1 and x=18 configurations exist for the lag study.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .dataset import (PWM_TO_RPM, NormStats, SampleSet, Trace, WindowConfig,
                      compute_norm_stats, concat_samples, denormalize,
                      normalize, split, windowize)


@dataclass(frozen=True)
class Rnn2Config:
    """Shape and schedule of the emulator network."""

    x: int = 3
    lstm_units: Tuple[int, ...] = (8, 6)
    dense_units: Tuple[int, ...] = ()
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 5e-3
    seed: int = 0

    def __post_init__(self):
        if self.x < 1:
            raise ValueError("window length x must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    test_loss: List[float] = field(default_factory=list)


def prepare_samples(traces: Sequence[Trace], x: int, test_fraction: float = 0.2,
                    direction: str = PWM_TO_RPM) -> Tuple[SampleSet, SampleSet]:
    """Windowize each trace, hold out the trailing block of each as test,
    then normalize both splits with statistics from the train split only."""
    cfg = WindowConfig(x=x, direction=direction)
    train_parts, test_parts = [], []
    for trace in traces:
        samples = windowize(trace, cfg)
        tr, te = split(samples, test_fraction)
        train_parts.append(tr)
        test_parts.append(te)
    train = concat_samples(train_parts)
    test = concat_samples(test_parts)
    stats = compute_norm_stats(train)
    return normalize(train, stats), normalize(test, stats)


def _full_loss(net: nn.Network, samples: SampleSet, batch: int = 4096) -> float:
    losses, n = 0.0, 0
    for lo in range(0, len(samples), batch):
        preds, _ = net.forward_batch(samples.inputs[lo:lo + batch])
        diff = preds - samples.targets[lo:lo + batch]
        losses += float(np.sum(diff * diff))
        n += len(diff)
    return losses / n


def train_rnn2(train: SampleSet, test: SampleSet, cfg: Rnn2Config
               ) -> Tuple[nn.Network, TrainHistory]:
    """Fit the emulator by Adam on MSE between predicted and logged RPM.

    Deterministic under cfg.seed; epochs=0 returns the seeded initialization
    untouched.
    """
    for name, s in (("train", train), ("test", test)):
        if s.direction != PWM_TO_RPM:
            raise ValueError(f"{name} samples must be windowed pwm->rpm, got {s.direction}")
        if s.x != cfg.x:
            raise ValueError(f"{name} samples use window x={s.x}, config wants x={cfg.x}")
    net = nn.build_network(cfg.x, cfg.lstm_units, cfg.dense_units, seed=cfg.seed,
                           norm_stats=train.norm_stats)
    history = TrainHistory()
    if cfg.epochs == 0:
        return net, history

    rng = np.random.default_rng(cfg.seed)
    params = net.get_flat()
    state = nn.adam_init(params.size, lr=cfg.learning_rate)
    n = len(train)
    for epoch in range(cfg.epochs):
        state.lr = cfg.learning_rate * (0.93 ** epoch)  # settle late training
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            x_b = train.inputs[idx]
            y_b = train.targets[idx]
            preds, cache = net.forward_batch(x_b)
            diff = preds - y_b
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise RuntimeError("non-finite training loss; aborting")
            grads, _ = net.backward_batch(cache, 2.0 * diff / len(diff))
            params, state = nn.adam_step(params, nn.Network.flatten_grads(grads), state)
            net.set_flat(params)
        history.train_loss.append(_full_loss(net, train))
        history.test_loss.append(_full_loss(net, test))
    return net, history


def predict_trace(model: nn.Network, pwm_trace) -> Tuple[np.ndarray, np.ndarray]:
    """Stream a model over a PWM trace.

    Output index k (k >= x-1) is the forward pass over the window ending at
    k; the first x-1 outputs are zeros flagged as warmup. Returns
    (predictions, warmup_mask), each the length of the input.
    """
    pwm_trace = np.asarray(pwm_trace, dtype=float)
    x = model.x
    if len(pwm_trace) < x:
        raise ValueError(f"trace of length {len(pwm_trace)} is shorter than window x={x}")
    stats = model.norm_stats
    if stats is not None:
        u = (pwm_trace - stats.input_offset) / stats.input_scale
    else:
        u = pwm_trace
    preds = np.zeros(len(u), dtype=float)
    warmup = np.zeros(len(u), dtype=bool)
    warmup[:x - 1] = True
    for k in range(x - 1, len(u)):
        p, _ = model.forward(u[k - x + 1:k + 1])
        if stats is not None:
            p = denormalize(p, stats.target_offset, stats.target_scale)
        preds[k] = p
    return preds, warmup


def measure_lag(pred, actual, max_shift: Optional[int] = None) -> int:
    """Shift (in samples) that best aligns a prediction to the actual signal.

    Scans shifts s in [0, L/4] and returns the s maximizing the Pearson
    correlation between actual[:L-s] and pred[s:]; ties break toward the
    smaller shift.
    """
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ValueError("pred and actual must have equal length")
    n = len(pred)
    if n < 32:
        raise ValueError("need at least 32 samples to estimate lag")
    if np.std(pred) == 0.0 or np.std(actual) == 0.0:
        raise ValueError("cannot estimate lag of a constant signal")
    if max_shift is None:
        max_shift = n // 4
    best_s, best_c = 0, -np.inf
    for s in range(max_shift + 1):
        a = actual[:n - s] if s else actual
        p = pred[s:]
        sa, sp = np.std(a), np.std(p)
        if sa == 0.0 or sp == 0.0:
            continue
        c = float(np.mean((a - a.mean()) * (p - p.mean())) / (sa * sp))
        if c > best_c:
            best_c, best_s = c, s
    return best_s


def evaluate_rnn2(model: nn.Network, test: SampleSet) -> Dict[str, float]:
    """Held-out fidelity: NMSE (MSE over target variance) and worst absolute
    error, reported in physical RPM units."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    preds, _ = model.forward_batch(test.inputs)
    targets = test.targets
    stats = test.norm_stats
    if stats is not None:
        preds = denormalize(preds, stats.target_offset, stats.target_scale)
        targets = denormalize(targets, stats.target_offset, stats.target_scale)
    var = float(np.var(targets))
    if var == 0.0:
        raise ValueError("test targets have zero variance")
    return {
        "nmse": nn.mse(preds, targets) / var,
        "max_abs_err": float(np.max(np.abs(preds - targets))),
    }
