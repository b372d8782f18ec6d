"""Linear probing of synthesized trajectories against articulatory data.

A per-speaker affine map from trajectory space to the 6 articulatory
parameters is trained by minimizing the frame-mean squared reconstruction
loss averaged over utterances, with Adam (lr 0.001, betas 0.9/0.999), at
most 100 epochs and early stopping after 5 epochs without development-loss
improvement.  Evaluation concatenates test predictions per speaker and
reports one Pearson correlation per parameter; the articulatory score is
the grand average over parameters and speakers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ema import PARAMETERS, ArticulatorySeries
from .forward import Trajectory

log = logging.getLogger(__name__)

ADAM_LR = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MAX_EPOCHS = 100
PATIENCE = 5


class ProbeError(ValueError):
    """Invalid probing request."""


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = ADAM_LR
    betas: tuple[float, float] = ADAM_BETAS
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = ADAM_LR) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], lr=lr)


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]
) -> list[np.ndarray]:
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ProbeError("parameter/gradient shape mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ProbeError("non-finite gradient")
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / (1 - b1**t)
        v_hat = state.v[i] / (1 - b2**t)
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


@dataclass(frozen=True)
class ProbeModel:
    """Affine map: parameters = frames @ weight.T + bias."""

    weight: np.ndarray  # (6, d)
    bias: np.ndarray  # (6,)
    epochs_run: int = 0
    best_dev_loss: float = float("nan")

    def predict(self, frames: np.ndarray) -> np.ndarray:
        return frames @ self.weight.T + self.bias


Pair = tuple[Trajectory, ArticulatorySeries]


def _aligned(pair: Pair) -> tuple[np.ndarray, np.ndarray]:
    """Frame matrices of a pair, truncated to the common length (off by <= 1)."""
    traj, z = pair
    n_f, n_z = traj.frames.shape[0], z.Z.shape[0]
    if abs(n_f - n_z) > 1:
        raise ProbeError(
            f"{traj.utterance_id}: trajectory has {n_f} frames but articulatory "
            f"series has {n_z}"
        )
    n = min(n_f, n_z)
    if n == 0:
        raise ProbeError(f"{traj.utterance_id}: empty pair")
    return traj.frames[:n], z.Z[:n]


def _utterance_loss(weight, bias, F, Z) -> float:
    err = F @ weight.T + bias - Z
    return float(np.mean(np.sum(err * err, axis=1)))


def dataset_loss(weight: np.ndarray, bias: np.ndarray, pairs: list[Pair]) -> float:
    """Mean over utterances of the frame-mean squared reconstruction error."""
    losses = [_utterance_loss(weight, bias, *_aligned(p)) for p in pairs]
    return float(np.mean(losses))


def train_probe(
    train: list[Pair],
    dev: list[Pair],
    seed: int = 0,
    *,
    max_epochs: int = MAX_EPOCHS,
    patience: int = PATIENCE,
    lr: float = ADAM_LR,
) -> ProbeModel:
    """Fit the affine probe; deterministic given the seed.

    One Adam step per utterance (the loss is a sum of per-utterance terms),
    utterance order reshuffled each epoch.  Returns the parameters with the
    best development loss seen.
    """
    if not train or not dev:
        raise ProbeError("need non-empty train and dev sets")
    cached_train = [_aligned(p) for p in train]
    cached_dev = [_aligned(p) for p in dev]
    d = cached_train[0][0].shape[1]
    n_params = cached_train[0][1].shape[1]
    for F, Z in cached_train + cached_dev:
        if F.shape[1] != d or Z.shape[1] != n_params:
            raise ProbeError("inconsistent feature or parameter dimensions")
    pooled_targets = np.concatenate([Z for _, Z in cached_train], axis=0)
    for j in range(n_params):
        if np.ptp(pooled_targets[:, j]) == 0:
            log.warning("training parameter %s is constant; fit is degenerate",
                        PARAMETERS[j] if j < len(PARAMETERS) else j)

    rng = np.random.default_rng(seed)
    weight = np.zeros((n_params, d))
    bias = np.zeros(n_params)
    state = AdamState.for_params([weight, bias], lr=lr)
    best_w, best_b = weight.copy(), bias.copy()
    best_dev = float("inf")
    bad_epochs = 0
    epochs_run = 0
    for _epoch in range(max_epochs):
        epochs_run += 1
        for i in rng.permutation(len(cached_train)):
            F, Z = cached_train[i]
            err = F @ weight.T + bias - Z
            gw = 2.0 * err.T @ F / F.shape[0]
            gb = 2.0 * err.mean(axis=0)
            weight, bias = adam_step(state, [weight, bias], [gw, gb])
        dev_loss = float(np.mean([_utterance_loss(weight, bias, F, Z) for F, Z in cached_dev]))
        if dev_loss < best_dev:
            best_dev = dev_loss
            best_w, best_b = weight.copy(), bias.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= patience:
                break
    return ProbeModel(best_w, best_b, epochs_run, best_dev)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Sample Pearson correlation coefficient of two equal-length series."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ProbeError("pearson needs two equal-length 1-D series of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc))
    sy = np.sqrt(np.sum(yc * yc))
    if sx == 0 or sy == 0:
        raise ProbeError("pearson undefined for a zero-variance series")
    return float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))


def score(probe: ProbeModel, test: list[Pair]) -> np.ndarray:
    """Per-parameter PCC over the concatenated test frames of one speaker.

    Degenerate (zero-variance) parameters are returned as NaN with a logged
    warning and are excluded from downstream averages.
    """
    if not test:
        raise ProbeError("empty test set")
    preds, truths = [], []
    for pair in test:
        F, Z = _aligned(pair)
        preds.append(probe.predict(F))
        truths.append(Z)
    pred = np.concatenate(preds, axis=0)
    truth = np.concatenate(truths, axis=0)
    out = np.empty(truth.shape[1])
    for j in range(truth.shape[1]):
        try:
            out[j] = pearson(pred[:, j], truth[:, j])
        except ProbeError:
            name = PARAMETERS[j] if j < len(PARAMETERS) else str(j)
            log.warning("parameter %s has zero variance; excluded from the score", name)
            out[j] = np.nan
    return out


@dataclass(frozen=True)
class ScoreReport:
    """Per-speaker, per-parameter PCC matrix with its averages."""

    speakers: tuple[str, ...]
    parameters: tuple[str, ...]
    matrix: np.ndarray  # (n_speakers, n_parameters), NaN = excluded
    per_speaker: np.ndarray
    per_parameter: np.ndarray
    grand: float
    stderr: float

    def to_csv(self) -> str:
        lines = ["speaker," + ",".join(self.parameters) + ",average"]
        for i, spk in enumerate(self.speakers):
            cells = [_fmt(v) for v in self.matrix[i]]
            lines.append(f"{spk}," + ",".join(cells) + f",{_fmt(self.per_speaker[i])}")
        lines.append("average," + ",".join(_fmt(v) for v in self.per_parameter)
                     + f",{_fmt(self.grand)}")
        lines.append(f"stderr,{_fmt(self.stderr)}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(p) for p in self.parameters) + 2
        head = "speaker".ljust(12) + "".join(p.rjust(width) for p in self.parameters)
        head += "average".rjust(width)
        rows = [head, "-" * len(head)]
        for i, spk in enumerate(self.speakers):
            row = spk.ljust(12) + "".join(_fmt3(v).rjust(width) for v in self.matrix[i])
            row += _fmt3(self.per_speaker[i]).rjust(width)
            rows.append(row)
        rows.append("-" * len(head))
        foot = "average".ljust(12) + "".join(_fmt3(v).rjust(width) for v in self.per_parameter)
        foot += _fmt3(self.grand).rjust(width)
        rows.append(foot)
        rows.append(f"standard error across speakers: {_fmt3(self.stderr)}")
        return "\n".join(rows) + "\n"


def _fmt(v: float) -> str:
    return "NA" if np.isnan(v) else f"{v:.6f}"


def _fmt3(v: float) -> str:
    return "NA" if np.isnan(v) else f"{v:.3f}"


def aggregate(
    matrix: np.ndarray,
    speakers: tuple[str, ...],
    parameters: tuple[str, ...] = PARAMETERS,
) -> ScoreReport:
    """Row/column/grand means of a complete PCC matrix, plus the standard
    error of the per-speaker averages."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (len(speakers), len(parameters)):
        raise ProbeError(f"matrix shape {matrix.shape} does not match labels")
    if np.all(np.isnan(matrix)):
        raise ProbeError("score matrix is entirely undefined")
    if np.any(np.isnan(matrix)):
        log.warning("score matrix has %d excluded entries", int(np.isnan(matrix).sum()))
    per_speaker = np.nanmean(matrix, axis=1)
    per_parameter = np.nanmean(matrix, axis=0)
    grand = float(np.nanmean(per_speaker))
    if len(speakers) > 1:
        stderr = float(np.nanstd(per_speaker, ddof=1) / np.sqrt(len(speakers)))
    else:
        stderr = 0.0
    return ScoreReport(tuple(speakers), tuple(parameters), matrix,
                       per_speaker, per_parameter, grand, stderr)
