"""EMA ingestion and articulatory-parameter extraction.

Recordings carry 12 channels (2D midsagittal x/y for tongue tip, tongue
body, tongue dorsum, lower incisor, upper lip, lower lip) at 500 Hz.  They
are low-pass filtered at 50 Hz with a zero-phase 5th-order Butterworth,
decimated to 100 Hz, and decomposed into 6 articulatory parameters with a
jaw-first linear decomposition:

    1. jaw height        first principal axis of the lower-incisor coil
    2-4. tongue body / dorsum / tip
                         first principal axis of each coil's residual after
                         regressing out the jaw parameter
    5. lip protrusion    first principal axis of the upper-lip residual
    6. lip height        vertical lower-minus-upper lip aperture residual

Every axis is oriented so its largest-magnitude loading is positive, and
parameters are z-scored with training-partition statistics.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt

from .alignment import FeaturalSegmentation
from .forward import frame_count

CHANNELS = (
    "tt_x", "tt_y", "tb_x", "tb_y", "td_x", "td_y",
    "li_x", "li_y", "ul_x", "ul_y", "ll_x", "ll_y",
)
PARAMETERS = (
    "jaw_height", "tongue_body", "tongue_dorsum",
    "tongue_tip", "lip_protrusion", "lip_height",
)
VALID_RATES = (500, 100)
NAN_FRACTION_LIMIT = 0.05
FILTER_ORDER = 5
CUTOFF_HZ = 50.0
DECIMATION = 5


class EmaError(ValueError):
    """Unreadable or inconsistent EMA data."""


@dataclass(frozen=True)
class EmaRecord:
    utterance_id: str
    sample_rate: int
    channels: np.ndarray  # (n, 12) in CHANNELS order
    nan_repairs: int = 0

    def __post_init__(self):
        if self.channels.ndim != 2 or self.channels.shape[1] != len(CHANNELS):
            raise EmaError(
                f"{self.utterance_id}: expected {len(CHANNELS)} channels, "
                f"got shape {self.channels.shape}"
            )
        if self.sample_rate not in VALID_RATES:
            raise EmaError(f"{self.utterance_id}: unsupported sample rate {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.channels.shape[0] / self.sample_rate

    @property
    def channel_names(self) -> tuple[str, ...]:
        return CHANNELS


@dataclass(frozen=True)
class ArticulatorySeries:
    utterance_id: str
    Z: np.ndarray  # (n, 6) in PARAMETERS order
    frame_rate: float = 100.0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(PARAMETERS) + "\n")
            for row in self.Z:
                f.write(",".join(f"{v:.9g}" for v in row) + "\n")


def _repair_nans(channels: np.ndarray, utt: str) -> tuple[np.ndarray, int]:
    """Linearly interpolate NaN runs per channel; reject heavy corruption."""
    out = channels.copy()
    n = out.shape[0]
    repairs = 0
    for j in range(out.shape[1]):
        bad = ~np.isfinite(out[:, j])
        if not bad.any():
            continue
        frac = bad.mean()
        if frac > NAN_FRACTION_LIMIT:
            raise EmaError(f"{utt}: channel {CHANNELS[j]} is {frac:.1%} NaN")
        good = np.flatnonzero(~bad)
        if good.size == 0:
            raise EmaError(f"{utt}: channel {CHANNELS[j]} entirely NaN")
        out[bad, j] = np.interp(np.flatnonzero(bad), good, out[good, j])
        repairs += int(bad.sum())
    if n and not np.all(np.isfinite(out)):
        raise EmaError(f"{utt}: NaN repair failed")
    return out, repairs


def _parse_est_header(raw: bytes, path) -> tuple[dict, int]:
    end = raw.find(b"EST_Header_End")
    if not raw.startswith(b"EST_File") or end < 0:
        raise EmaError(f"{path}: not an EST track file")
    end = raw.index(b"\n", end) + 1
    fields: dict[str, str] = {}
    for line in raw[:end].decode("ascii", errors="replace").splitlines():
        parts = line.split(None, 1)
        if len(parts) == 2:
            fields[parts[0]] = parts[1].strip()
    return fields, end


def load_est_track(path, utterance_id: str | None = None) -> EmaRecord:
    """Read an EST binary track: ASCII header, then f32 frames of
    (time, flag, channel values)."""
    path = Path(path)
    utt = utterance_id or path.stem
    raw = path.read_bytes()
    fields, offset = _parse_est_header(raw, path)
    try:
        n_frames = int(fields["NumFrames"])
        n_channels = int(fields["NumChannels"])
    except KeyError as exc:
        raise EmaError(f"{path}: header missing {exc}") from exc
    if fields.get("ByteOrder", "01") != "01":
        raise EmaError(f"{path}: only little-endian tracks supported")
    names = []
    for c in range(n_channels):
        key = f"Channel_{c}"
        if key not in fields:
            raise EmaError(f"{path}: header missing {key}")
        names.append(fields[key].strip().lower())
    width = n_channels + 2
    data = np.frombuffer(raw, dtype="<f4", count=n_frames * width, offset=offset)
    if data.size != n_frames * width:
        raise EmaError(f"{path}: truncated frame data")
    data = data.reshape(n_frames, width).astype(float)
    times = data[:, 0]
    if "SampleRate" in fields:
        rate = int(round(float(fields["SampleRate"])))
    else:
        dt = np.median(np.diff(times)) if n_frames > 1 else 0.0
        if dt <= 0:
            raise EmaError(f"{path}: cannot infer sample rate")
        rate = int(round(1.0 / dt))
    missing = [c for c in CHANNELS if c not in names]
    if missing:
        raise EmaError(f"{path}: channels missing from track: {missing}")
    cols = [names.index(c) + 2 for c in CHANNELS]
    channels, repairs = _repair_nans(data[:, cols], utt)
    return EmaRecord(utt, rate, channels, repairs)


def write_est_track(path, rec: EmaRecord) -> None:
    """Serialize an EmaRecord in the EST binary track layout."""
    n = rec.channels.shape[0]
    header = ["EST_File Track", "DataType binary", "ByteOrder 01",
              f"NumFrames {n}", f"NumChannels {len(CHANNELS)}",
              f"SampleRate {rec.sample_rate}", "EqualSpace t"]
    header += [f"Channel_{i} {name}" for i, name in enumerate(CHANNELS)]
    header.append("EST_Header_End")
    times = np.arange(n) / rec.sample_rate
    frames = np.empty((n, len(CHANNELS) + 2), dtype="<f4")
    frames[:, 0] = times
    frames[:, 1] = 1.0
    frames[:, 2:] = rec.channels
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(frames.tobytes())


def load_csv(path, utterance_id: str | None = None, sample_rate: int | None = None) -> EmaRecord:
    """CSV fallback: header row of channel names, optional leading time column."""
    path = Path(path)
    utt = utterance_id or path.stem
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) < 2:
        raise EmaError(f"{path}: no data rows")
    names = [c.strip().lower() for c in lines[0].split(",")]
    missing = [c for c in CHANNELS if c not in names]
    if missing:
        raise EmaError(f"{path}: channels missing from CSV: {missing}")
    data = np.array([[float(v) if v.strip().lower() not in ("", "nan") else np.nan
                      for v in ln.split(",")] for ln in lines[1:]])
    if data.shape[1] != len(names):
        raise EmaError(f"{path}: ragged CSV rows")
    if sample_rate is None:
        if "time" in names:
            tcol = data[:, names.index("time")]
            dt = np.median(np.diff(tcol)) if data.shape[0] > 1 else 0.0
            if dt <= 0:
                raise EmaError(f"{path}: cannot infer sample rate from time column")
            sample_rate = int(round(1.0 / dt))
        else:
            raise EmaError(f"{path}: sample rate unknown (no time column)")
    cols = [names.index(c) for c in CHANNELS]
    channels, repairs = _repair_nans(data[:, cols], utt)
    return EmaRecord(utt, sample_rate, channels, repairs)


def write_csv(path, rec: EmaRecord) -> None:
    n = rec.channels.shape[0]
    with open(path, "w", encoding="utf-8") as f:
        f.write("time," + ",".join(CHANNELS) + "\n")
        for i in range(n):
            f.write(f"{i / rec.sample_rate:.9g},"
                    + ",".join(f"{v:.9g}" for v in rec.channels[i]) + "\n")


def load_ema(path, fmt: str | None = None, utterance_id: str | None = None) -> EmaRecord:
    """Load an EMA recording; format inferred from the extension if omitted."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "est_track"
    if fmt == "est_track":
        return load_est_track(path, utterance_id)
    if fmt == "csv":
        return load_csv(path, utterance_id)
    raise EmaError(f"unknown EMA format {fmt!r}")


def filter_and_downsample(rec: EmaRecord) -> EmaRecord:
    """Zero-phase 50 Hz low-pass, then decimation from 500 Hz to 100 Hz.

    Channel means are removed before filtering and restored afterwards so
    constant signals pass through bit-exactly.
    """
    if rec.sample_rate != 500:
        raise EmaError(f"{rec.utterance_id}: expected 500 Hz input, got {rec.sample_rate}")
    b, a = butter(FILTER_ORDER, CUTOFF_HZ, btype="low", fs=rec.sample_rate)
    means = rec.channels.mean(axis=0, keepdims=True)
    filtered = filtfilt(b, a, rec.channels - means, axis=0) + means
    n_out = rec.channels.shape[0] // DECIMATION
    down = filtered[: n_out * DECIMATION : DECIMATION]
    return EmaRecord(rec.utterance_id, rec.sample_rate // DECIMATION, down, rec.nan_repairs)


def _first_axis(xy: np.ndarray) -> np.ndarray:
    """First principal axis of centered 2D data, largest loading positive."""
    cov = xy.T @ xy / xy.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    axis = vecs[:, np.argmax(vals)]
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return axis


_GROUPS = {  # parameter -> (x channel, y channel) column indices
    "tongue_body": (CHANNELS.index("tb_x"), CHANNELS.index("tb_y")),
    "tongue_dorsum": (CHANNELS.index("td_x"), CHANNELS.index("td_y")),
    "tongue_tip": (CHANNELS.index("tt_x"), CHANNELS.index("tt_y")),
    "lip_protrusion": (CHANNELS.index("ul_x"), CHANNELS.index("ul_y")),
}
_LI = (CHANNELS.index("li_x"), CHANNELS.index("li_y"))
_UL_Y = CHANNELS.index("ul_y")
_LL_Y = CHANNELS.index("ll_y")


@dataclass(frozen=True)
class GuidedPcaModel:
    """Per-speaker linear decomposition of the 12 coil channels.

    ``matrix`` maps mean-centered channels to the 6 raw parameters;
    ``z_mean``/``z_std`` hold the training statistics used for z-scoring.
    """

    channel_means: np.ndarray  # (12,)
    jaw_axis: np.ndarray  # (2,)
    jaw_coef: np.ndarray  # (12,) regression of each channel on jaw (li entries 0)
    axes: dict  # parameter -> (2,) principal axis
    matrix: np.ndarray  # (12, 6)
    z_mean: np.ndarray  # (6,)
    z_std: np.ndarray  # (6,)

    def raw_parameters(self, channels: np.ndarray) -> np.ndarray:
        """Linear projection without z-scoring."""
        return (channels - self.channel_means) @ self.matrix


def fit_guided_pca(records: list[EmaRecord]) -> GuidedPcaModel:
    """Fit the jaw-first decomposition on pooled 100 Hz training frames."""
    if len(records) < 2:
        raise EmaError("guided PCA needs at least 2 training records")
    for r in records:
        if r.sample_rate != 100:
            raise EmaError(f"{r.utterance_id}: guided PCA expects 100 Hz records")
    pooled = np.concatenate([r.channels for r in records], axis=0)
    if pooled.shape[0] < 1000:
        raise EmaError(f"guided PCA needs >= 1000 pooled frames, got {pooled.shape[0]}")
    var = pooled.var(axis=0)
    for name, (cx, cy) in (("lower_incisor", _LI),) + tuple(
        (g, cols) for g, cols in _GROUPS.items()
    ):
        if var[cx] + var[cy] < 1e-12:
            raise EmaError(f"degenerate covariance: coil pair {name} never moves")
    means = pooled.mean(axis=0)
    centered = pooled - means

    jaw_axis = _first_axis(centered[:, list(_LI)])
    jaw = centered[:, list(_LI)] @ jaw_axis
    if jaw.var() < 1e-12:
        raise EmaError("degenerate covariance: jaw parameter has no variance")

    # Regress every non-incisor channel on the jaw parameter.
    denom = float(jaw @ jaw)
    jaw_coef = np.zeros(len(CHANNELS))
    for j in range(len(CHANNELS)):
        if j in _LI:
            continue
        jaw_coef[j] = float(jaw @ centered[:, j]) / denom
    residual = centered - np.outer(jaw, jaw_coef)

    axes = {}
    for name, (cx, cy) in _GROUPS.items():
        axes[name] = _first_axis(residual[:, [cx, cy]])

    # Assemble the composite 12 -> 6 map.  Each parameter is a functional of
    # the centered channels: group axis applied to residuals, which folds the
    # jaw regression back onto the lower-incisor channels.
    matrix = np.zeros((len(CHANNELS), 6))
    matrix[list(_LI), 0] = jaw_axis

    def _fill(col: int, loadings: dict[int, float]) -> None:
        jaw_part = 0.0
        for ch, w in loadings.items():
            matrix[ch, col] += w
            jaw_part += w * jaw_coef[ch]
        matrix[list(_LI), col] -= jaw_part * jaw_axis

    for col, name in enumerate(PARAMETERS[1:5], start=1):
        cx, cy = _GROUPS[name]
        ax = axes[name]
        _fill(col, {cx: ax[0], cy: ax[1]})
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    _fill(5, {_LL_Y: inv_sqrt2, _UL_Y: -inv_sqrt2})

    raw = centered @ matrix
    z_mean = raw.mean(axis=0)
    z_std = raw.std(axis=0)
    if np.any(z_std < 1e-12):
        raise EmaError("degenerate articulatory parameter (zero variance on training data)")
    return GuidedPcaModel(means, jaw_axis, jaw_coef, axes, matrix, z_mean, z_std)


def project(model: GuidedPcaModel, rec: EmaRecord) -> ArticulatorySeries:
    """Articulatory parameters of one record, z-scored with training stats."""
    if rec.sample_rate != 100:
        raise EmaError(f"{rec.utterance_id}: projection expects 100 Hz records")
    raw = model.raw_parameters(rec.channels)
    return ArticulatorySeries(rec.utterance_id, (raw - model.z_mean) / model.z_std)


def align_frames(z: ArticulatorySeries, fseg: FeaturalSegmentation) -> ArticulatorySeries:
    """Crop parameter frames to the trimmed utterance span of ``fseg``.

    The crop starts at the trimmed origin and extends for the trajectory
    frame count; a shortfall of one frame is tolerated (the pair is later
    truncated to the common length), anything more is a coverage error.
    """
    start = int(round(fseg.time_offset * z.frame_rate))
    n = frame_count(fseg.duration, z.frame_rate)
    avail = z.Z.shape[0] - start
    if start < 0 or avail < n - 1:
        raise EmaError(
            f"{z.utterance_id}: articulatory series ends before the utterance does "
            f"(needs {n} frames from {start}, has {max(avail, 0)})"
        )
    return ArticulatorySeries(z.utterance_id, z.Z[start : start + n].copy(), z.frame_rate)
