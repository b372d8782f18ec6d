"""Forced-alignment ingestion and featural segmentation.

Reads phone-level alignments (.lab or Praat TextGrid), strips boundary
silences and converts the surviving phones into a matrix of feature-vector
targets with interval times and midpoint timings.  Target row 1 and row K+2
are synthetic zero targets pinning the trajectory to zero at both utterance
boundaries: the first has the degenerate interval (0, 0) and the last
repeats the final phone offset.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path as _Path

import numpy as np

from .phonology import SILENCE_LABELS, FeatureTable, encode_target

_TIME_EPS = 1e-6  # tolerated interval mismatch in seconds


class AlignmentError(ValueError):
    """Unparseable or inconsistent alignment data."""


@dataclass(frozen=True)
class Phone:
    label: str
    start: float
    end: float


@dataclass(frozen=True)
class PhoneSegmentation:
    """Contiguous phone intervals for one utterance.

    ``offset`` is the stretch of leading silence (seconds) removed by
    trimming; times inside ``phones`` are relative to the trimmed origin.
    """

    utterance_id: str
    phones: tuple[Phone, ...]
    offset: float = 0.0

    def __len__(self) -> int:
        return len(self.phones)

    @property
    def duration(self) -> float:
        return self.phones[-1].end if self.phones else 0.0


@dataclass(frozen=True)
class FeaturalSegmentation:
    """Featural targets for one utterance.

    X holds K+2 target rows (NaN = unknown entry), Y the matching time
    intervals and t the interval midpoints.  ``time_offset`` carries the
    leading-silence trim so EMA frames can be re-aligned later.
    """

    utterance_id: str
    X: np.ndarray  # (K+2, d)
    Y: np.ndarray  # (K+2, 2)
    t: np.ndarray  # (K+2,)
    time_offset: float = 0.0

    @property
    def num_targets(self) -> int:
        return self.X.shape[0] - 2

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    @property
    def specified(self) -> np.ndarray:
        return ~np.isnan(self.X)


def _validate_contiguous(utt: str, phones: list[Phone]) -> None:
    if not phones:
        raise AlignmentError(f"{utt}: empty segmentation")
    prev_end = None
    for ph in phones:
        if ph.start < -_TIME_EPS:
            raise AlignmentError(f"{utt}: negative start time {ph.start} for {ph.label!r}")
        if ph.end <= ph.start:
            raise AlignmentError(
                f"{utt}: empty or inverted interval [{ph.start}, {ph.end}] for {ph.label!r}"
            )
        if prev_end is not None and abs(ph.start - prev_end) > _TIME_EPS:
            raise AlignmentError(
                f"{utt}: intervals not contiguous at t={prev_end} vs {ph.start}"
            )
        prev_end = ph.end


def parse_lab(path, utterance_id: str | None = None) -> PhoneSegmentation:
    """Parse a whitespace-separated `start end label` alignment file."""
    path = _Path(path)
    utt = utterance_id or path.stem
    phones = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3:
            raise AlignmentError(f"{path}:{i}: expected 'start end label'")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise AlignmentError(f"{path}:{i}: bad time field") from exc
        phones.append(Phone(" ".join(parts[2:]), start, end))
    _validate_contiguous(utt, phones)
    return PhoneSegmentation(utt, tuple(phones))


_TG_NUM = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def parse_textgrid(path, utterance_id: str | None = None) -> PhoneSegmentation:
    """Parse the first interval tier of a Praat TextGrid (long or short form)."""
    path = _Path(path)
    utt = utterance_id or path.stem
    text = path.read_text(encoding="utf-8", errors="replace")
    if "IntervalTier" not in text:
        raise AlignmentError(f"{path}: no interval tier found")
    # Cut to the first interval tier: from its declaration to the next tier
    # declaration (or EOF).
    tier_starts = [m.start() for m in re.finditer(r'"IntervalTier"', text)]
    body = text[tier_starts[0]:] if len(tier_starts) == 1 else text[tier_starts[0]:tier_starts[1]]
    phones = []
    if re.search(r"intervals\s*\[", body):
        # Long form: xmin/xmax/text attributes per interval.
        blocks = re.split(r"intervals\s*\[\d+\]\s*:", body)[1:]
        for blk in blocks:
            xmin = re.search(r"xmin\s*=\s*(" + _TG_NUM.pattern + ")", blk)
            xmax = re.search(r"xmax\s*=\s*(" + _TG_NUM.pattern + ")", blk)
            label = re.search(r'text\s*=\s*"([^"]*)"', blk)
            if not (xmin and xmax and label is not None):
                raise AlignmentError(f"{path}: malformed interval block")
            phones.append(Phone(label.group(1).strip(), float(xmin.group(1)), float(xmax.group(1))))
    else:
        # Short form: name, xmin, xmax, size, then start/end/"label" triples.
        lines = [ln.strip() for ln in body.splitlines() if ln.strip()]
        vals: list[str] = []
        for ln in lines[1:]:  # skip the "IntervalTier" line itself
            vals.append(ln)
        # vals: tier name, tier xmin, tier xmax, n, then triples
        if len(vals) < 4:
            raise AlignmentError(f"{path}: truncated short-form tier")
        try:
            n = int(vals[3])
        except ValueError as exc:
            raise AlignmentError(f"{path}: bad interval count") from exc
        triples = vals[4 : 4 + 3 * n]
        if len(triples) != 3 * n:
            raise AlignmentError(f"{path}: expected {n} intervals")
        for i in range(n):
            start = float(triples[3 * i])
            end = float(triples[3 * i + 1])
            label = triples[3 * i + 2].strip().strip('"')
            phones.append(Phone(label, start, end))
    if not phones:
        raise AlignmentError(f"{path}: empty tier")
    _validate_contiguous(utt, phones)
    return PhoneSegmentation(utt, tuple(phones))


def parse_alignment(path, fmt: str | None = None, utterance_id: str | None = None) -> PhoneSegmentation:
    """Parse an alignment file; format inferred from the extension if omitted."""
    path = _Path(path)
    if fmt is None:
        fmt = "textgrid" if path.suffix.lower() == ".textgrid" else "lab"
    if fmt == "lab":
        return parse_lab(path, utterance_id)
    if fmt == "textgrid":
        return parse_textgrid(path, utterance_id)
    raise AlignmentError(f"unknown alignment format {fmt!r}")


def is_silence(label: str) -> bool:
    return label.strip().lower() in SILENCE_LABELS


def trim_and_filter(
    seg: PhoneSegmentation, silence_labels: frozenset[str] | None = None
) -> PhoneSegmentation | None:
    """Strip boundary silences, re-timing the remainder to start at zero.

    Returns None (rejection) when silence flanks only one side of the
    utterance, or nothing survives the trim.  Segmentations without any
    boundary silence are returned unchanged, which makes the operation
    idempotent on its own output.
    """
    sils = silence_labels if silence_labels is not None else SILENCE_LABELS

    def _sil(ph: Phone) -> bool:
        return ph.label.strip().lower() in sils

    phones = seg.phones
    lead = 0
    while lead < len(phones) and _sil(phones[lead]):
        lead += 1
    trail = 0
    while trail < len(phones) - lead and _sil(phones[len(phones) - 1 - trail]):
        trail += 1
    if lead == 0 and trail == 0:
        return seg
    if lead == 0 or trail == 0:
        return None  # speech runs into exactly one utterance boundary
    kept = phones[lead : len(phones) - trail]
    if not kept:
        return None
    shift = kept[0].start
    moved = tuple(Phone(p.label, p.start - shift, p.end - shift) for p in kept)
    return PhoneSegmentation(seg.utterance_id, moved, offset=seg.offset + shift)


def build_featural(seg: PhoneSegmentation, table: FeatureTable) -> FeaturalSegmentation:
    """Replace phones with feature targets and add the zero boundary rows."""
    if len(seg) == 0:
        raise AlignmentError(f"{seg.utterance_id}: cannot build targets from empty segmentation")
    k = len(seg)
    d = table.dimension
    X = np.zeros((k + 2, d))
    Y = np.zeros((k + 2, 2))
    for i, ph in enumerate(seg.phones, start=1):
        X[i] = encode_target(table, ph.label)
        Y[i] = (ph.start, ph.end)
    Y[0] = (0.0, 0.0)
    Y[k + 1] = (seg.phones[-1].end, seg.phones[-1].end)
    t = Y.mean(axis=1)
    if not np.all(np.diff(t) > 0):
        raise AlignmentError(f"{seg.utterance_id}: midpoint timings are not strictly increasing")
    return FeaturalSegmentation(seg.utterance_id, X, Y, t, time_offset=seg.offset)
