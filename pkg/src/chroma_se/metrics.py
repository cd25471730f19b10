"""Objective evaluation: STOI, log-spectral distance, SNR and PESQ ingestion."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import resample_poly

from .dsp import AudioClip, StftParams, lps_from_magnitude, stft

log = logging.getLogger(__name__)

# STOI constants
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150
STOI_SEGMENT = 30  # frames, 384 ms
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0

SNR_CAP = 99.0
PESQ_RANGE = (-0.5, 4.5)


class ExternalScoreError(ValueError):
    pass


# ---------------------------------------------------------------------------
# STOI

def _hann(n):
    # symmetric Hann without the zero end points
    return np.hanning(n + 2)[1:-1]


def _frames(x, n, hop):
    count = 1 + (len(x) - n) // hop
    return np.lib.stride_tricks.sliding_window_view(x, n)[::hop][:count]


def _remove_silent_frames(x, y, dyn_range, n, hop):
    w = _hann(n)
    xf = _frames(x, n, hop) * w
    yf = _frames(y, n, hop) * w
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + np.finfo(float).eps)
    keep = (energy.max() - dyn_range - energy) < 0
    xf, yf = xf[keep], yf[keep]
    length = (len(xf) - 1) * hop + n if len(xf) else 0
    xs, ys = np.zeros(length), np.zeros(length)
    for i in range(len(xf)):
        xs[i * hop:i * hop + n] += xf[i]
        ys[i * hop:i * hop + n] += yf[i]
    return xs, ys


def third_octave_bands(fs=STOI_FS, nfft=STOI_NFFT, n_bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    """Band-assignment matrix ``(n_bands, nfft//2+1)`` and centre frequencies."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    cf = min_freq * 2.0 ** (np.arange(n_bands) / 3)
    lo = cf * 2.0 ** (-1 / 6)
    hi = cf * 2.0 ** (1 / 6)
    obm = np.zeros((n_bands, len(f)))
    for k in range(n_bands):
        a = np.argmin((f - lo[k]) ** 2)
        b = np.argmin((f - hi[k]) ** 2)
        obm[k, a:b] = 1.0
    return obm, cf


def _band_envelopes(x, obm):
    spec = np.fft.rfft(_frames(x, STOI_FRAME, STOI_FRAME // 2) * _hann(STOI_FRAME), n=STOI_NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # (bands, frames)


def stoi(clean, processed, fs: int | None = None) -> float:
    """Short-time objective intelligibility of ``processed`` against ``clean``.

    Steps: resample to 10 kHz, drop frames more than 40 dB below the loudest
    clean frame, one-third-octave envelopes (15 bands from 150 Hz), 30-frame
    segments with scaling and clipping of the processed envelope, then the
    mean per-band correlation.
    """
    x = clean.samples if isinstance(clean, AudioClip) else np.asarray(clean, dtype=np.float64)
    y = processed.samples if isinstance(processed, AudioClip) else np.asarray(processed, dtype=np.float64)
    if fs is None:
        fs = clean.sample_rate if isinstance(clean, AudioClip) else None
        if fs is None:
            raise ValueError("sample rate required")
    if fs < 10000:
        raise ValueError(f"STOI needs fs >= 10 kHz, got {fs}")
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    if fs != STOI_FS:
        g = math.gcd(STOI_FS, fs)
        x = resample_poly(x, STOI_FS // g, fs // g)
        y = resample_poly(y, STOI_FS // g, fs // g)
    x, y = _remove_silent_frames(x, y, STOI_DYN_RANGE, STOI_FRAME, STOI_FRAME // 2)
    if len(x) < STOI_FRAME:
        raise ValueError("signal shorter than one STOI frame after silence removal")
    obm, _ = third_octave_bands()
    xb = _band_envelopes(x, obm)
    yb = _band_envelopes(y, obm)
    n_frames = xb.shape[1]
    if n_frames < STOI_SEGMENT:
        raise ValueError(
            f"only {n_frames} frames after silence removal; need {STOI_SEGMENT} for one 384 ms segment")
    xs = np.lib.stride_tricks.sliding_window_view(xb, STOI_SEGMENT, axis=1)  # (bands, segs, N)
    ys = np.lib.stride_tricks.sliding_window_view(yb, STOI_SEGMENT, axis=1)
    eps = np.finfo(float).eps
    alpha = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + eps)
    clip = 1 + 10 ** (-STOI_BETA / 20)
    yp = np.minimum(ys * alpha, xs * clip)
    xc = xs - xs.mean(axis=2, keepdims=True)
    yc = yp - yp.mean(axis=2, keepdims=True)
    xc /= np.linalg.norm(xc, axis=2, keepdims=True) + eps
    yc /= np.linalg.norm(yc, axis=2, keepdims=True) + eps
    return float(np.mean(np.sum(xc * yc, axis=2)))


# ---------------------------------------------------------------------------
# log-spectral distance

def log_spectral_distance(ref_tf, est_tf) -> float:
    """Mean over frames of the per-frame RMS difference; inputs are ``(T, F)``."""
    a = np.asarray(ref_tf, dtype=np.float64)
    b = np.asarray(est_tf, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("expected a 2-D (time, frequency) matrix")
    d = a - b
    return float(np.mean(np.sqrt(np.mean(d * d, axis=1))))


def lsd_metric(ref_lps, est_lps) -> float:
    """LSD between two ``(F, T)`` LPS matrices."""
    a = np.asarray(getattr(ref_lps, "values", ref_lps))
    b = np.asarray(getattr(est_lps, "values", est_lps))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return log_spectral_distance(a.T, b.T)


def clip_lsd(clean: AudioClip, est: AudioClip, params: StftParams = StftParams()) -> float:
    n = min(len(clean), len(est))
    a = lps_from_magnitude(stft(AudioClip(clean.samples[:n], clean.sample_rate), params).magnitude)
    b = lps_from_magnitude(stft(AudioClip(est.samples[:n], est.sample_rate), params).magnitude)
    return lsd_metric(a, b)


# ---------------------------------------------------------------------------
# SNR family

def _trimmed(ref, est):
    r = ref.samples if isinstance(ref, AudioClip) else np.asarray(ref, dtype=np.float64)
    e = est.samples if isinstance(est, AudioClip) else np.asarray(est, dtype=np.float64)
    n = min(len(r), len(e))
    return r[:n], e[:n]


def snr(ref, est) -> float:
    """Global SNR in dB; ``inf`` when the estimate is exact."""
    r, e = _trimmed(ref, est)
    sig = np.sum(r * r)
    if sig == 0:
        raise ValueError("reference has zero energy")
    err = np.sum((r - e) ** 2)
    if err == 0:
        return math.inf
    return float(10 * np.log10(sig / err))


def seg_snr(ref, est, frame: int = 256, lo: float = -10.0, hi: float = 35.0) -> float:
    """Mean of per-frame SNRs (non-overlapping frames), each clamped to ``[lo, hi]``."""
    r, e = _trimmed(ref, est)
    if not np.any(r):
        raise ValueError("reference has zero energy")
    n_frames = len(r) // frame
    if n_frames == 0:
        raise ValueError(f"signal shorter than one {frame}-sample frame")
    rf = r[: n_frames * frame].reshape(n_frames, frame)
    ef = e[: n_frames * frame].reshape(n_frames, frame)
    sig = np.sum(rf ** 2, axis=1)
    err = np.sum((rf - ef) ** 2, axis=1)
    tiny = np.finfo(float).tiny
    with np.errstate(divide="ignore", over="ignore"):
        per = 10 * np.log10(np.maximum(sig, tiny) / np.maximum(err, tiny))
    return float(np.mean(np.clip(per, lo, hi)))


def table_snr(value: float) -> float:
    return min(value, SNR_CAP)


# ---------------------------------------------------------------------------
# reports

@dataclass
class MetricReport:
    clip_id: str
    stoi: float
    stoi_raw: float
    lsd: float
    snr: float
    seg_snr: float
    pesq: float | None = None

    def __post_init__(self):
        if not 0 <= self.stoi <= 1:
            raise ValueError("reported STOI must lie in [0, 1]")
        if self.pesq is not None and not PESQ_RANGE[0] <= self.pesq <= PESQ_RANGE[1]:
            raise ValueError(f"PESQ {self.pesq} outside {PESQ_RANGE}")

    def row(self) -> dict:
        d = asdict(self)
        d["snr"] = table_snr(d["snr"])
        return d


def evaluate_clip(clip_id: str, clean: AudioClip, processed: AudioClip, pesq: float | None = None) -> MetricReport:
    raw = stoi(clean, processed)
    return MetricReport(
        clip_id=clip_id,
        stoi=min(max(raw, 0.0), 1.0),
        stoi_raw=raw,
        lsd=clip_lsd(clean, processed),
        snr=snr(clean, processed),
        seg_snr=seg_snr(clean, processed),
        pesq=pesq,
    )


def import_external_scores(path) -> dict[str, float]:
    """Read ``clip_id,pesq`` rows; malformed or out-of-range rows raise with line numbers."""
    path = os.fspath(path)
    scores: dict[str, float] = {}
    problems = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["clip_id", "pesq"]:
            raise ExternalScoreError(f"{path}:1: expected header 'clip_id,pesq', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2 or not row[0].strip():
                problems.append(f"{path}:{lineno}: malformed row {row}")
                continue
            clip_id, raw = row[0].strip(), row[1].strip()
            try:
                value = float(raw)
            except ValueError:
                problems.append(f"{path}:{lineno}: PESQ value {raw!r} is not a number")
                continue
            if not (PESQ_RANGE[0] <= value <= PESQ_RANGE[1]):
                problems.append(f"{path}:{lineno}: PESQ {value} outside [{PESQ_RANGE[0]}, {PESQ_RANGE[1]}]")
                continue
            if clip_id in scores:
                log.warning("%s:%d: duplicate clip_id %r, keeping the later value", path, lineno, clip_id)
            scores[clip_id] = value
    if problems:
        raise ExternalScoreError("\n".join(problems))
    return scores


def attach_pesq(reports, scores: dict[str, float]):
    for r in reports:
        if r.clip_id in scores:
            r.pesq = scores[r.clip_id]
    return reports


GAIN_METRICS = ("stoi", "lsd", "snr", "seg_snr", "pesq")


def mean_metrics(reports) -> dict[str, float | None]:
    out = {}
    for m in GAIN_METRICS:
        vals = [getattr(r, m) for r in reports]
        if m == "snr":
            vals = [table_snr(v) for v in vals]
        out[m] = None if any(v is None for v in vals) or not vals else float(np.mean(vals))
    return out


def gain_report(unprocessed, processed) -> dict[str, float | None]:
    """Mean per-metric deltas (processed minus unprocessed) over matching clip ids."""
    a = {r.clip_id: r for r in unprocessed}
    b = {r.clip_id: r for r in processed}
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))
        raise ValueError(f"clip-id sets differ: {missing}")
    ids = sorted(a)
    ma = mean_metrics([a[i] for i in ids])
    mb = mean_metrics([b[i] for i in ids])
    return {m: None if ma[m] is None or mb[m] is None else mb[m] - ma[m] for m in GAIN_METRICS}


def format_gain_table(rows: dict[str, dict]) -> str:
    """Plain-text table in the shape of a model-vs-gain comparison."""
    cols = ["ΔPESQ", "ΔSTOI", "ΔLSD", "ΔSNR", "ΔsegSNR"]
    keys = ["pesq", "stoi", "lsd", "snr", "seg_snr"]
    lines = ["Gain over unprocessed data\t" + "\t".join(cols)]
    for name, g in rows.items():
        cells = ["NA" if g.get(k) is None else f"{g[k]:.4f}" for k in keys]
        lines.append(name + "\t" + "\t".join(cells))
    return "\n".join(lines)


def write_reports_csv(reports, path) -> None:
    fields = ["clip_id", "stoi", "stoi_raw", "lsd", "snr", "seg_snr", "pesq"]
    with open(os.fspath(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
