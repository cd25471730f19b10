"""Audio I/O and STFT-domain math.

Spectrogram matrices are stored frequency-major: shape ``(F, T)`` with row 0
the DC bin and the last row the Nyquist bin.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
SAMPLE_RATE = 16000
SEGMENT_LEN = 65920  # 4.12 s at 16 kHz -> 256 frames


class WavError(Exception):
    pass


class WavNotFoundError(WavError, FileNotFoundError):
    pass


class MalformedWavError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftParams:
    frame_len: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len % 2:
            raise ValueError(f"frame_len must be positive and even, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ValueError(f"hop must satisfy 0 < hop <= frame_len, got {self.hop}")

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def window(self) -> np.ndarray:
        # periodic Hann: sums to a constant at 50% overlap
        n = np.arange(self.frame_len)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.frame_len)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1


@dataclass
class ComplexSpectrogram:
    magnitude: np.ndarray
    phase: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.magnitude = np.asarray(self.magnitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.magnitude.shape != self.phase.shape:
            raise ValueError(
                f"magnitude {self.magnitude.shape} and phase {self.phase.shape} differ in shape")
        if self.magnitude.ndim != 2 or self.magnitude.shape[0] != self.params.n_bins:
            raise ValueError(
                f"expected {self.params.n_bins} one-sided rows, got shape {self.magnitude.shape}")
        if np.any(self.magnitude < 0):
            raise ValueError("magnitude must be non-negative")

    @property
    def n_frames(self) -> int:
        return self.magnitude.shape[1]

    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)


@dataclass
class LpsMatrix:
    values: np.ndarray
    bin_hz: float = SAMPLE_RATE / 512
    frame_s: float = 256 / SAMPLE_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"LPS must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("LPS values must be finite")

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "LpsMatrix":
        return LpsMatrix(values, bin_hz=self.bin_hz, frame_s=self.frame_s)


# ---------------------------------------------------------------------------
# WAV I/O

def read_wav(path) -> AudioClip:
    """Read a PCM WAV file (16-bit int or 32-bit float); extra channels are dropped."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise WavNotFoundError(f"no such WAV file: {path}")
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError, OSError) as exc:
        raise MalformedWavError(f"{path}: malformed RIFF/WAV data ({exc})") from exc
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(
            f"{path}: unsupported sample encoding {data.dtype}; need 16-bit PCM or 32-bit float")
    return AudioClip(samples, rate)


def write_wav(clip: AudioClip, path) -> int:
    """Write 16-bit PCM. Returns the number of samples hard-clipped to [-1, 1]."""
    if len(clip) == 0:
        raise ValueError("cannot write an empty clip")
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise OSError(f"destination directory is not writable: {parent}")
    x = clip.samples
    n_clipped = int(np.count_nonzero((x > 1.0) | (x < -1.0)))
    if n_clipped:
        log.warning("%s: %d samples clipped to [-1, 1]", path, n_clipped)
    pcm = np.clip(np.round(np.clip(x, -1.0, 1.0) * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, clip.sample_rate, pcm)
    return n_clipped


# ---------------------------------------------------------------------------
# clip manipulation

def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    if target_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_hz}")
    if target_hz == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    ratio = Fraction(int(target_hz), clip.sample_rate)
    y = resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    return AudioClip(y, target_hz)


def concat(clips) -> AudioClip:
    clips = list(clips)
    if not clips:
        raise ValueError("nothing to concatenate")
    rates = {c.sample_rate for c in clips}
    if len(rates) > 1:
        raise ValueError(f"mixed sample rates: {sorted(rates)}")
    return AudioClip(np.concatenate([c.samples for c in clips]), clips[0].sample_rate)


def segment(clip: AudioClip, seg_len: int = SEGMENT_LEN, pad: bool = False):
    """Cut into non-overlapping ``seg_len`` pieces.

    Returns ``(segments, remainder)`` where ``remainder`` is the number of
    trailing samples that did not fill a segment. With ``pad=True`` that tail
    is zero-padded into one extra segment instead of being dropped.
    """
    if seg_len <= 0:
        raise ValueError("seg_len must be positive")
    n_full, remainder = divmod(len(clip), seg_len)
    x = clip.samples
    segs = [AudioClip(x[k * seg_len:(k + 1) * seg_len], clip.sample_rate) for k in range(n_full)]
    if remainder:
        log.info("segment: %d trailing samples %s", remainder, "zero-padded" if pad else "dropped")
        if pad:
            tail = np.zeros(seg_len)
            tail[:remainder] = x[n_full * seg_len:]
            segs.append(AudioClip(tail, clip.sample_rate))
    return segs, remainder


# ---------------------------------------------------------------------------
# STFT

def stft(clip: AudioClip, params: StftParams = StftParams()) -> ComplexSpectrogram:
    """Hann-windowed one-sided STFT, frames starting at sample 0 (no centering)."""
    n_frames = params.n_frames(len(clip))
    if n_frames == 0:
        raise ValueError(f"clip of {len(clip)} samples is shorter than one frame ({params.frame_len})")
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, params.frame_len)[::params.hop]
    spec = np.fft.rfft(frames * params.window(), axis=1).T
    return ComplexSpectrogram(np.abs(spec), np.angle(spec), params, clip.sample_rate)


def _overlap_add(frames: np.ndarray, params: StftParams) -> np.ndarray:
    win = params.window()
    n_frames = frames.shape[0]
    length = (n_frames - 1) * params.hop + params.frame_len
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(n_frames):
        sl = slice(t * params.hop, t * params.hop + params.frame_len)
        out[sl] += frames[t] * win
        norm[sl] += win ** 2
    # the first sample of a periodic Hann frame carries zero weight
    nz = norm > 1e-12
    out[nz] /= norm[nz]
    return out


def istft(spec: ComplexSpectrogram) -> AudioClip:
    """Weighted overlap-add inverse of :func:`stft`.

    Synthesis reuses the analysis window and divides by the summed squared
    window, so reconstruction is exact wherever that sum is positive.
    """
    if spec.magnitude.shape != spec.phase.shape:
        raise ValueError("magnitude and phase shapes differ")
    frames = np.fft.irfft(spec.complex().T, n=spec.params.frame_len, axis=1)
    return AudioClip(_overlap_add(frames, spec.params), spec.sample_rate)


# ---------------------------------------------------------------------------
# log-power transform pair

def lps_from_magnitude(mag, floor: float = LOG_FLOOR, params: StftParams = StftParams(),
                       sample_rate: int = SAMPLE_RATE) -> LpsMatrix:
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0):
        raise ValueError("magnitude must be non-negative")
    return LpsMatrix(np.log(np.maximum(mag * mag, floor)),
                     bin_hz=sample_rate / params.frame_len,
                     frame_s=params.hop / sample_rate)


def magnitude_from_lps(lps) -> np.ndarray:
    values = lps.values if isinstance(lps, LpsMatrix) else np.asarray(lps, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("LPS values must be finite")
    return np.sqrt(np.exp(values))


def _rows(m):
    return m.values if isinstance(m, LpsMatrix) else np.asarray(m)


def _like(template, values):
    return template.with_values(values) if isinstance(template, LpsMatrix) else values


def crop_nyquist_row(lps):
    """Drop the 257th (Nyquist) row so the matrix height is a power of two."""
    v = _rows(lps)
    if v.shape[0] != 257:
        raise ValueError(f"expected 257 rows, got {v.shape[0]}")
    return _like(lps, v[:256].copy())


def restore_nyquist_row(lps):
    """Re-append a Nyquist row by duplicating row 256."""
    v = _rows(lps)
    if v.shape[0] != 256:
        raise ValueError(f"expected 256 rows, got {v.shape[0]}")
    return _like(lps, np.vstack([v, v[-1:]]))


def mirror_negative_frequencies(mag_one_sided, n_bins: int = 257) -> np.ndarray:
    """Full two-sided magnitude from the one-sided half (even symmetry about DC).

    Rows ``n_bins..`` are rows ``n_bins-2..1`` reversed; DC and Nyquist are
    not duplicated, giving ``2 * (n_bins - 1)`` rows.
    """
    m = np.asarray(mag_one_sided)
    if m.ndim != 2 or m.shape[0] != n_bins:
        raise ValueError(f"expected {n_bins} rows (DC..Nyquist), got shape {m.shape}")
    return np.vstack([m, m[-2:0:-1]])


def reconstruct(mag_est, noisy_phase, params: StftParams = StftParams(),
                sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Combine an estimated magnitude with the noisy phase and invert.

    The two-sided spectrum is built from the mirrored magnitude and the
    odd-symmetric phase, then each frame goes through a full inverse FFT.
    """
    mag_est = np.asarray(mag_est, dtype=np.float64)
    noisy_phase = np.asarray(noisy_phase, dtype=np.float64)
    if mag_est.shape != noisy_phase.shape:
        raise ValueError(f"magnitude {mag_est.shape} and phase {noisy_phase.shape} differ in shape")
    full_mag = mirror_negative_frequencies(mag_est, params.n_bins)
    full_phase = np.vstack([noisy_phase, -noisy_phase[-2:0:-1]])
    # DC and Nyquist bins of a real signal are real; keep only their real part
    full = full_mag * np.exp(1j * full_phase)
    full[0] = full[0].real
    full[params.n_bins - 1] = full[params.n_bins - 1].real
    frames = np.fft.ifft(full.T, axis=1).real
    return AudioClip(_overlap_add(frames, params), sample_rate)
