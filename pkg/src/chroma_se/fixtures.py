"""Deterministic synthetic audio: speech-like utterances, tones and noises.

The speech generator is a small source-filter synthesizer: a glottal pulse
train with a drifting pitch contour drives three formant resonators whose
targets move between vowels, interleaved with fricative noise bursts and
pauses. It is not intelligible speech, but it has the harmonic, formant and
on/off structure that spectrogram denoising and STOI respond to.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .dsp import SAMPLE_RATE, AudioClip

VOWELS = {
    "a": (730, 1090, 2440),
    "i": (270, 2290, 3010),
    "u": (300, 870, 2240),
    "e": (530, 1840, 2480),
    "o": (570, 840, 2410),
    "ae": (660, 1720, 2410),
}
BANDWIDTHS = (80, 110, 160)
BLOCK = 80


def _resonator(freq, bw, rate):
    r = np.exp(-np.pi * bw / rate)
    theta = 2 * np.pi * freq / rate
    a = np.array([1.0, -2 * r * np.cos(theta), r * r])
    return np.array([a.sum()]), a  # unit gain at DC


def _events(duration, rng):
    """Alternating syllables and pauses as (start_s, stop_s, kind)."""
    t = rng.uniform(0.05, 0.2)
    out = []
    while t < duration:
        kind = "fricative" if rng.uniform() < 0.2 else "voiced"
        length = rng.uniform(0.06, 0.14) if kind == "fricative" else rng.uniform(0.15, 0.4)
        out.append((t, min(t + length, duration), kind))
        t += length
        if rng.uniform() < 0.55:
            t += rng.uniform(0.04, 0.3)
    return out


def _envelope(n, rate, attack=0.02):
    env = np.ones(n)
    k = min(int(attack * rate), n // 2)
    if k:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        env[:k] = ramp
        env[n - k:] = ramp[::-1]
    return env


def synth_speech(duration: float, seed: int = 0, rate: int = SAMPLE_RATE, peak: float = 0.5) -> AudioClip:
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate

    # pitch contour: speaker base, slow declination and wobble
    base = rng.uniform(95, 210)
    f0 = base * (1 + 0.12 * np.sin(2 * np.pi * rng.uniform(0.3, 0.8) * t + rng.uniform(0, 6))
                 - 0.05 * (t % 2.5) / 2.5)
    phase = np.cumsum(f0 / rate)
    pulses = np.zeros(n)
    pulses[np.flatnonzero(np.diff(np.floor(phase), prepend=0.0) > 0)] = 1.0
    # glottal spectral tilt
    source = lfilter([1.0], [1.0, -1.9, 0.9025], pulses)
    source = lfilter([1.0, -1.0], [1.0], source)  # lip radiation

    voiced_gate = np.zeros(n)
    fric_gate = np.zeros(n)
    formants = np.zeros((3, n))
    names = list(VOWELS)
    prev = np.array(VOWELS[names[rng.integers(len(names))]], dtype=float)
    for start, stop, kind in _events(duration, rng):
        i0, i1 = int(start * rate), int(stop * rate)
        if i1 <= i0:
            continue
        env = _envelope(i1 - i0, rate) * rng.uniform(0.4, 1.0)
        if kind == "voiced":
            voiced_gate[i0:i1] = np.maximum(voiced_gate[i0:i1], env)
            target = np.array(VOWELS[names[rng.integers(len(names))]], dtype=float)
            w = np.linspace(0, 1, i1 - i0)[None, :]
            formants[:, i0:i1] = prev[:, None] * (1 - w) + target[:, None] * w
            prev = target
        else:
            fric_gate[i0:i1] = np.maximum(fric_gate[i0:i1], env)
    # hold the last formant targets through gaps so the filters stay stable
    for k in range(3):
        f = formants[k]
        idx = np.where(f > 0, np.arange(n), 0)
        np.maximum.accumulate(idx, out=idx)
        formants[k] = np.where(f[idx] > 0, f[idx], VOWELS["a"][k])

    excitation = source * voiced_gate
    excitation /= np.max(np.abs(excitation)) + 1e-12
    voiced = excitation
    for k in range(3):
        out = np.zeros(n)
        zi = np.zeros(2)
        for s in range(0, n, BLOCK):
            b, a = _resonator(formants[k, s], BANDWIDTHS[k], rate)
            out[s:s + BLOCK], zi = lfilter(b, a, voiced[s:s + BLOCK], zi=zi)
        # parallel-ish mix keeps upper formants audible
        voiced = out if k == 0 else voiced + 0.5 * out
    voiced /= np.max(np.abs(voiced)) + 1e-12

    hiss = sosfilt(butter(4, [2500, min(7000, rate / 2 - 100)], "bandpass", fs=rate, output="sos"),
                   rng.standard_normal(n))
    hiss = hiss / (np.max(np.abs(hiss)) + 1e-12) * fric_gate * 0.35

    x = voiced + hiss
    x = x / (np.max(np.abs(x)) + 1e-12) * peak
    # faint room floor so silent bins stay above the log floor
    x += 10 ** (-65 / 20) * peak * rng.standard_normal(n)
    return AudioClip(x, rate)


def synth_tone_speech(duration: float, seed: int = 0, rate: int = SAMPLE_RATE, peak: float = 0.5) -> AudioClip:
    """Gated harmonic tone complexes: a simpler stand-in for voiced speech."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    x = np.zeros(n)
    for start, stop, _ in _events(duration, rng):
        i0, i1 = int(start * rate), int(stop * rate)
        f0 = rng.uniform(120, 300)
        env = _envelope(i1 - i0, rate)
        seg = sum(np.sin(2 * np.pi * f0 * h * t[i0:i1]) / h for h in range(1, 8) if f0 * h < rate / 2)
        x[i0:i1] += env * seg
    x = x / (np.max(np.abs(x)) + 1e-12) * peak
    x += 10 ** (-65 / 20) * peak * rng.standard_normal(n)
    return AudioClip(x, rate)


def noise(kind: str, n: int, seed: int = 0, rate: int = SAMPLE_RATE) -> np.ndarray:
    """Unit-RMS noise: ``white``, ``pink`` (1/f power) or ``babble`` (modulated low-pass)."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n)
    if kind == "white":
        x = w
    elif kind == "pink":
        spec = np.fft.rfft(w)
        f = np.fft.rfftfreq(n, 1 / rate)
        f[0] = f[1]
        x = np.fft.irfft(spec / np.sqrt(f), n)
    elif kind == "babble":
        x = sosfilt(butter(4, [200, 3000], "bandpass", fs=rate, output="sos"), w)
        mod = sosfilt(butter(2, 4, fs=rate, output="sos"), rng.standard_normal(n))
        x *= 1 + 2 * np.abs(mod) / (np.std(mod) + 1e-12)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return x / np.sqrt(np.mean(x ** 2))


def mix_at_snr(clean: AudioClip, noise_samples: np.ndarray, snr_db: float) -> AudioClip:
    s = clean.samples
    v = np.asarray(noise_samples[: len(s)], dtype=np.float64)
    gain = np.sqrt(np.sum(s ** 2) / (np.sum(v ** 2) * 10 ** (snr_db / 10)))
    return AudioClip(s + gain * v, clean.sample_rate)


def write_corpus(root, n_files: int = 4, duration: float = 5.0, seed: int = 0, noise_kind: str = "white",
                 snr_db: float = 5.0, rate: int = SAMPLE_RATE, source: str = "speech", splits=("train",)):
    """Write matched ``clean``/``noisy`` WAV folders under ``root``.

    With a single split the layout is flat (``root/clean``, ``root/noisy``);
    otherwise each split gets its own ``root/<split>/{clean,noisy}`` pair.
    Returns the list of clean file paths.
    """
    from pathlib import Path

    from .dsp import write_wav

    gen = {"speech": synth_speech, "tone": synth_tone_speech}[source]
    root = Path(root)
    written = []
    for s_idx, split in enumerate(splits):
        base = root if len(splits) == 1 else root / split
        (base / "clean").mkdir(parents=True, exist_ok=True)
        (base / "noisy").mkdir(parents=True, exist_ok=True)
        for k in range(n_files):
            fseed = seed * 1000 + s_idx * 100 + k
            clean = gen(duration, seed=fseed, rate=rate)
            noisy = mix_at_snr(clean, noise(noise_kind, len(clean), seed=fseed + 50_000, rate=rate), snr_db)
            # keep the mixture inside 16-bit full scale
            peak = max(np.max(np.abs(noisy.samples)), 1e-12)
            g = min(1.0, 0.9 / peak)
            name = f"utt_{k:03d}.wav"
            write_wav(AudioClip(clean.samples * g, rate), base / "clean" / name)
            write_wav(AudioClip(noisy.samples * g, rate), base / "noisy" / name)
            written.append(base / "clean" / name)
    return written
