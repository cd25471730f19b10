"""Freeze reference STOI values for the fixture pairs used in tests/test_metrics.py.

Requires the optional ``pystoi`` package (``pip install .[reference]``). Run
once from the repository root; the output is committed.
"""
import argparse
import json
from pathlib import Path

from chroma_se.fixtures import mix_at_snr, noise, synth_speech

# (speech seed, noise kind, SNR dB)
PAIRS = [
    (0, "white", 0), (1, "white", 10), (2, "pink", -5), (3, "pink", 5), (4, "babble", 0),
    (5, "babble", 10), (6, "white", -10), (7, "pink", 15), (8, "babble", -5), (9, "white", 20),
]
DURATION = 3.0


def make_pair(seed, kind, snr_db):
    clean = synth_speech(DURATION, seed=seed)
    noisy = mix_at_snr(clean, noise(kind, len(clean.samples), seed=100 + seed), snr_db)
    return clean, noisy


def main():
    # imported here so the tests can use make_pair without pystoi installed
    from pystoi import stoi as reference_stoi

    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="tests/data/stoi_golden.json")
    args = ap.parse_args()
    rows = []
    for seed, kind, snr_db in PAIRS:
        clean, noisy = make_pair(seed, kind, snr_db)
        value = reference_stoi(clean.samples, noisy.samples, clean.sample_rate, extended=False)
        rows.append({"seed": seed, "noise": kind, "snr_db": snr_db, "stoi": float(value)})
        print(f"seed={seed} {kind:6s} {snr_db:+3d} dB  stoi={value:.4f}")
    doc = {"duration_s": DURATION, "pairs": rows}
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
