"""Batch commands over a persisted experiment manifest.

Every command reads and extends ``manifest.json`` in the experiment
directory. Paths inside the manifest are relative to that directory, and
each file the manifest references carries a SHA-256 hash that is checked
before the file is used again.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import plotting
from .codec import (ColorImage, DisplayRange, destandardize, encode_named, image_to_tensor, load_image,
                    pixel_dataset, save_image, standardize, tensor_to_image, to_color_image)
from .colormaps import NAMES, colormap
from .dsp import (SAMPLE_RATE, SEGMENT_LEN, AudioClip, LpsMatrix, StftParams, concat, crop_nyquist_row,
                  lps_from_magnitude, magnitude_from_lps, read_wav, reconstruct, resample, restore_nyquist_row,
                  segment, stft, write_wav)
from .metrics import (attach_pesq, evaluate_clip, format_gain_table, gain_report, import_external_scores,
                      mean_metrics, write_reports_csv)
from .regnet import GRAY_SIZES, RegnetTrainConfig, regnet_decode, regnet_init, regnet_load, regnet_save, regnet_train
from .unet import (OptimizerState, TrainRunConfig, UNetConfig, checkpoint_load, read_loss_curve, train_denoiser,
                   unet_build, unet_forward, write_loss_curve)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "chroma-se-manifest"
GRAY_1INPUT = "gray*"
TAIL_POLICIES = ("passthrough", "drop")
STORAGE_MODES = ("png", "jpeg")


class ManifestError(ValueError):
    pass


class PairingError(ValueError):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# manifest

@dataclass
class ExperimentManifest:
    root: str
    sample_rate: int = SAMPLE_RATE
    segment_len: int = SEGMENT_LEN
    frame_len: int = 512
    hop: int = 256
    log_floor: float = 1e-10
    display_range: list | None = None
    colormap: str | None = None
    seeds: dict = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)
    segments: dict = field(default_factory=dict)   # split -> {"clean": [rel], "noisy": [rel]}
    images: dict = field(default_factory=dict)     # colormap -> split -> {"clean": [rel], "noisy": [rel], "phase": [rel]}
    artifacts: dict = field(default_factory=dict)  # name -> rel
    inventory: dict = field(default_factory=dict)  # rel -> sha256
    version: int = 0
    history: list = field(default_factory=list)

    @property
    def path(self) -> Path:
        return Path(self.root) / MANIFEST_NAME

    @property
    def params(self) -> StftParams:
        return StftParams(self.frame_len, self.hop)

    @property
    def range(self) -> DisplayRange:
        if self.display_range is None:
            raise ManifestError("display range is unset; run 'prepare' first")
        return DisplayRange(*self.display_range)

    def abspath(self, rel) -> Path:
        return Path(self.root) / rel

    def track(self, rel) -> str:
        self.inventory[str(rel)] = sha256(self.abspath(rel))
        return str(rel)

    def verify(self, rels=None) -> None:
        """Raise if any referenced file is missing or its hash changed."""
        problems = []
        for rel in (self.inventory if rels is None else rels):
            if rel not in self.inventory:
                problems.append(f"{rel}: not in manifest inventory")
                continue
            p = self.abspath(rel)
            if not p.is_file():
                problems.append(f"{rel}: missing")
            elif sha256(p) != self.inventory[rel]:
                problems.append(f"{rel}: content changed since it was recorded")
        if problems:
            raise ManifestError("manifest integrity check failed:\n  " + "\n  ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("root")
        return {"format": MANIFEST_FORMAT, **d}

    def record(self, command: str, note: str = "") -> None:
        """Bump the version and append a history entry, then write to disk."""
        self.version += 1
        self.history.append({"version": self.version, "command": command, "note": note})
        self.save()

    def save(self) -> None:
        if self.path.exists():
            old = json.loads(self.path.read_text())
            prev = old.get("history", [])
            if self.history[:len(prev)] != prev:
                raise ManifestError(f"{self.path}: refusing to rewrite manifest history")
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.path)

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.is_file():
            raise ManifestError(f"no manifest at {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: corrupt manifest ({exc})") from exc
        if not isinstance(doc, dict) or doc.pop("format", None) != MANIFEST_FORMAT:
            raise ManifestError(f"{path}: not an experiment manifest")
        try:
            return cls(root=str(path.parent), **doc)
        except TypeError as exc:
            raise ManifestError(f"{path}: unexpected manifest fields ({exc})") from exc


# ---------------------------------------------------------------------------
# helpers

def _pmap(fn, items, workers: int = 1):
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))  # map preserves order


def _wav_names(d: Path) -> list:
    return sorted(p.name for p in d.iterdir() if p.suffix.lower() == ".wav") if d.is_dir() else []


def discover_corpus(corpus_dir) -> dict:
    """Find clean/noisy WAV folders; returns ``{split: (clean_dir, noisy_dir)}``.

    Accepted layouts: ``clean_trainset*_wav`` / ``noisy_trainset*_wav`` (and
    the ``testset`` counterparts), ``train/clean`` + ``train/noisy`` (and
    ``test/...``), or a flat ``clean/`` + ``noisy/`` pair.
    """
    root = Path(corpus_dir)
    if not root.is_dir():
        raise PairingError(f"corpus directory not found: {root}")
    found = {}
    for split in ("train", "test"):
        c = sorted(root.glob(f"clean_{split}set*_wav"))
        n = sorted(root.glob(f"noisy_{split}set*_wav"))
        if c and n:
            found[split] = (c[0], n[0])
        elif (root / split / "clean").is_dir() and (root / split / "noisy").is_dir():
            found[split] = (root / split / "clean", root / split / "noisy")
    if not found and (root / "clean").is_dir() and (root / "noisy").is_dir():
        found["train"] = (root / "clean", root / "noisy")
    if not found:
        raise PairingError(f"{root}: no clean/noisy WAV folders found")
    return found


def pair_files(clean_dir: Path, noisy_dir: Path) -> list:
    c, n = set(_wav_names(clean_dir)), set(_wav_names(noisy_dir))
    problems = [f"{clean_dir / name}: no noisy counterpart" for name in sorted(c - n)]
    problems += [f"{noisy_dir / name}: no clean counterpart" for name in sorted(n - c)]
    if problems:
        raise PairingError("unmatched clean/noisy files:\n  " + "\n  ".join(problems))
    return sorted(c)


def _load_at(path, rate) -> AudioClip:
    clip = read_wav(path)
    return clip if clip.sample_rate == rate else resample(clip, rate)


def segment_lps(clip: AudioClip, params: StftParams):
    """``(full 257-row LPS, phase)`` of one segment."""
    spec = stft(clip, params)
    return lps_from_magnitude(spec.magnitude, params=params, sample_rate=clip.sample_rate), spec.phase


def _segment_file(split, kind, k) -> str:
    return f"segments/{split}/{kind}/seg_{k:04d}.wav"


# ---------------------------------------------------------------------------
# prepare

def cmd_prepare(corpus_dir, out_dir, test_fraction: float = 0.0, sample_rate: int = SAMPLE_RATE,
                segment_len: int = SEGMENT_LEN, frame_len: int = 512, hop: int = 256,
                lo_pct: float = 0.1, hi_pct: float = 99.9) -> ExperimentManifest:
    """Resample, concatenate per split, cut into segments and fix the display range."""
    layout = discover_corpus(corpus_dir)
    pairs = {split: (cdir, ndir, pair_files(cdir, ndir)) for split, (cdir, ndir) in layout.items()}
    if not any(names for _, _, names in pairs.values()):
        raise PairingError(f"{corpus_dir}: corpus is empty")
    if "test" not in pairs and test_fraction > 0:
        cdir, ndir, names = pairs["train"]
        n_test = max(1, int(math.ceil(len(names) * test_fraction)))
        if n_test >= len(names):
            raise PairingError("test_fraction leaves no training files")
        pairs["train"] = (cdir, ndir, names[:-n_test])
        pairs["test"] = (cdir, ndir, names[-n_test:])

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = ExperimentManifest(root=str(out), sample_rate=sample_rate, segment_len=segment_len,
                             frame_len=frame_len, hop=hop)
    man.corpus = {"root": str(Path(corpus_dir).resolve()), "splits": {}}
    train_lps = []
    for split, (cdir, ndir, names) in sorted(pairs.items()):
        man.corpus["splits"][split] = {
            "clean_dir": str(cdir.resolve()), "noisy_dir": str(ndir.resolve()), "files": names,
            "hashes": {name: [sha256(cdir / name), sha256(ndir / name)] for name in names},
        }
        man.segments[split] = {}
        for kind, d in (("clean", cdir), ("noisy", ndir)):
            if not names:
                man.segments[split][kind] = []
                continue
            joined = concat([_load_at(d / name, sample_rate) for name in names])
            segs, remainder = segment(joined, segment_len)
            if remainder:
                log.info("%s/%s: %d trailing samples dropped", split, kind, remainder)
            rels = []
            (out / "segments" / split / kind).mkdir(parents=True, exist_ok=True)
            for k, seg in enumerate(segs):
                rel = _segment_file(split, kind, k)
                write_wav(seg, out / rel)
                rels.append(man.track(rel))
                if split == "train":
                    # statistics of what was written, after 16-bit rounding
                    lps, _ = segment_lps(read_wav(out / rel), man.params)
                    train_lps.append(crop_nyquist_row(lps).values)
            man.segments[split][kind] = rels
    if not train_lps:
        raise PairingError("training split is shorter than one segment")
    rng = DisplayRange.from_corpus(train_lps, lo_pct, hi_pct, floor=man.log_floor)
    man.display_range = [rng.lo, rng.hi]

    if man.path.exists():
        old = ExperimentManifest.load(man.path)
        same = (old.segments == man.segments and old.display_range == man.display_range
                and old.corpus == man.corpus
                and all(old.inventory.get(r) == h for r, h in man.inventory.items()))
        if same:
            log.info("prepare: corpus unchanged, manifest kept at version %d", old.version)
            return old
        man.version, man.history = old.version, list(old.history)
        man.record("prepare", "corpus re-prepared; downstream artifacts reset")
    else:
        n = {s: len(v["clean"]) for s, v in man.segments.items()}
        man.record("prepare", f"segments per split: {n}")
    return man


# ---------------------------------------------------------------------------
# spectrogram images

def _encode_job(args):
    root, rel, out_rel, name, rng, params, phase_rel = args
    clip = read_wav(Path(root) / rel)
    lps, phase = segment_lps(clip, params)
    img = encode_named(crop_nyquist_row(lps), name, rng)
    save_image(img, Path(root) / out_rel)
    if phase_rel:
        np.save(Path(root) / phase_rel, phase)
    return out_rel


def cmd_spectrograms(manifest: ExperimentManifest, name: str, workers: int = 1) -> dict:
    """Write one PNG per segment into parallel clean/noisy trees, plus noisy phases."""
    name = colormap(name).name
    rng = manifest.range
    manifest.verify([r for s in manifest.segments.values() for k in s.values() for r in k])
    entry = {}
    for split, kinds in sorted(manifest.segments.items()):
        entry[split] = {"clean": [], "noisy": [], "phase": []}
        jobs = []
        for kind in ("clean", "noisy"):
            d = Path("images") / name / split / kind
            manifest.abspath(d).mkdir(parents=True, exist_ok=True)
            (manifest.abspath("phase") / split).mkdir(parents=True, exist_ok=True)
            for rel in kinds[kind]:
                stem = Path(rel).stem
                phase_rel = f"phase/{split}/{stem}.npy" if kind == "noisy" else None
                jobs.append((manifest.root, rel, str(d / f"{stem}.png"), name, rng, manifest.params, phase_rel))
                if phase_rel:
                    entry[split]["phase"].append(phase_rel)
        for out_rel, job in zip(_pmap(_encode_job, jobs, workers), jobs):
            kind = Path(job[1]).parent.name
            entry[split][kind].append(manifest.track(out_rel))
        for rel in entry[split]["phase"]:
            manifest.track(rel)
        if [Path(p).name for p in entry[split]["clean"]] != [Path(p).name for p in entry[split]["noisy"]]:
            raise PairingError(f"{split}: clean and noisy image trees differ")
    manifest.images[name] = entry
    manifest.colormap = name
    manifest.record("spectrograms", f"colormap {name}")
    return entry


# ---------------------------------------------------------------------------
# regnet

def _clean_images_with_targets(manifest, name, split, n_images):
    """Encode ``n_images`` clean segments and pair them with their exact LPS."""
    rels = manifest.segments.get(split, {}).get("clean", [])
    if len(rels) < n_images:
        raise ValueError(f"need {n_images} clean {split} segments, manifest has {len(rels)}")
    manifest.verify(rels[:n_images])
    out = []
    for rel in rels[:n_images]:
        lps, _ = segment_lps(read_wav(manifest.abspath(rel)), manifest.params)
        cropped = crop_nyquist_row(lps)
        out.append((encode_named(cropped, name, manifest.range), cropped))
    return out


def train_regnet_for(manifest, name, n_images, cfg: RegnetTrainConfig, gray_1input=False, storage="png"):
    table_name = "gray" if gray_1input else colormap(name).name
    pairs = _clean_images_with_targets(manifest, table_name, "train", n_images)
    pairs = [(store_round_trip(img, storage), lps) for img, lps in pairs]
    data = pixel_dataset(pairs)
    if gray_1input:
        model, report = regnet_train(regnet_init(cfg.seed, GRAY_SIZES), data, cfg, rgb_columns=[0])
    else:
        model, report = regnet_train(regnet_init(cfg.seed), data, cfg)
    model.meta = {"colormap": GRAY_1INPUT if gray_1input else table_name,
                  "display_range": list(manifest.display_range), "n_images": n_images, "rows": len(data)}
    return model, report, data


def cmd_train_regnet(manifest: ExperimentManifest, name: str, n_images: int = 10, epochs: int = 1000,
                     seed: int = 0, holdout: float = 0.2, batch_size: int = 256, lr: float = 1e-3,
                     gray_1input: bool = False):
    """Fit a regnet on clean training pixels; writes the model, a report CSV and figures."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    cfg = RegnetTrainConfig(epochs=epochs, holdout=holdout, batch_size=batch_size, lr=lr, seed=seed)
    model, report, data = train_regnet_for(manifest, name, n_images, cfg, gray_1input)
    tag = "gray1" if gray_1input else colormap(name).name
    d = manifest.abspath("models")
    d.mkdir(exist_ok=True)
    rel = f"models/regnet_{tag}.json"
    regnet_save(model, manifest.abspath(rel))
    report_rel = f"models/regnet_{tag}_report.csv"
    with open(manifest.abspath(report_rel), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse"])
        for k, v in enumerate(report.loss_curve, start=1):
            w.writerow([k, repr(v)])
    summary = {**report.to_dict(), "rows": len(data), "colormap": model.meta["colormap"]}
    summary.pop("loss_curve")
    manifest.abspath(f"models/regnet_{tag}_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    plotting.regnet_figures(report, model, data, d / f"regnet_{tag}", seed=seed)
    manifest.artifacts[f"regnet_{tag}"] = manifest.track(rel)
    manifest.seeds[f"regnet_{tag}"] = seed
    manifest.record("train-regnet", f"{tag}: test MSE {report.test_mse:.4f} on {len(data)} rows")
    return manifest.abspath(rel), report


# ---------------------------------------------------------------------------
# codec round trip shared by the benchmark and enhancement

def store_round_trip(img: ColorImage, storage: str = "png", quality: int = 75) -> ColorImage:
    """Pass an image through on-disk storage. PNG is lossless; JPEG is kept for comparison."""
    if storage == "png":
        return img
    if storage != "jpeg":
        raise ValueError(f"storage must be one of {STORAGE_MODES}")
    buf = io.BytesIO()
    Image.fromarray(np.round(img.pixels * 255).astype(np.uint8)).save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as im:
        px = np.asarray(im.convert("RGB"), dtype=np.float64) / 255
    return ColorImage(px, img.colormap_name, img.display_range)


def denoise_image(model, img: ColorImage) -> ColorImage:
    """Standardize, run the network in eval mode, undo the scaling and clamp to the gamut."""
    fld, stats = standardize(img)
    out = unet_forward(model, image_to_tensor(fld), mode="eval")
    return to_color_image(destandardize(tensor_to_image(out), stats), img.colormap_name, img.display_range)


def codec_round_trip(lps: LpsMatrix, name: str, rng: DisplayRange, regnet, denoiser=None,
                     storage: str = "png") -> np.ndarray:
    """Full-height LPS -> colour image -> [denoiser] -> regnet -> 257-row magnitude."""
    table_name = "gray" if name == GRAY_1INPUT else name
    img = store_round_trip(encode_named(crop_nyquist_row(lps), table_name, rng), storage)
    if denoiser is not None:
        img = denoiser(img)
    est = regnet_decode(regnet, img)
    return magnitude_from_lps(restore_nyquist_row(est))


def enhance_segment(clip: AudioClip, name, rng, regnet, model=None, params=StftParams(),
                    storage="png") -> AudioClip:
    """One segment through the whole chain; output has the input's length."""
    lps, phase = segment_lps(clip, params)
    denoiser = None if model is None else (lambda img: denoise_image(model, img))
    mag = codec_round_trip(lps, name, rng, regnet, denoiser, storage)
    y = reconstruct(mag, phase, params, clip.sample_rate).samples
    # samples after the last full frame are not covered by any frame
    out = np.zeros(len(clip))
    out[:len(y)] = y[:len(clip)]
    return AudioClip(out, clip.sample_rate)


def enhance_clip(noisy: AudioClip, name, rng, regnet, model=None, params=StftParams(),
                 segment_len=SEGMENT_LEN, sample_rate=SAMPLE_RATE, tail_policy="passthrough"):
    """Segment, enhance each piece, and stitch. Returns ``(clip, tail_samples)``."""
    if tail_policy not in TAIL_POLICIES:
        raise ValueError(f"tail policy must be one of {TAIL_POLICIES}")
    if noisy.sample_rate != sample_rate:
        noisy = resample(noisy, sample_rate)
    segs, tail = segment(noisy, segment_len)
    if not segs:
        raise ValueError(f"input is shorter than one {segment_len}-sample segment")
    parts = [enhance_segment(s, name, rng, regnet, model, params).samples for s in segs]
    if tail and tail_policy == "passthrough":
        parts.append(noisy.samples[len(segs) * segment_len:])
    return AudioClip(np.concatenate(parts), sample_rate), tail


# ---------------------------------------------------------------------------
# colormap round-trip benchmark

BENCH_FIELDS = ["sno", "colormap", "stoi", "lsd", "snr", "seg_snr", "pesq", "regnet_test_mse", "storage"]


def _bench_eval_job(args):
    clean_path, name, rng, regnet, params, storage = args
    clip = read_wav(clean_path)
    # the "noisy" phase here is the clean signal's own phase: the DNN is bypassed
    y = enhance_segment(clip, name, rng, regnet, None, params, storage)
    return evaluate_clip(Path(clean_path).stem, clip, y)


def cmd_colormap_bench(manifest: ExperimentManifest, names=None, n_train_images: int = 2, epochs: int = 1000,
                       seed: int = 0, batch_size: int = 256, include_gray_1input: bool = True,
                       max_segments: int | None = None, storage: str = "png", workers: int = 1,
                       out_dir=None) -> list:
    """Regnet-only round trip per colormap, scored against the clean test segments."""
    names = list(NAMES) if not names else [colormap(n).name for n in names]
    if include_gray_1input:
        names.append(GRAY_1INPUT)
    split = "test" if manifest.segments.get("test", {}).get("clean") else "train"
    test_rels = manifest.segments[split]["clean"]
    if split == "train":
        test_rels = test_rels[n_train_images:]
        log.warning("no test split; benchmarking on training segments after the first %d", n_train_images)
    if max_segments:
        test_rels = test_rels[:max_segments]
    if not test_rels:
        raise ValueError("no segments left to benchmark")
    manifest.verify(test_rels)
    rng = manifest.range
    rows = []
    for k, name in enumerate(names, start=1):
        cfg = RegnetTrainConfig(epochs=epochs, seed=seed, batch_size=batch_size)
        regnet, report, _ = train_regnet_for(manifest, name, n_train_images, cfg,
                                             gray_1input=name == GRAY_1INPUT, storage=storage)
        jobs = [(str(manifest.abspath(r)), name, rng, regnet, manifest.params, storage) for r in test_rels]
        reports = _pmap(_bench_eval_job, jobs, workers)
        m = mean_metrics(reports)
        rows.append({"sno": k, "colormap": name, "stoi": m["stoi"], "lsd": m["lsd"], "snr": m["snr"],
                     "seg_snr": m["seg_snr"], "pesq": None, "regnet_test_mse": report.test_mse,
                     "storage": storage})
        log.info("bench %-10s STOI %.4f  LSD %.3f  regnet MSE %.4f", name, m["stoi"], m["lsd"], report.test_mse)
    out = Path(out_dir) if out_dir else manifest.abspath("reports")
    out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, out / "colormap_bench.csv")
    plotting.bench_figure(rows, out / "colormap_bench.png")
    manifest.seeds["colormap_bench"] = seed
    manifest.record("colormap-bench", f"{len(rows)} colormaps, {len(test_rels)} segments, storage {storage}")
    return rows


def write_bench_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("NA" if r.get(k) is None else r[k]) for k in BENCH_FIELDS})


# ---------------------------------------------------------------------------
# denoiser training

def load_denoiser_config(path=None):
    """``(UNetConfig, TrainRunConfig)`` from a JSON file with optional "unet" and "train" sections.

    The "unet" section is either a full config dict (with "layers") or
    ``{"preset": "desk", ...}`` with keyword arguments for the desk preset.
    """
    doc = json.loads(Path(path).read_text()) if path else {}
    u = dict(doc.get("unet", {}))
    preset = u.pop("preset", None)
    if preset == "desk":
        ucfg = UNetConfig.desk(**u)
    elif preset not in (None, "full"):
        raise ValueError(f"unknown U-Net preset {preset!r}")
    elif "layers" in u:
        ucfg = UNetConfig.from_dict({**UNetConfig().to_dict(), **u})
    else:
        ucfg = UNetConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in u.items()})
    return ucfg, TrainRunConfig(**doc.get("train", {}))


def training_pairs(manifest: ExperimentManifest, name: str, split: str = "train", limit: int | None = None):
    """Standardized ``(noisy, clean)`` tensors; the clean image is scaled with the noisy image's statistics."""
    entry = manifest.images.get(name, {}).get(split)
    if not entry:
        raise ValueError(f"no {name} images for split {split}; run 'spectrograms' first")
    clean, noisy = entry["clean"], entry["noisy"]
    if [Path(p).name for p in clean] != [Path(p).name for p in noisy]:
        raise PairingError("clean and noisy images are not paired")
    if limit:
        clean, noisy = clean[:limit], noisy[:limit]
    manifest.verify(clean + noisy)
    pairs = []
    for c, n in zip(clean, noisy):
        nf, stats = standardize(load_image(manifest.abspath(n)))
        cf, _ = standardize(load_image(manifest.abspath(c)), stats)
        pairs.append((image_to_tensor(nf), image_to_tensor(cf)))
    return pairs


def cmd_train_denoiser(manifest: ExperimentManifest, config_path=None, name: str | None = None,
                       steps: int | None = None, seed: int | None = None, scale_divisor: int | None = None,
                       checkpoint_interval: int | None = None, limit: int | None = None, resume: bool = False):
    """Train the U-Net on the manifest's paired images; writes checkpoint, loss CSV and figure."""
    name = colormap(name or manifest.colormap or "parula").name
    ucfg, run = load_denoiser_config(config_path)
    if scale_divisor is not None:
        ucfg = replace(ucfg, scale_divisor=scale_divisor)
    if seed is not None:
        ucfg, run = replace(ucfg, seed=seed), replace(run, seed=seed)
    if steps is not None:
        run = replace(run, steps=steps)
    if checkpoint_interval is not None:
        run = replace(run, checkpoint_interval=checkpoint_interval)
    pairs = training_pairs(manifest, name, limit=limit)
    d = manifest.abspath("models")
    d.mkdir(exist_ok=True)
    ck_rel = f"models/unet_{name}.npz"
    ck = manifest.abspath(ck_rel)
    state, start = None, 0
    if resume and ck.exists():
        model, state, start = checkpoint_load(ck, expect_config=ucfg)
        log.info("resuming from step %d", start)
    else:
        model = unet_build(ucfg)
    model.meta = {"colormap": name, "display_range": list(manifest.display_range)}
    if state is None:
        state = OptimizerState.for_params(model.params, lr=run.lr, beta1=run.beta1, beta2=run.beta2)
    curve_path = manifest.abspath(f"models/unet_{name}_loss.csv")
    prior = []
    if start and curve_path.exists():
        prior = [c for c in read_loss_curve(curve_path) if c[0] <= start]
    model, state, curve = train_denoiser(model, pairs, run, state=state, start_step=start, checkpoint_path=ck)
    curve = prior + curve
    write_loss_curve(curve, curve_path)
    plotting.loss_figure(curve, curve_path.with_suffix(".png"))
    manifest.artifacts[f"unet_{name}"] = manifest.track(ck_rel)
    manifest.seeds[f"unet_{name}"] = run.seed
    last = f"{curve[-1][1]:.4f}" if curve else "n/a"
    manifest.record("train-denoiser", f"{name}: {run.steps} steps on {len(pairs)} pairs, last loss {last}")
    return ck, curve


# ---------------------------------------------------------------------------
# enhancement

def _check_colormap(kind, meta, name):
    have = meta.get("colormap")
    if have is not None and have != name:
        raise ValueError(f"{kind} was trained for colormap {have!r} but the manifest uses {name!r}")


def cmd_enhance(inputs, regnet_path, checkpoint_path, manifest: ExperimentManifest, out_dir,
                name: str | None = None, tail_policy: str = "passthrough") -> list:
    """Enhance WAV files (or every WAV in a directory). ``checkpoint_path=None`` bypasses the U-Net."""
    regnet = regnet_load(regnet_path)
    name = name or regnet.meta.get("colormap") or manifest.colormap
    if name != GRAY_1INPUT:
        name = colormap(name).name
    _check_colormap("regnet", regnet.meta, name)
    if manifest.colormap and name not in (manifest.colormap, GRAY_1INPUT):
        raise ValueError(f"colormap {name!r} does not match the manifest's {manifest.colormap!r}")
    model = None
    if checkpoint_path:
        model, _, _ = checkpoint_load(checkpoint_path)
        _check_colormap("checkpoint", model.meta, name)
    paths = []
    for p in ([inputs] if isinstance(inputs, (str, Path)) else inputs):
        p = Path(p)
        paths += sorted(p.glob("*.wav")) if p.is_dir() else [p]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for p in paths:
        y, tail = enhance_clip(read_wav(p), name, manifest.range, regnet, model, manifest.params,
                               manifest.segment_len, manifest.sample_rate, tail_policy)
        if tail:
            log.info("%s: %d-sample tail %s", p.name, tail,
                     "passed through unprocessed" if tail_policy == "passthrough" else "dropped")
        write_wav(y, out / p.name)
        written.append(out / p.name)
    return written


# ---------------------------------------------------------------------------
# evaluation

def _concat_dir(d, names, rate):
    return concat([_load_at(Path(d) / n, rate) for n in names])


def cmd_evaluate(clean_dir, processed_dir, out_dir, unprocessed_dir=None, external_pesq=None,
                 concatenated: bool = False, sample_rate: int = SAMPLE_RATE, label: str = "processed"):
    """Per-clip metrics, means and (with a baseline) a gain table. Returns ``(reports, gains)``."""
    clean_dir, processed_dir = Path(clean_dir), Path(processed_dir)
    names = _wav_names(clean_dir)
    if not names:
        raise PairingError(f"{clean_dir}: no WAV files")
    if _wav_names(processed_dir) != names:
        missing = sorted(set(names) ^ set(_wav_names(processed_dir)))
        raise PairingError(f"clean and processed file sets differ: {missing}")
    if unprocessed_dir and _wav_names(Path(unprocessed_dir)) != names:
        raise PairingError("clean and unprocessed file sets differ")

    def score(d):
        if concatenated:
            return [evaluate_clip("all", _concat_dir(clean_dir, names, sample_rate),
                                  _concat_dir(d, names, sample_rate))]
        return [evaluate_clip(Path(n).stem, _load_at(clean_dir / n, sample_rate), _load_at(Path(d) / n, sample_rate))
                for n in names]

    reports = score(processed_dir)
    base = score(unprocessed_dir) if unprocessed_dir else None
    if external_pesq:
        scores = import_external_scores(external_pesq)
        attach_pesq(reports, scores)
        if base:
            attach_pesq(base, {k[len("unprocessed/"):]: v for k, v in scores.items()
                               if k.startswith("unprocessed/")})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv(reports, out / "metrics.csv")
    means = {label: mean_metrics(reports)}
    gains = None
    if base is not None:
        write_reports_csv(base, out / "metrics_unprocessed.csv")
        means["unprocessed"] = mean_metrics(base)
        gains = gain_report(base, reports)
        (out / "gain_table.txt").write_text(format_gain_table({label: gains}) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        keys = ["stoi", "lsd", "snr", "seg_snr", "pesq"]
        w.writerow(["set"] + keys)
        for k, m in means.items():
            w.writerow([k] + ["NA" if m[x] is None else m[x] for x in keys])
        if gains is not None:
            w.writerow(["gain"] + ["NA" if gains[x] is None else gains[x] for x in keys])
    plotting.metrics_figure(reports, base, out / "metrics.png")
    return reports, gains
