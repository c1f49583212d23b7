"""Paired-image dataset construction: procedural phantoms, retrospective
degradation of clean slice directories, subject-level splits, and
supervision-level subsetting.

Stored maps are float32 in [-1, 1]; the per-slice min-max constants used for
that normalization travel in the manifest so evaluation can map predictions
back to raw intensities. Splits are always subject-level: no subject
contributes slices to more than one split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import tensorio
from .degrade import MotionSeverity, simulate_motion, undersample_kspace

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class DataError(ValueError):
    """Raised for malformed datasets, manifests, or degradation inputs."""


def normalize_map(raw: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map raw intensities [lo, hi] to [-1, 1] (constant maps go to -1)."""
    if hi <= lo:
        return np.full_like(raw, -1.0, dtype=np.float32)
    return (2.0 * (raw - lo) / (hi - lo) - 1.0).astype(np.float32)


def denormalize_map(norm: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return lo + (np.asarray(norm, dtype=np.float64) + 1.0) * (hi - lo) / 2.0


@dataclass
class PairedSample:
    subject_id: str
    slice_index: int
    a_path: str
    b_path: str
    a_norm: tuple[float, float]
    b_norm: tuple[float, float]

    def load(self, root: Path) -> tuple[np.ndarray, np.ndarray]:
        a = tensorio.read_tensor(Path(root) / self.a_path)
        b = tensorio.read_tensor(Path(root) / self.b_path)
        if a.shape != b.shape:
            raise DataError(f"{self.a_path}: input/target shape mismatch {a.shape} vs {b.shape}")
        return a, b

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "slice_index": self.slice_index,
            "a_path": self.a_path,
            "b_path": self.b_path,
            "a_norm": list(self.a_norm),
            "b_norm": list(self.b_norm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairedSample":
        return cls(
            subject_id=d["subject_id"],
            slice_index=int(d["slice_index"]),
            a_path=d["a_path"],
            b_path=d["b_path"],
            a_norm=tuple(d["a_norm"]),
            b_norm=tuple(d["b_norm"]),
        )


@dataclass
class DatasetManifest:
    samples: list[PairedSample]
    splits: dict[str, list[str]]
    task: str
    seed: int
    image_size: tuple[int, int]
    supervision_level: int | None = None
    params: dict = field(default_factory=dict)
    root: Path | None = None

    def validate(self) -> None:
        seen: dict[str, str] = {}
        for name, subjects in self.splits.items():
            for s in subjects:
                if s in seen:
                    raise DataError(f"subject {s!r} appears in splits {seen[s]!r} and {name!r}")
                seen[s] = name
        sample_subjects = {s.subject_id for s in self.samples}
        for s in seen:
            if s not in sample_subjects:
                raise DataError(f"split subject {s!r} has no samples")
        if self.supervision_level is not None:
            if self.supervision_level > len(self.splits.get("train", [])):
                raise DataError("supervision_level exceeds training subject pool")

    def subjects(self, split: str) -> list[str]:
        return list(self.splits.get(split, []))

    def samples_for(self, split: str) -> list[PairedSample]:
        subjects = set(self.subjects(split))
        if split == "train" and self.supervision_level is not None:
            subjects = set(self.subjects("train")[: self.supervision_level])
        return [s for s in self.samples if s.subject_id in subjects]

    def to_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "task": self.task,
            "seed": self.seed,
            "image_size": list(self.image_size),
            "supervision_level": self.supervision_level,
            "splits": {k: list(v) for k, v in self.splits.items()},
            "params": self.params,
            "samples": [s.to_dict() for s in self.samples],
        }

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        self.validate()
        return tensorio.write_json(directory / MANIFEST_NAME, self.to_dict())

    @classmethod
    def load(cls, directory: str | Path) -> "DatasetManifest":
        directory = Path(directory)
        path = directory if directory.suffix == ".json" else directory / MANIFEST_NAME
        import json

        payload = json.loads(path.read_text())
        if payload.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise DataError(
                f"manifest schema {payload.get('schema_version')!r} unsupported "
                f"(expected {MANIFEST_SCHEMA_VERSION})"
            )
        manifest = cls(
            samples=[PairedSample.from_dict(d) for d in payload["samples"]],
            splits=payload["splits"],
            task=payload["task"],
            seed=int(payload["seed"]),
            image_size=tuple(payload["image_size"]),
            supervision_level=payload.get("supervision_level"),
            params=payload.get("params", {}),
            root=path.parent,
        )
        manifest.validate()
        return manifest


def split_subjects(subject_ids: list[str], ratios=(0.6, 0.2, 0.2), counts=None) -> dict[str, list[str]]:
    """Partition subjects into train/val/test, at least one subject each."""
    n = len(subject_ids)
    if n < 3:
        raise DataError(f"need at least 3 subjects to split, got {n}")
    if counts is None:
        n_val = max(1, round(ratios[1] * n))
        n_test = max(1, round(ratios[2] * n))
        n_train = n - n_val - n_test
    else:
        n_train, n_val, n_test = counts
    if n_train < 1 or n_val < 1 or n_test < 1 or n_train + n_val + n_test != n:
        raise DataError(f"bad split sizes ({n_train}/{n_val}/{n_test}) for {n} subjects")
    ordered = list(subject_ids)
    return {
        "train": ordered[:n_train],
        "val": ordered[n_train:n_train + n_val],
        "test": ordered[n_train + n_val:],
    }


def _write_pair(out_dir: Path, subject: str, idx: int, a: np.ndarray, b: np.ndarray,
                a_norm, b_norm) -> PairedSample:
    rel_a = f"tensors/{subject}_{idx:03d}_a.upg1"
    rel_b = f"tensors/{subject}_{idx:03d}_b.upg1"
    (out_dir / "tensors").mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out_dir / rel_a, a,
                          sidecar={"role": "input", "subject": subject, "slice": idx,
                                   "norm_lo": a_norm[0], "norm_hi": a_norm[1]})
    tensorio.write_tensor(out_dir / rel_b, b,
                          sidecar={"role": "target", "subject": subject, "slice": idx,
                                   "norm_lo": b_norm[0], "norm_hi": b_norm[1]})
    return PairedSample(subject, idx, rel_a, rel_b, tuple(a_norm), tuple(b_norm))


# ---------------------------------------------------------------------------
# procedural phantom task
# ---------------------------------------------------------------------------

def _ellipse_mask(yy, xx, cy, cx, ry, rx, angle):
    c, s = math.cos(angle), math.sin(angle)
    y = yy - cy
    x = xx - cx
    u = (c * x + s * y) / rx
    v = (-s * x + c * y) / ry
    return u * u + v * v <= 1.0


def _phantom_slice(subject_rng: np.random.Generator, size, slice_frac: float) -> np.ndarray:
    """One structured random phantom slice in [0, 1].

    Geometry and appearance statistics (structure counts, sizes, contrast,
    texture scale) are drawn per subject, so subjects differ in ways a model
    only learns by seeing enough of them; ``slice_frac`` sweeps a smooth
    profile so consecutive slices of one subject resemble each other without
    repeating.
    """
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.zeros((h, w))
    profile = 0.8 + 0.25 * math.sin(math.pi * slice_frac)

    cy, cx = subject_rng.uniform(0.42, 0.58, 2)
    ry, rx = subject_rng.uniform(0.26, 0.42, 2) * profile
    head_angle = subject_rng.uniform(-0.4, 0.4)
    head = _ellipse_mask(yy, xx, cy, cx, ry, rx, head_angle)
    img[head] = subject_rng.uniform(0.18, 0.32)

    for _ in range(int(subject_rng.integers(3, 7))):
        ecy = cy + subject_rng.uniform(-0.2, 0.2)
        ecx = cx + subject_rng.uniform(-0.2, 0.2)
        ery, erx = subject_rng.uniform(0.03, 0.15, 2) * profile
        angle = subject_rng.uniform(-math.pi, math.pi)
        level = subject_rng.uniform(0.35, 1.0)
        mask = _ellipse_mask(yy, xx, ecy, ecx, ery, erx, angle) & head
        img[mask] = level

    # thin high-contrast annuli: fine structure a single underfit pass smears
    for _ in range(int(subject_rng.integers(1, 3))):
        acy = cy + subject_rng.uniform(-0.15, 0.15)
        acx = cx + subject_rng.uniform(-0.15, 0.15)
        ary, arx = subject_rng.uniform(0.08, 0.18, 2) * profile
        angle = subject_rng.uniform(-math.pi, math.pi)
        thickness = subject_rng.uniform(0.75, 0.9)
        ring = (
            _ellipse_mask(yy, xx, acy, acx, ary, arx, angle)
            & ~_ellipse_mask(yy, xx, acy, acx, ary * thickness, arx * thickness, angle)
            & head
        )
        img[ring] = subject_rng.uniform(0.6, 1.0)

    # textured region: mid-frequency detail the A-domain blur attenuates but
    # does not destroy, so it is hard yet recoverable
    tcy = cy + subject_rng.uniform(-0.15, 0.15)
    tcx = cx + subject_rng.uniform(-0.15, 0.15)
    tmask = _ellipse_mask(yy, xx, tcy, tcx, 0.11 * profile, 0.14 * profile,
                          subject_rng.uniform(-math.pi, math.pi)) & head
    texture = ndimage.gaussian_filter(
        subject_rng.normal(0.0, 1.0, (h, w)), subject_rng.uniform(1.0, 1.5)
    )
    img[tmask] += subject_rng.uniform(0.3, 0.5) * texture[tmask]

    img = ndimage.gaussian_filter(img, 0.6)  # soften mask staircases
    return np.clip(img, 0.0, 1.0)


# Fixed A->B relation: the input domain is a blurred, gamma-compressed
# rendition of the target; the mapping is monotone in intensity so pairs are
# pixel-aligned and invertible up to the blur.
AB_GAMMA = 2.4
AB_BLUR_SIGMA = 2.0


def ab_forward(target_raw: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(np.power(target_raw, AB_GAMMA), AB_BLUR_SIGMA)


def procedural_pairs(
    n_subjects: int,
    out_dir: str | Path,
    size: tuple[int, int] = (64, 64),
    slices_per_subject: int = 10,
    seed: int = 0,
    split_ratios=(0.6, 0.2, 0.2),
    split_counts=None,
) -> DatasetManifest:
    """Generate a fully synthetic paired dataset with subject-level splits."""
    if n_subjects < 3:
        raise DataError(f"need at least 3 subjects, got {n_subjects}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    subject_seeds = np.random.SeedSequence(seed).spawn(n_subjects)

    samples = []
    subjects = []
    for i, sseq in enumerate(subject_seeds):
        subject = f"subj{i:03d}"
        subjects.append(subject)
        rng = np.random.default_rng(sseq)
        for s in range(slices_per_subject):
            b_raw = _phantom_slice(rng, size, (s + 1) / (slices_per_subject + 1))
            a_raw = ab_forward(b_raw)
            b_lo, b_hi = float(b_raw.min()), float(b_raw.max())
            a_lo, a_hi = float(a_raw.min()), float(a_raw.max())
            a = normalize_map(a_raw, a_lo, a_hi)
            b = normalize_map(b_raw, b_lo, b_hi)
            samples.append(_write_pair(out_dir, subject, s, a, b, (a_lo, a_hi), (b_lo, b_hi)))

    manifest = DatasetManifest(
        samples=samples,
        splits=split_subjects(subjects, ratios=split_ratios, counts=split_counts),
        task="procedural",
        seed=seed,
        image_size=tuple(size),
        params={"slices_per_subject": slices_per_subject,
                "ab_gamma": AB_GAMMA, "ab_blur_sigma": AB_BLUR_SIGMA},
    )
    manifest.root = out_dir
    manifest.save(out_dir)
    return manifest


def subset_supervision(manifest: DatasetManifest, level: int, seed: int) -> DatasetManifest:
    """Restrict the training pool to ``level`` subjects; val/test untouched."""
    train = manifest.subjects("train")
    if level > len(train):
        raise DataError(f"supervision level {level} exceeds {len(train)} training subjects")
    if level < 1:
        raise DataError("supervision level must be positive")
    if level == len(train):
        chosen = list(train)
    else:
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(train, size=level, replace=False).tolist())
    splits = dict(manifest.splits)
    splits["train"] = chosen
    sub = replace(manifest, splits=splits, supervision_level=level)
    sub.validate()
    return sub


# ---------------------------------------------------------------------------
# ingestion of real slice directories
# ---------------------------------------------------------------------------

def load_grayscale(path: Path) -> np.ndarray:
    """Read an 8/16-bit raster or UPG1 tensor as a float64 map in [0, 1]."""
    path = Path(path)
    if path.suffix == ".upg1":
        arr = tensorio.read_tensor(path).astype(np.float64)
        return arr
    img = Image.open(path)
    if img.mode not in ("L", "I", "I;16"):
        img = img.convert("L")
    arr = np.asarray(img, dtype=np.float64)
    scale = 65535.0 if arr.max() > 255 else 255.0
    return arr / scale


def parse_subject(stem: str) -> tuple[str, int]:
    """``<subject>_<slice>`` naming; otherwise the whole stem is the subject."""
    if "_" in stem:
        head, tail = stem.rsplit("_", 1)
        if tail.isdigit():
            return head, int(tail)
    return stem, 0


def _list_images(directory: Path) -> list[Path]:
    files = sorted(
        p for p in Path(directory).iterdir()
        if p.suffix.lower() in IMAGE_SUFFIXES or p.suffix == ".upg1"
    )
    if not files:
        raise DataError(f"no grayscale images found in {directory}")
    return files


def ingest_degradation_task(
    src_dir: str | Path,
    out_dir: str | Path,
    task: str,
    seed: int = 0,
    keep_fraction: float = 0.08,
    mask_mode: str = "square",
    motion: MotionSeverity | None = None,
    split_ratios=(0.6, 0.2, 0.2),
) -> DatasetManifest:
    """Build (degraded, clean) pairs from a directory of clean slices.

    ``task`` is "undersample" or "motion". Both maps of a pair share the
    clean slice's normalization constants (same modality, same scale).
    """
    if task not in ("undersample", "motion"):
        raise DataError(f"unknown degradation task {task!r}")
    out_dir = Path(out_dir)
    files = _list_images(Path(src_dir))
    motion = motion or MotionSeverity()
    child_seeds = np.random.SeedSequence(seed).spawn(len(files))

    samples = []
    subjects: list[str] = []
    size = None
    for i, path in enumerate(files):
        subject, idx = parse_subject(path.stem)
        if subject not in subjects:
            subjects.append(subject)
        b_raw = load_grayscale(path)
        if size is None:
            size = b_raw.shape
        elif b_raw.shape != size:
            raise DataError(f"{path.name}: size {b_raw.shape} differs from {size}")
        if task == "undersample":
            a_raw = undersample_kspace(b_raw, keep_fraction=keep_fraction, mode=mask_mode)
        else:
            a_raw = simulate_motion(b_raw, motion, seed=int(child_seeds[i].generate_state(1)[0]))
        lo, hi = float(b_raw.min()), float(b_raw.max())
        a = normalize_map(a_raw, lo, hi)
        b = normalize_map(b_raw, lo, hi)
        samples.append(_write_pair(out_dir, subject, idx, a, b, (lo, hi), (lo, hi)))

    params = {"keep_fraction": keep_fraction, "mask_mode": mask_mode} if task == "undersample" else {
        "segments": motion.segments,
        "max_rotation_deg": motion.max_rotation_deg,
        "max_translation_px": motion.max_translation_px,
    }
    manifest = DatasetManifest(
        samples=samples,
        splits=split_subjects(subjects, ratios=split_ratios),
        task=task,
        seed=seed,
        image_size=tuple(size),
        params=params,
    )
    manifest.root = out_dir
    manifest.save(out_dir)
    return manifest


def ingest_paired_dirs(
    src_dir: str | Path,
    out_dir: str | Path,
    seed: int = 0,
    split_ratios=(0.6, 0.2, 0.2),
) -> DatasetManifest:
    """Ingest pre-paired directories ``<src>/a`` and ``<src>/b`` matched by
    filename; each domain is normalized with its own per-slice constants."""
    src = Path(src_dir)
    a_files = {p.stem: p for p in _list_images(src / "a")}
    b_files = {p.stem: p for p in _list_images(src / "b")}
    stems = sorted(a_files.keys() & b_files.keys())
    if not stems:
        raise DataError(f"no matching filenames between {src}/a and {src}/b")

    out_dir = Path(out_dir)
    samples = []
    subjects: list[str] = []
    size = None
    for stem in stems:
        subject, idx = parse_subject(stem)
        if subject not in subjects:
            subjects.append(subject)
        a_raw = load_grayscale(a_files[stem])
        b_raw = load_grayscale(b_files[stem])
        if a_raw.shape != b_raw.shape:
            raise DataError(f"{stem}: domain shapes differ {a_raw.shape} vs {b_raw.shape}")
        if size is None:
            size = b_raw.shape
        elif b_raw.shape != size:
            raise DataError(f"{stem}: size {b_raw.shape} differs from {size}")
        a_lo, a_hi = float(a_raw.min()), float(a_raw.max())
        b_lo, b_hi = float(b_raw.min()), float(b_raw.max())
        a = normalize_map(a_raw, a_lo, a_hi)
        b = normalize_map(b_raw, b_lo, b_hi)
        samples.append(_write_pair(out_dir, subject, idx, a, b, (a_lo, a_hi), (b_lo, b_hi)))

    manifest = DatasetManifest(
        samples=samples,
        splits=split_subjects(subjects, ratios=split_ratios),
        task="paired-dirs",
        seed=seed,
        image_size=tuple(size),
    )
    manifest.root = out_dir
    manifest.save(out_dir)
    return manifest
