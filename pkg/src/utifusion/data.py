"""Dataset ingestion, preprocessing, speaker splits, and synthetic fixtures.

The label source of truth is a manifest CSV with the exact header
``path,speaker,utterance_type,phone``: UTF-8, comma-separated, one image
per row, paths relative to the dataset root. Fields may not contain
commas and quoting is not interpreted; offending rows are rejected.

Preprocessing turns each 3-channel PNG into (a) a grayscale image resized
to ``image_size`` x ``image_size`` with values scaled to [0, 1] and (b) an
LBP histogram computed on the full-resolution grayscale *before* the
resize, because resizing smooths away exactly the micro-texture LBP
measures.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from .lbp import DEFAULT_CONFIG, LBPConfig, LBPFeatures, lbp_histogram, lbp_map, to_grayscale
from .models import ArrayDataset
from .seeding import stream

MANIFEST_HEADER = "path,speaker,utterance_type,phone"
SCENARIOS = ("speaker_dependent", "multi_speaker", "speaker_independent")

CLASS_NAMES = (
    "bilabial_labiodental",
    "dental_alveolar_postalveolar",
    "velar",
    "alveolar_approximant",
)


class ManifestError(Exception):
    """Raised when any manifest row fails and permissive mode is off."""

    def __init__(self, errors: list["RowError"]):
        self.errors = errors
        lines = "\n".join(str(e) for e in errors)
        super().__init__(f"{len(errors)} manifest row(s) failed:\n{lines}")


@dataclass(frozen=True)
class RowError:
    row: int
    path: str
    reason: str

    def __str__(self):
        return f"row {self.row} ({self.path!r}): {self.reason}"


@dataclass
class DatasetRecord:
    image_path: str
    speaker_id: str
    utterance_type: str
    phone_label: str
    class_id: int
    image: np.ndarray          # [1, H, W], values in [0, 1]
    texture: LBPFeatures


@dataclass
class LoadResult:
    records: list[DatasetRecord]
    errors: list[RowError] = field(default_factory=list)


@dataclass(frozen=True)
class SplitPlan:
    scenario: str
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    held_out_speakers: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if set(self.train_indices) & set(self.test_indices):
            raise ValueError("train and test indices overlap")


# -- phone table --------------------------------------------------------------

_PHONE_TABLE: dict[str, int] | None = None


def _parse_phone_table(text: str) -> dict[str, int]:
    table = {}
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    for row in reader:
        table[row["phone"].strip().lower()] = int(row["class_id"])
    return table


def phone_table(path: str | Path | None = None) -> dict[str, int]:
    """The phone -> class-id mapping, from the bundled table or ``path``."""
    global _PHONE_TABLE
    if path is not None:
        return _parse_phone_table(Path(path).read_text(encoding="utf-8"))
    if _PHONE_TABLE is None:
        text = resources.files("utifusion").joinpath("phone_classes.csv").read_text(encoding="utf-8")
        _PHONE_TABLE = _parse_phone_table(text)
    return _PHONE_TABLE


def map_phone_to_class(phone_label: str, table: dict[str, int] | None = None) -> int:
    """Class id for a phone label; accepts "/p/" or bare "p" spellings."""
    table = phone_table() if table is None else table
    key = phone_label.strip().strip("/").lower()
    if key not in table:
        raise ValueError(f"unknown phone label {phone_label!r}")
    return table[key]


# -- image IO and preprocessing ------------------------------------------------


def load_png(path: str | Path) -> np.ndarray:
    """Decode an 8-bit 3-channel PNG to a [3,H,W] float array in [0,255]."""
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise ValueError(f"expected an 8-bit 3-channel image, got mode {img.mode!r}")
        arr = np.asarray(img, dtype=np.float64)
    return arr.transpose(2, 0, 1)


def resize_bilinear(src, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a [H,W] array using half-pixel centers.

    Destination pixel (i, j) samples the source at
    ((i + 0.5) * H/out_h - 0.5, (j + 0.5) * W/out_w - 0.5), clamped to the
    image, with two-stage linear interpolation between the four nearest
    source pixels.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] < 1 or src.shape[1] < 1:
        raise ValueError(f"expected a non-degenerate [H,W] array, got shape {src.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extent must be positive, got {out_h}x{out_w}")
    h, w = src.shape
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = src[np.ix_(y0, x0)] + fx[None, :] * (src[np.ix_(y0, x1)] - src[np.ix_(y0, x0)])
    bot = src[np.ix_(y1, x0)] + fx[None, :] * (src[np.ix_(y1, x1)] - src[np.ix_(y1, x0)])
    return top + fy[:, None] * (bot - top)


def preprocess(
    image, image_size: int = 64, lbp_config: LBPConfig = DEFAULT_CONFIG
) -> tuple[np.ndarray, LBPFeatures]:
    """Full preprocessing for one [3,H,W] image.

    Returns the [1, image_size, image_size] tensor in [0, 1] and the LBP
    histogram of the full-resolution grayscale.
    """
    gray = to_grayscale(image)
    features = lbp_histogram(lbp_map(gray, lbp_config), lbp_config, normalize=True)
    small = resize_bilinear(gray, image_size, image_size) / 255.0
    return small[None, :, :], features


# -- manifest loading ----------------------------------------------------------


def _parse_manifest(manifest_path: Path) -> tuple[list[tuple[int, str, str, str, str]], list[RowError]]:
    text = manifest_path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError([RowError(1, str(manifest_path), f"manifest header must be {MANIFEST_HEADER!r}")])
    rows, errors = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 4:
            errors.append(
                RowError(lineno, line, f"expected 4 comma-separated fields, got {len(fields)}")
            )
            continue
        rows.append((lineno, *fields))
    return rows, errors


def load_dataset(
    root: str | Path,
    manifest: str | Path,
    image_size: int = 64,
    lbp_config: LBPConfig = DEFAULT_CONFIG,
    permissive: bool = False,
    cache_features: bool = False,
) -> LoadResult:
    """Load every manifest row into a DatasetRecord.

    Nothing is skipped silently: each failing row becomes a RowError. With
    ``permissive`` unset, any error raises ManifestError; otherwise the
    good records are returned together with the error report. Records are
    ordered by manifest row. With ``cache_features``, LBP histograms are
    read from / written to ``<image>.lbp.csv`` next to each image.
    """
    root = Path(root)
    rows, errors = _parse_manifest(Path(manifest))
    records = []
    for lineno, rel_path, speaker, utt_type, phone in rows:
        try:
            if utt_type not in ("A", "B"):
                raise ValueError(f"utterance_type must be A or B, got {utt_type!r}")
            class_id = map_phone_to_class(phone)
            full = root / rel_path
            if not full.is_file():
                raise ValueError(f"image file not found: {full}")
            image = load_png(full)
            cache_path = Path(str(full) + ".lbp.csv")
            if cache_features and cache_path.is_file():
                features = read_feature_cache(cache_path, lbp_config)
                gray = to_grayscale(image)
                small = resize_bilinear(gray, image_size, image_size) / 255.0
                tensor_img = small[None, :, :]
            else:
                tensor_img, features = preprocess(image, image_size, lbp_config)
                if cache_features:
                    write_feature_cache(cache_path, features)
            records.append(
                DatasetRecord(
                    image_path=rel_path,
                    speaker_id=speaker,
                    utterance_type=utt_type,
                    phone_label=phone,
                    class_id=class_id,
                    image=tensor_img,
                    texture=features,
                )
            )
        except (ValueError, OSError) as exc:
            errors.append(RowError(lineno, rel_path, str(exc)))
    if errors and not permissive:
        raise ManifestError(errors)
    return LoadResult(records=records, errors=errors)


def write_feature_cache(path: str | Path, features: LBPFeatures) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(repr(float(v)) for v in features.histogram) + "\n")


def read_feature_cache(path: str | Path, config: LBPConfig) -> LBPFeatures:
    values = np.array([float(v) for v in Path(path).read_text(encoding="utf-8").strip().split(",")])
    return LBPFeatures(histogram=values, config=config, normalized=True)


# -- splits --------------------------------------------------------------------


def make_split(
    records: list[DatasetRecord],
    scenario: str,
    seed: int,
    speaker: str | None = None,
    held_out: tuple[str, ...] = (),
    train_fraction: float = 0.8,
) -> SplitPlan:
    """Build the train/test index plan for one learning scenario.

    speaker_dependent uses a single speaker's records (the given one, or
    the first by sorted id) shuffled into train_fraction/rest.
    multi_speaker pools everyone and splits per class so each class keeps
    the train_fraction ratio within one record. speaker_independent holds
    out whole speakers for the test side. Index lists are returned sorted;
    the seed only decides membership.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if not records:
        raise ValueError("cannot split an empty record list")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    speakers = sorted({r.speaker_id for r in records})
    rng = stream(seed, "split")

    if scenario == "speaker_dependent":
        chosen = speaker if speaker else speakers[0]
        idx = [i for i, r in enumerate(records) if r.speaker_id == chosen]
        if len(idx) < 2:
            raise ValueError(f"speaker {chosen!r} has {len(idx)} record(s); need at least 2")
        perm = rng.permutation(len(idx))
        n_train = min(max(int(round(train_fraction * len(idx))), 1), len(idx) - 1)
        train = sorted(idx[p] for p in perm[:n_train])
        test = sorted(idx[p] for p in perm[n_train:])
        return SplitPlan(scenario, tuple(train), tuple(test), (), seed)

    if scenario == "multi_speaker":
        if len(speakers) < 2:
            raise ValueError(f"multi_speaker needs >= 2 speakers, got {len(speakers)}")
        train, test = [], []
        for class_id in sorted({r.class_id for r in records}):
            idx = [i for i, r in enumerate(records) if r.class_id == class_id]
            perm = rng.permutation(len(idx))
            n_train = int(round(train_fraction * len(idx)))
            train.extend(idx[p] for p in perm[:n_train])
            test.extend(idx[p] for p in perm[n_train:])
        return SplitPlan(scenario, tuple(sorted(train)), tuple(sorted(test)), (), seed)

    # speaker_independent
    if len(speakers) < 2:
        raise ValueError(f"speaker_independent needs >= 2 speakers, got {len(speakers)}")
    if not held_out:
        raise ValueError("speaker_independent requires at least one held-out speaker")
    held = tuple(sorted(set(held_out)))
    for spk in held:
        if not any(r.speaker_id == spk for r in records):
            raise ValueError(f"held-out speaker {spk!r} has no records")
    if set(held) >= set(speakers):
        raise ValueError("holding out every speaker leaves no training data")
    test = tuple(i for i, r in enumerate(records) if r.speaker_id in held)
    train = tuple(i for i, r in enumerate(records) if r.speaker_id not in held)
    return SplitPlan("speaker_independent", train, test, held, seed)


# -- record stacking -----------------------------------------------------------


def stack_records(records: list[DatasetRecord]) -> ArrayDataset:
    """Stack records into training arrays.

    Records are ordered by ``image_path`` first, so batch composition is
    tied to record identity rather than list position: permuting the input
    list cannot change a training run.
    """
    if not records:
        raise ValueError("cannot stack an empty record list")
    ordered = sorted(records, key=lambda r: r.image_path)
    images = np.stack([r.image for r in ordered]).astype(np.float64)
    textures = np.stack([r.texture.histogram for r in ordered]).astype(np.float64)
    labels = np.array([r.class_id for r in ordered], dtype=np.int64)
    return ArrayDataset(images=images, textures=textures, labels=labels)


# -- synthetic data -------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for the 4-class synthetic fixture generator.

    ``class_signal`` picks where the label is encoded: macro image
    structure (a blob in the class's quadrant), micro texture statistics
    (LBP histograms of class-specific stripe/checker/noise patterns), or
    both. The two channels are generated independently so either can be
    ablated: with ``texture_only`` the stored images are pure noise, and
    with ``image_only`` the stored histograms come from classless noise.
    """

    n_per_class: int
    image_size: int = 64
    class_signal: str = "both"
    n_speakers: int = 9

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.class_signal not in ("image_only", "texture_only", "both"):
            raise ValueError(f"unknown class_signal {self.class_signal!r}")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be >= 1")


_SYNTH_PHONES = ("p", "t", "k", "r")
_QUADRANTS = ((0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75))


def _blob_image(class_id: int, size: int, rng: np.random.Generator) -> np.ndarray:
    cy, cx = _QUADRANTS[class_id]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    sigma = size / 6.0
    d2 = (yy - cy * size) ** 2 + (xx - cx * size) ** 2
    img = 0.1 + 0.8 * np.exp(-d2 / (2 * sigma * sigma))
    img += rng.uniform(-0.05, 0.05, size=(size, size))
    return np.clip(img, 0.0, 1.0)


def _texture_patch(class_id: int, rng: np.random.Generator, size: int = 48) -> np.ndarray:
    """Grayscale micro-pattern in [0,255] whose LBP histogram marks a class."""
    amplitude = rng.uniform(60.0, 120.0)
    if class_id == 0:
        patch = rng.uniform(0.0, 255.0, size=(size, size))
    elif class_id == 1:
        rows = np.where(np.arange(size) % 2 == 0, 128.0 + amplitude / 2, 128.0 - amplitude / 2)
        patch = np.repeat(rows[:, None], size, axis=1)
    elif class_id == 2:
        cols = np.where(np.arange(size) % 2 == 0, 128.0 + amplitude / 2, 128.0 - amplitude / 2)
        patch = np.repeat(cols[None, :], size, axis=0)
    else:
        yy, xx = np.mgrid[0:size, 0:size]
        patch = np.where((yy + xx) % 2 == 0, 128.0 + amplitude / 2, 128.0 - amplitude / 2)
    patch = patch + rng.normal(0.0, 3.0, size=(size, size))
    return np.clip(patch, 0.0, 255.0)


def synth_dataset(spec: SynthSpec, seed: int, lbp_config: LBPConfig = DEFAULT_CONFIG) -> list[DatasetRecord]:
    """Generate 4 * n_per_class labeled records with synthetic speakers.

    Classes and speakers interleave (record i has class i % 4 and speaker
    s{(i//4) % n_speakers}), so every speaker sees every class and the
    split harness is fully exercisable. Fixed seed, fixed bytes.
    """
    rng = stream(seed, "synth")
    records = []
    n_total = 4 * spec.n_per_class
    for i in range(n_total):
        class_id = i % 4
        speaker = f"s{(i // 4) % spec.n_speakers}"
        if spec.class_signal in ("image_only", "both"):
            img = _blob_image(class_id, spec.image_size, rng)
        else:
            img = rng.uniform(0.0, 1.0, size=(spec.image_size, spec.image_size))
        if spec.class_signal in ("texture_only", "both"):
            patch = _texture_patch(class_id, rng)
        else:
            patch = _texture_patch(0, rng)  # classless noise pattern
        features = lbp_histogram(lbp_map(patch, lbp_config), lbp_config, normalize=True)
        records.append(
            DatasetRecord(
                image_path=f"synth/rec{i:05d}.png",
                speaker_id=speaker,
                utterance_type="AB"[i % 2],
                phone_label=_SYNTH_PHONES[class_id],
                class_id=class_id,
                image=img[None, :, :],
                texture=features,
            )
        )
    return records
