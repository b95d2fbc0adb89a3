"""On-disk dataset layout: manifests, annotation/detection records, fingerprints.

A dataset directory holds image files plus ``manifest.txt`` (one relative
path per line, canonical order). Detection datasets also carry
``annotations.jsonl``: a header line followed by one record per image::

    {"format": "gamma-desk/annotations", "version": 1}
    {"image_path": "img_00000.png", "boxes": [[x_min, y_min, x_max, y_max, class_id], ...]}

Detection outputs use the same convention with ``"format":
"gamma-desk/detections"`` and six-element rows (confidence appended).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..tensor import ContractError, generator
from .image import IngestionError, load_image, save_image
from .synth import DetectionSample, DomainDataset

ANNOTATION_FORMAT = "gamma-desk/annotations"
DETECTION_FORMAT = "gamma-desk/detections"
RECORD_VERSION = 1
MANIFEST_NAME = "manifest.txt"
ANNOTATION_NAME = "annotations.jsonl"


@dataclass
class Manifest:
    root: Path
    entries: list[str]
    tag: str = ""

    def paths(self) -> list[Path]:
        return [self.root / e for e in self.entries]


def write_manifest(root: str | os.PathLike, entries: Sequence[str]) -> Path:
    path = Path(root) / MANIFEST_NAME
    path.write_text("".join(f"{e}\n" for e in entries))
    return path


def read_manifest(root: str | os.PathLike, tag: str = "") -> Manifest:
    root = Path(root)
    lines = [ln.strip() for ln in (root / MANIFEST_NAME).read_text().splitlines()]
    entries = [ln for ln in lines if ln and not ln.startswith("#")]
    missing = [e for e in entries if not (root / e).is_file()]
    if missing:
        raise IngestionError(f"{root}: manifest references missing file(s) {missing[:3]}")
    return Manifest(root, entries, tag)


def fingerprint(root: str | os.PathLike) -> str:
    """SHA-256 over the manifest, every listed file and the annotation file if present."""
    root = Path(root)
    h = hashlib.sha256()
    manifest = read_manifest(root)
    h.update((root / MANIFEST_NAME).read_bytes())
    for p in manifest.paths():
        h.update(p.read_bytes())
    ann = root / ANNOTATION_NAME
    if ann.is_file():
        h.update(ann.read_bytes())
    return h.hexdigest()


def sample_fingerprint(sample: DetectionSample) -> str:
    h = hashlib.sha256(np.ascontiguousarray(sample.image, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(sample.annotations, dtype="<f8").tobytes())
    return h.hexdigest()


def write_jsonl(path: str | os.PathLike, header: dict, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_jsonl(path: str | os.PathLike, expected_format: str | None = None) -> tuple[dict, list[dict]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise IngestionError(f"{path}: empty record file")
    header = json.loads(lines[0])
    if expected_format and header.get("format") != expected_format:
        raise IngestionError(f"{path}: expected format {expected_format!r}, found {header.get('format')!r}")
    if header.get("version", RECORD_VERSION) != RECORD_VERSION:
        raise IngestionError(f"{path}: unsupported record version {header.get('version')}")
    return header, [json.loads(ln) for ln in lines[1:]]


def _box_rows(arr: np.ndarray) -> list[list]:
    return [[float(v) for v in r[:4]] + [int(r[4])] for r in np.asarray(arr).reshape(-1, 5)]


def save_domain_dataset(root: str | os.PathLike, dataset: DomainDataset) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = dataset.names or [f"{dataset.domain.lower()}_{i:05d}" for i in range(len(dataset))]
    entries = []
    for name, img in zip(names, dataset.images):
        entries.append(f"{name}.png")
        save_image(root / entries[-1], img)
    write_manifest(root, entries)
    (root / "domain.txt").write_text(dataset.domain + "\n")
    return root


def load_domain_dataset(root: str | os.PathLike, seed: int = 0) -> DomainDataset:
    root = Path(root)
    manifest = read_manifest(root)
    domain = (root / "domain.txt").read_text().strip() if (root / "domain.txt").is_file() else "X"
    images = np.stack([load_image(p) for p in manifest.paths()])
    return DomainDataset(domain, images, seed=seed, names=[Path(e).stem for e in manifest.entries])


def save_detection_dataset(root: str | os.PathLike, samples: Sequence[DetectionSample],
                           class_names: Sequence[str] = ()) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries, records = [], []
    for i, s in enumerate(samples):
        name = f"img_{i:05d}.png"
        save_image(root / name, s.image)
        entries.append(name)
        records.append({"image_path": name, "boxes": _box_rows(s.annotations)})
    write_manifest(root, entries)
    write_jsonl(root / ANNOTATION_NAME,
                {"format": ANNOTATION_FORMAT, "version": RECORD_VERSION, "class_names": list(class_names)},
                records)
    return root


def load_detection_dataset(root: str | os.PathLike) -> tuple[list[DetectionSample], list[str]]:
    root = Path(root)
    header, records = read_jsonl(root / ANNOTATION_NAME, ANNOTATION_FORMAT)
    samples = []
    for rec in records:
        path = root / rec["image_path"]
        if not path.is_file():
            raise IngestionError(f"{path}: annotated image is missing")
        boxes = np.asarray(rec["boxes"], dtype=np.float64).reshape(-1, 5)
        samples.append(DetectionSample(load_image(path), boxes, source=Path(rec["image_path"]).stem))
    return samples, list(header.get("class_names", []))


def write_detections(path: str | os.PathLike, image_paths: Sequence[str], detections) -> Path:
    records = [{"image_path": p, "detections": [list(map(float, d.box)) + [int(d.class_id), float(d.confidence)]
                                                for d in dets]}
               for p, dets in zip(image_paths, detections)]
    return write_jsonl(path, {"format": DETECTION_FORMAT, "version": RECORD_VERSION}, records)


# mixing --------------------------------------------------------------------

@dataclass(frozen=True)
class MixSpec:
    existing_fraction: float = 0.6
    augmented_fraction: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.existing_fraction < 0 or self.augmented_fraction < 0:
            raise ContractError("mix fractions must be non-negative")
        if abs(self.existing_fraction + self.augmented_fraction - 1.0) > 1e-12:
            raise ContractError("mix fractions must sum to 1")


def mix_split(existing: Sequence[DetectionSample], augmented: Sequence[DetectionSample], spec: MixSpec,
              total: int, evaluation: Sequence[DetectionSample] = ()) -> list[DetectionSample]:
    """Seeded draw of round(existing_fraction * total) existing samples plus augmented remainder.

    When ``evaluation`` is given, the result is asserted disjoint from it.
    """
    n_existing = int(math.floor(spec.existing_fraction * total + 0.5))
    n_augmented = total - n_existing
    if n_existing > len(existing):
        raise ContractError(f"existing pool too small: need {n_existing}, have {len(existing)}")
    if n_augmented > len(augmented):
        raise ContractError(f"augmented pool too small: need {n_augmented}, have {len(augmented)}")
    rng = generator(spec.seed, "mix")
    pick_e = np.sort(rng.choice(len(existing), size=n_existing, replace=False)) if n_existing else []
    pick_a = np.sort(rng.choice(len(augmented), size=n_augmented, replace=False)) if n_augmented else []
    chosen = [existing[i] for i in pick_e] + [augmented[i] for i in pick_a]
    if evaluation:
        held_out = {sample_fingerprint(s) for s in evaluation}
        leaked = [s.source for s in chosen if sample_fingerprint(s) in held_out]
        if leaked:
            raise ContractError(f"training mix overlaps the evaluation pool: {leaked[:3]}")
    return chosen
