"""Dataset index for the UCM-VeID directory layout.

Layout: ``<root>/rgb/`` and ``<root>/ir/`` hold images named
``<camera>_<identity>_<imagenum>.<ext>``. An optional sidecar ``labels.tsv``
(tab-separated, header row: path, identity, modality, orientation, camera,
split) carries the orientation annotation; without it orientation defaults
to 0 and split to train.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

NUM_ORIENTATIONS = 8

_FNAME_RE = re.compile(r"^(\d+)_(\d+)_(\d+)\.(png|jpg|jpeg|bmp)$", re.IGNORECASE)


class Modality(str, Enum):
    RGB = "rgb"
    IR = "ir"


class Split(str, Enum):
    TRAIN = "train"
    QUERY = "query"
    GALLERY = "gallery"


class ParseError(ValueError):
    """A filename or labels.tsv row does not follow the expected format."""


class ValidationError(ValueError):
    """The indexed records violate a dataset invariant."""


@dataclass(frozen=True)
class SampleRecord:
    path: Path
    identity: int
    modality: Modality
    orientation: int
    camera: int
    split: Split = Split.TRAIN
    imagenum: int = 0

    def __post_init__(self):
        if not 0 <= self.orientation < NUM_ORIENTATIONS:
            raise ValidationError(
                f"orientation {self.orientation} out of range [0, {NUM_ORIENTATIONS}) "
                f"for {self.path}"
            )
        if self.identity < 0:
            raise ValidationError(f"negative identity {self.identity} for {self.path}")


@dataclass
class DatasetIndex:
    records: list[SampleRecord]
    id_to_records: dict[int, dict[Modality, list[int]]] = field(init=False)

    def __post_init__(self):
        mapping: dict[int, dict[Modality, list[int]]] = {}
        for i, rec in enumerate(self.records):
            per_mod = mapping.setdefault(rec.identity, {Modality.RGB: [], Modality.IR: []})
            per_mod[rec.modality].append(i)
        self.id_to_records = mapping

    @property
    def num_identities(self) -> int:
        return len(self.id_to_records)

    @property
    def identities(self) -> list[int]:
        return sorted(self.id_to_records)

    def __len__(self) -> int:
        return len(self.records)

    def validate_train(self) -> None:
        """Every training identity needs at least one record per modality."""
        bad = []
        for ident, per_mod in sorted(self.id_to_records.items()):
            indices = per_mod[Modality.RGB] + per_mod[Modality.IR]
            is_train = any(self.records[i].split is Split.TRAIN for i in indices)
            if is_train and (not per_mod[Modality.RGB] or not per_mod[Modality.IR]):
                bad.append(ident)
        if bad:
            raise ValidationError(
                f"train identities missing a modality: {bad}"
            )


def parse_filename(path: Path) -> tuple[int, int, int]:
    """Return (camera, identity, imagenum) from ``<camera>_<identity>_<imagenum>.<ext>``."""
    m = _FNAME_RE.match(path.name)
    if m is None:
        raise ParseError(f"malformed filename: {path}")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


def _read_labels_tsv(split_file: Path) -> dict[str, dict]:
    rows: dict[str, dict] = {}
    with open(split_file, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        required = {"path", "identity", "modality", "orientation", "camera", "split"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParseError(
                f"{split_file}: expected columns {sorted(required)}, got {reader.fieldnames}"
            )
        for row in reader:
            rows[row["path"]] = {
                "identity": int(row["identity"]),
                "modality": Modality(row["modality"]),
                "orientation": int(row["orientation"]),
                "camera": int(row["camera"]),
                "split": Split(row["split"]),
            }
    return rows


def write_labels_tsv(records: list[SampleRecord], root: Path) -> Path:
    """Write the sidecar labels.tsv for *records*, paths relative to *root*."""
    out = Path(root) / "labels.tsv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["path", "identity", "modality", "orientation", "camera", "split"])
        for rec in records:
            rel = rec.path.relative_to(root) if rec.path.is_absolute() else rec.path
            writer.writerow(
                [rel.as_posix(), rec.identity, rec.modality.value,
                 rec.orientation, rec.camera, rec.split.value]
            )
    return out


def load_ucm_veid_index(root, split_file=None) -> DatasetIndex:
    """Index a UCM-VeID-layout directory.

    *split_file* is the sidecar labels.tsv; when omitted, ``<root>/labels.tsv``
    is used if present, otherwise orientation defaults to 0 and split to train.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    if split_file is None:
        candidate = root / "labels.tsv"
        split_file = candidate if candidate.exists() else None
    labels = _read_labels_tsv(Path(split_file)) if split_file is not None else {}

    records: list[SampleRecord] = []
    for modality in (Modality.RGB, Modality.IR):
        subdir = root / modality.value
        if not subdir.is_dir():
            continue
        for path in sorted(subdir.iterdir()):
            if path.is_dir():
                continue
            camera, identity, imagenum = parse_filename(path)
            rel = path.relative_to(root).as_posix()
            meta = labels.get(rel)
            records.append(
                SampleRecord(
                    path=path,
                    identity=meta["identity"] if meta else identity,
                    modality=modality,
                    orientation=meta["orientation"] if meta else 0,
                    camera=meta["camera"] if meta else camera,
                    split=meta["split"] if meta else Split.TRAIN,
                    imagenum=imagenum,
                )
            )
    records.sort(key=lambda r: (r.identity, r.modality.value, r.imagenum))
    index = DatasetIndex(records)
    index.validate_train()
    return index


def split_query_gallery(index: DatasetIndex, direction: str, shot: str, rng_state):
    """Assign query/gallery roles by modality for one evaluation protocol.

    direction: "ir2rgb" (IR queries, RGB gallery) or "rgb2ir".
    shot: "single" keeps one gallery record per identity (drawn via
    *rng_state*, a numpy Generator or seed); "multi" keeps all.
    """
    direction = direction.lower()
    if direction not in ("ir2rgb", "rgb2ir"):
        raise ValidationError(f"unknown direction: {direction}")
    if shot not in ("single", "multi"):
        raise ValidationError(f"unknown shot mode: {shot}")
    query_mod = Modality.IR if direction == "ir2rgb" else Modality.RGB
    gallery_mod = Modality.RGB if direction == "ir2rgb" else Modality.IR

    missing = [
        ident for ident, per_mod in sorted(index.id_to_records.items())
        if not per_mod[gallery_mod]
    ]
    if missing:
        raise ValidationError(
            f"identities missing gallery modality {gallery_mod.value}: {missing}"
        )

    rng = np.random.default_rng(rng_state) if not isinstance(rng_state, np.random.Generator) else rng_state
    query = [index.records[i] for ident in index.identities
             for i in index.id_to_records[ident][query_mod]]
    gallery: list[SampleRecord] = []
    for ident in index.identities:
        candidates = index.id_to_records[ident][gallery_mod]
        if shot == "single":
            pick = candidates[int(rng.integers(len(candidates)))]
            gallery.append(index.records[pick])
        else:
            gallery.extend(index.records[i] for i in candidates)
    return query, gallery
