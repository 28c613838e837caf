"""Manifest ingestion, batch skin tone labelling, and label reports."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .imageproc import ToneConfig, estimate_skin_tone

REQUIRED_COLUMNS = ("image_id", "path")
OPTIONAL_COLUMNS = ("human_fitzpatrick", "diagnosis")
ANNOTATION_COLUMNS = (
    "image_id", "ita", "fitzpatrick", "patch_x", "patch_y", "masked_fraction", "status",
)
FITZPATRICK_TYPES = range(1, 7)


class ManifestError(ValueError):
    """The manifest cannot be used at all (as opposed to a rejected row)."""


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    path: Path
    human_fitzpatrick: int | None = None
    diagnosis: str | None = None


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]
    rejects: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def human_labels(self) -> dict[str, int]:
        return {r.image_id: r.human_fitzpatrick for r in self.rows if r.human_fitzpatrick is not None}


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    ita: float | None = None
    fitzpatrick: int | None = None
    patch_x: int | None = None
    patch_y: int | None = None
    masked_fraction: float | None = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_row(self) -> list[str]:
        if not self.ok:
            return [self.image_id, "", "", "", "", "", self.status]
        return [
            self.image_id, f"{self.ita:.4f}", str(self.fitzpatrick), str(self.patch_x),
            str(self.patch_y), f"{self.masked_fraction:.4f}", self.status,
        ]


@dataclass
class DistributionReport:
    counts: dict[int, int]
    total: int
    failures: int

    def to_dict(self) -> dict:
        return {
            "counts": {str(k): v for k, v in self.counts.items()},
            "total": self.total,
            "failures": self.failures,
        }

    def to_text(self, width: int = 40) -> str:
        """Horizontal bar chart, one line per Fitzpatrick type."""
        peak = max(self.counts.values(), default=0)
        lines = []
        for t in FITZPATRICK_TYPES:
            n = self.counts[t]
            bar = "#" * (round(width * n / peak) if peak else 0)
            lines.append(f"type {t} | {bar:<{width}} {n}")
        lines.append(f"labelled {self.total - self.failures} of {self.total} ({self.failures} failed)")
        return "\n".join(lines)


@dataclass
class AgreementReport:
    n_compared: int
    n_within_tolerance: int
    tolerance: int
    confusion: np.ndarray  # rows: human type 1..6, columns: automatic type 1..6

    @property
    def accuracy(self) -> float:
        return self.n_within_tolerance / self.n_compared

    def to_dict(self) -> dict:
        return {
            "n_compared": self.n_compared,
            "n_within_tolerance": self.n_within_tolerance,
            "tolerance": self.tolerance,
            "accuracy": round(self.accuracy, 4),
            "confusion": self.confusion.tolist(),
        }

    def to_text(self) -> str:
        lines = [
            f"accuracy (+/-{self.tolerance}): {self.accuracy:.4f} "
            f"({self.n_within_tolerance}/{self.n_compared})",
            "human \\ auto " + " ".join(f"{t:>5d}" for t in FITZPATRICK_TYPES),
        ]
        for t, row in zip(FITZPATRICK_TYPES, self.confusion):
            lines.append(f"{t:>12d} " + " ".join(f"{v:>5d}" for v in row))
        return "\n".join(lines)


def _parse_fitzpatrick(raw: str) -> int | None:
    raw = raw.strip()
    if not raw:
        return None
    try:
        number = float(raw)
    except ValueError:
        number = float("nan")
    if not number.is_integer():
        raise ValueError(f"fitzpatrick value {raw!r} is not an integer")
    value = int(number)
    if value not in FITZPATRICK_TYPES:
        raise ValueError(f"fitzpatrick value {value} outside 1..6")
    return value


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a CSV manifest with ``image_id`` and ``path`` columns.

    Optional columns are ``human_fitzpatrick`` and ``diagnosis``. Relative
    image paths resolve against the manifest's directory. Malformed rows go
    to ``rejects`` as ``(line_number, reason)``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{path}: empty file, no header row")
        header = [c.strip() for c in reader.fieldnames]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"{path}: missing required column(s): {', '.join(missing)}")
        reader.fieldnames = header

        manifest = DatasetManifest(rows=[])
        seen: set[str] = set()
        for record in reader:
            line = reader.line_num
            if None in record:
                manifest.rejects.append((line, "too many fields"))
                continue
            image_id = (record.get("image_id") or "").strip()
            raw_path = (record.get("path") or "").strip()
            if not image_id or not raw_path:
                manifest.rejects.append((line, "image_id and path must be non-empty"))
                continue
            if image_id in seen:
                manifest.rejects.append((line, f"duplicate image_id {image_id!r}"))
                continue
            try:
                human = _parse_fitzpatrick(record.get("human_fitzpatrick") or "")
            except ValueError as exc:
                manifest.rejects.append((line, str(exc)))
                continue
            img_path = Path(raw_path)
            if not img_path.is_absolute():
                img_path = path.parent / img_path
            diagnosis = (record.get("diagnosis") or "").strip() or None
            seen.add(image_id)
            manifest.rows.append(ManifestRow(image_id, img_path, human, diagnosis))
    return manifest


def load_image(path: str | Path) -> np.ndarray:
    """Load a raster image as an (H, W, 3) uint8 sRGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def annotate_image(row: ManifestRow, config: ToneConfig) -> AnnotationRecord:
    try:
        image = load_image(row.path)
        est = estimate_skin_tone(image, config)
    except Exception as exc:  # per-row failure must never abort the batch
        reason = str(exc).replace("\n", " ") or type(exc).__name__
        return AnnotationRecord(row.image_id, status=f"failed: {reason}")
    return AnnotationRecord(
        row.image_id,
        ita=est.ita,
        fitzpatrick=est.fitzpatrick,
        patch_x=est.chosen_patch.x,
        patch_y=est.chosen_patch.y,
        masked_fraction=est.masked_fraction,
    )


def annotate_dataset(
    manifest: DatasetManifest, config: ToneConfig | None = None, workers: int = 1,
) -> list[AnnotationRecord]:
    """Label every manifest row; output order always follows the manifest."""
    config = config or ToneConfig()
    rows = manifest.rows
    if workers <= 1 or len(rows) <= 1:
        return [annotate_image(r, config) for r in rows]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(annotate_image, rows, [config] * len(rows), chunksize=4))


def write_annotations(records: list[AnnotationRecord], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(ANNOTATION_COLUMNS)
    for rec in records:
        writer.writerow(rec.to_row())


def annotations_to_csv(records: list[AnnotationRecord]) -> str:
    buf = io.StringIO()
    write_annotations(records, buf)
    return buf.getvalue()


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ANNOTATION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}: missing annotation column(s): {', '.join(missing)}")
        out = []
        for row in reader:
            if row["status"] != "ok":
                out.append(AnnotationRecord(row["image_id"], status=row["status"]))
                continue
            out.append(AnnotationRecord(
                row["image_id"],
                ita=float(row["ita"]),
                fitzpatrick=int(row["fitzpatrick"]),
                patch_x=int(row["patch_x"]),
                patch_y=int(row["patch_y"]),
                masked_fraction=float(row["masked_fraction"]),
            ))
    return out


def distribution_report(records: list[AnnotationRecord]) -> DistributionReport:
    counts = {t: 0 for t in FITZPATRICK_TYPES}
    failures = 0
    for rec in records:
        if rec.ok:
            counts[rec.fitzpatrick] += 1
        else:
            failures += 1
    return DistributionReport(counts, len(records), failures)


def agreement(
    records: list[AnnotationRecord], manifest: DatasetManifest | dict[str, int], tolerance: int = 1,
) -> AgreementReport:
    """Fraction of images whose automatic type is within ``tolerance`` of the human one.

    Only images that have both an ok automatic label and a human label count.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    human = manifest.human_labels() if isinstance(manifest, DatasetManifest) else manifest
    confusion = np.zeros((6, 6), dtype=int)
    n = hits = 0
    for rec in records:
        h = human.get(rec.image_id)
        if h is None or not rec.ok:
            continue
        n += 1
        hits += abs(rec.fitzpatrick - h) <= tolerance
        confusion[h - 1, rec.fitzpatrick - 1] += 1
    if n == 0:
        raise ValueError("no rows carry both an automatic and a human label")
    return AgreementReport(n, hits, tolerance, confusion)


def report_json(report: DistributionReport | AgreementReport, **extra) -> str:
    payload = {**report.to_dict(), **extra}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
