"""Line-oriented dataset manifests.

A manifest is a CSV file preceded by ``# key=value`` comment lines carrying
the dataset name and channel count. Entry paths are stored relative to the
manifest's directory.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .segment import check_label, check_provenance

COLUMNS = ["id", "path", "patient", "label", "provenance", "seizure", "start_s", "duration_s", "onset_s"]


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    patient: str
    label: str
    provenance: str
    seizure: int | None = None  # index of the linked leading seizure (preictal only)
    start_s: float = math.nan
    duration_s: float = math.nan
    onset_s: float = math.nan  # onset of the linked seizure

    def __post_init__(self):
        check_label(self.label)
        check_provenance(self.provenance)

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s

    @property
    def has_time(self) -> bool:
        return not math.isnan(self.start_s)


@dataclass
class DatasetManifest:
    name: str
    channels: int
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def filter(self, label: str | None = None, provenance: str | None = None, patient: str | None = None) -> "DatasetManifest":
        keep = [
            e
            for e in self.entries
            if (label is None or e.label == label)
            and (provenance is None or e.provenance == provenance)
            and (patient is None or e.patient == patient)
        ]
        return replace(self, entries=keep)

    def subset(self, indices) -> "DatasetManifest":
        return replace(self, entries=[self.entries[i] for i in indices])

    def patients(self) -> list[str]:
        return sorted({e.patient for e in self.entries})

    def counts(self) -> dict[str, int]:
        out = {label: 0 for label in ("preictal", "interictal")}
        for e in self.entries:
            out[e.label] += 1
        return out

    def rebase(self, root: Path) -> "DatasetManifest":
        """Same entries with paths re-expressed relative to ``root``."""
        root = Path(root)
        entries = [replace(e, path=_relpath(self.resolve(e), root)) for e in self.entries]
        return DatasetManifest(self.name, self.channels, entries, root)

    # -- serialization ------------------------------------------------------
    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write("# pfsynth manifest\n")
        buf.write(f"# dataset={self.name}\n")
        buf.write(f"# channels={self.channels}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for e in self.entries:
            w.writerow(
                [
                    e.id,
                    e.path,
                    e.patient,
                    e.label,
                    e.provenance,
                    "" if e.seizure is None else e.seizure,
                    _fmt(e.start_s),
                    _fmt(e.duration_s),
                    _fmt(e.onset_s),
                ]
            )
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        manifest = self.rebase(path.parent) if self.root.resolve() != path.parent.resolve() else self
        path.write_text(manifest.dumps())
        return path

    @classmethod
    def loads(cls, text: str, root: Path = Path(".")) -> "DatasetManifest":
        meta, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                key, sep, val = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = val.strip()
            elif line.strip():
                rows.append(line)
        if not rows:
            raise ManifestError("manifest has no column header")
        reader = csv.DictReader(rows)
        if reader.fieldnames != COLUMNS:
            raise ManifestError(f"manifest columns {reader.fieldnames} != {COLUMNS}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            try:
                entries.append(
                    ManifestEntry(
                        id=row["id"],
                        path=row["path"],
                        patient=row["patient"],
                        label=row["label"],
                        provenance=row["provenance"],
                        seizure=int(row["seizure"]) if row["seizure"] else None,
                        start_s=_parse(row["start_s"]),
                        duration_s=_parse(row["duration_s"]),
                        onset_s=_parse(row["onset_s"]),
                    )
                )
            except ValueError as exc:
                raise ManifestError(f"manifest row {lineno}: {exc}") from None
        try:
            channels = int(meta.get("channels", "0"))
        except ValueError:
            raise ManifestError(f"bad channel count {meta['channels']!r}") from None
        return cls(meta.get("dataset", ""), channels, entries, Path(root))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        return cls.loads(path.read_text(), path.parent)

    def validate(self) -> None:
        """Every file exists and parses; channel count is uniform."""
        from ..preprocess import read_spectrogram
        from .segment import read_segment

        ids = set()
        for e in self.entries:
            if e.id in ids:
                raise ManifestError(f"duplicate entry id {e.id!r}")
            ids.add(e.id)
            p = self.resolve(e)
            if not p.exists():
                raise ManifestError(f"missing file for {e.id}: {p}")
            buf = p.read_bytes()
            if buf[:4] == b"PFSG":
                channels = read_segment(buf).channels
            elif buf[:4] == b"PFSP":
                channels = read_spectrogram(buf).image.shape[2]
            else:
                raise ManifestError(f"{p}: unknown file type {buf[:4]!r}")
            if channels != self.channels:
                raise ManifestError(f"{p}: {channels} channels, manifest declares {self.channels}")


def _relpath(p: Path, root: Path) -> str:
    return Path(os.path.relpath(Path(p).resolve(), Path(root).resolve())).as_posix()


def _fmt(v: float) -> str:
    return "" if v is None or math.isnan(v) else repr(float(v))


def _parse(s: str) -> float:
    return float(s) if s else math.nan
