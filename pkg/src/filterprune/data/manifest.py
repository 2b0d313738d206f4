"""Dataset manifest stored as JSON lines, one record per image."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from ..exceptions import FormatError, InputError

DEFECTIVE = 1
NON_DEFECTIVE = 0
LABEL_NAMES = {DEFECTIVE: "defective", NON_DEFECTIVE: "non-defective"}


class DefectKind(str, Enum):
    D1 = "D1"  # melt drop
    D2 = "D2"  # binder bulk
    D3 = "D3"  # shot cluster
    D4 = "D4"  # burned wool, not visible in X-ray
    D5 = "D5"  # uncured moist wool, not visible in X-ray
    D6 = "D6"  # dirt

    @classmethod
    def xray_visible(cls) -> tuple["DefectKind", ...]:
        return (cls.D1, cls.D2, cls.D3, cls.D6)


@dataclass
class ManifestRecord:
    path: str
    label: int
    defect_kinds: list[str] = field(default_factory=list)
    seed: list[int] = field(default_factory=list)
    fold: int | None = None

    def __post_init__(self):
        if self.label not in (DEFECTIVE, NON_DEFECTIVE):
            raise InputError(f"label must be 0 or 1, got {self.label!r}")
        if self.label == DEFECTIVE and not self.defect_kinds:
            raise InputError(f"defective record {self.path!r} lists no defect kind")


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def subset(self, indices) -> "DatasetManifest":
        return DatasetManifest([self.records[i] for i in indices], self.root)

    def counts(self) -> dict[str, int]:
        labels = self.labels
        return {"defective": int((labels == DEFECTIVE).sum()), "non-defective": int((labels == NON_DEFECTIVE).sum())}

    def image_path(self, record: ManifestRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load_images(self) -> np.ndarray:
        """All images as a uint8 array [N, H, W]."""
        if not self.records:
            return np.zeros((0, 0, 0), dtype=np.uint8)
        return np.stack([np.asarray(Image.open(self.image_path(r)).convert("L"), dtype=np.uint8) for r in self.records])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def from_jsonl(cls, text: str, root: Path | None = None) -> "DatasetManifest":
        records = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise FormatError(f"manifest line {lineno}: {exc}") from exc
        return cls(records, root)

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        return cls.from_jsonl(path.read_text(encoding="utf-8"), root=path.parent)
