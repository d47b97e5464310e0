"""Dataset records, the JSON-lines annotation format and 8-bit PGM rasters.

One record per line::

    {"id": "s0001", "image": "images/s0001.pgm", "box": [x, y, w, h],
     "landmarks": [[x, y], null, ...], "mask": [1, 0, ...],
     "occlusion": [1, 0, ...], "normalizer": [i, j],
     "normalizer_kind": "inter-ocular", "occluders": [[x0, y0, x1, y1], ...]}

``image`` is resolved relative to the dataset file's directory. ``mask``
marks annotated landmarks, ``occlusion`` uses 1 = visible. ``occluders`` is
optional and only written by the synthetic generator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .shape import FaceBox

NORMALIZER_KINDS = ("inter-ocular", "profile")
_REQUIRED = {"id", "image", "box", "landmarks", "mask", "occlusion", "normalizer"}
_OPTIONAL = {"normalizer_kind", "occluders"}


class DatasetError(ValueError):
    pass


@dataclass
class SampleRecord:
    id: str
    image: str
    box: FaceBox
    landmarks: np.ndarray  # (n, 2), NaN rows where unannotated
    mask: np.ndarray  # (n,) int8
    occlusion: np.ndarray  # (n,) int8, 1 = visible
    normalizer: tuple[int, int]
    normalizer_kind: str = "inter-ocular"
    occluders: list = field(default_factory=list)

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 2)
        self.mask = np.asarray(self.mask, dtype=np.int8)
        self.occlusion = np.asarray(self.occlusion, dtype=np.int8)
        n = len(self.landmarks)
        if self.mask.shape != (n,) or self.occlusion.shape != (n,):
            raise DatasetError(f"record {self.id}: mask/occlusion length must equal {n} landmarks")
        for name, arr in (("mask", self.mask), ("occlusion", self.occlusion)):
            if not np.all((arr == 0) | (arr == 1)):
                raise DatasetError(f"record {self.id}: {name} must be binary")
        for d in range(n):
            if self.mask[d] and not np.all(np.isfinite(self.landmarks[d])):
                raise DatasetError(f"record {self.id}: landmark {d} is annotated (mask=1) but null")
        i, j = self.normalizer
        self.normalizer = (int(i), int(j))
        if self.normalizer_kind not in NORMALIZER_KINDS:
            raise DatasetError(f"record {self.id}: unknown normalizer kind {self.normalizer_kind!r}")
        if not all(0 <= k < n for k in self.normalizer):
            raise DatasetError(f"record {self.id}: normalizer index out of range")

    @property
    def n_landmarks(self) -> int:
        return len(self.landmarks)

    def to_json(self) -> dict:
        lms = [[float(x), float(y)] if np.isfinite(x) and np.isfinite(y) else None
               for x, y in self.landmarks]
        out = {
            "id": self.id,
            "image": self.image,
            "box": [float(v) for v in self.box.as_list()],
            "landmarks": lms,
            "mask": self.mask.tolist(),
            "occlusion": self.occlusion.tolist(),
            "normalizer": list(self.normalizer),
            "normalizer_kind": self.normalizer_kind,
        }
        if self.occluders:
            out["occluders"] = [[float(v) for v in r] for r in self.occluders]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SampleRecord":
        if not isinstance(obj, dict):
            raise DatasetError("record must be a JSON object")
        unknown = set(obj) - _REQUIRED - _OPTIONAL
        if unknown:
            raise DatasetError(f"unknown field(s): {', '.join(sorted(unknown))}")
        missing = _REQUIRED - set(obj)
        if missing:
            raise DatasetError(f"missing field(s): {', '.join(sorted(missing))}")
        lms = [[np.nan, np.nan] if pt is None else pt for pt in obj["landmarks"]]
        mask = obj["mask"]
        for d, (pt, m) in enumerate(zip(obj["landmarks"], mask)):
            if m and pt is None:
                raise DatasetError(f"landmark {d} has mask=1 but is null")
        try:
            box = FaceBox(*obj["box"])
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"bad box: {exc}") from None
        return cls(
            id=str(obj["id"]),
            image=str(obj["image"]),
            box=box,
            landmarks=np.array(lms, dtype=float),
            mask=mask,
            occlusion=obj["occlusion"],
            normalizer=tuple(obj["normalizer"]),
            normalizer_kind=obj.get("normalizer_kind", "inter-ocular"),
            occluders=[list(r) for r in obj.get("occluders", [])],
        )


def save_dataset(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def load_dataset(path, check_images: bool = True) -> list[SampleRecord]:
    """Parse a JSON-lines dataset; errors carry the offending line number."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    records = []
    n_landmarks = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = SampleRecord.from_json(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if n_landmarks is None:
                n_landmarks = rec.n_landmarks
            elif rec.n_landmarks != n_landmarks:
                raise DatasetError(f"{path}:{lineno}: {rec.n_landmarks} landmarks, "
                                   f"expected {n_landmarks} as in earlier records")
            if check_images and not (path.parent / rec.image).exists():
                raise DatasetError(f"{path}:{lineno}: image not found: {rec.image}")
            records.append(rec)
    return records


def image_path(record: SampleRecord, dataset_path) -> Path:
    return Path(dataset_path).parent / record.image


def write_pgm(path, image) -> None:
    """Binary (P5) 8-bit PGM."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos + 1)
    return pixels.reshape(height, width).copy()
