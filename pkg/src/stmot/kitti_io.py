"""KITTI tracking label parsing and writing.

Line layout (space-delimited): frame, track_id, type, truncated, occluded,
alpha, four 2D bbox fields, h, w, l, x, y, z, rotation_y and an optional
trailing score. DontCare rows are dropped at parse time. Parsers reject
rather than repair: malformed lines raise with the file and line number.

Field values are carried through verbatim: ingestion performs no
camera-to-ground transform, so a record's (x, y, z) becomes the box center
as-is and rotation_y becomes the yaw. Floats are written with repr, which
round-trips exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .geometry import Box3D

CLASS_IDS = {
    "Car": 0,
    "Van": 1,
    "Truck": 2,
    "Pedestrian": 3,
    "Person_sitting": 4,
    "Cyclist": 5,
    "Tram": 6,
    "Misc": 7,
}
CLASS_NAMES = {v: k for k, v in CLASS_IDS.items()}

# Result rows carry no 2D information; these markers fill the unused fields.
PLACEHOLDER = -1.0
ALPHA_UNKNOWN = -10.0


class KittiParseError(ValueError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


@dataclass
class KittiRecord:
    frame: int
    track_id: int
    type: str
    truncated: float
    occluded: float
    alpha: float
    bbox: tuple[float, float, float, float]
    height: float
    width: float
    length: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: float | None = None


def parse_tracking_file(path) -> list[KittiRecord]:
    """Parse a label or result file; DontCare filtered, records sorted by frame."""
    records: list[KittiRecord] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) not in (17, 18):
                raise KittiParseError(path, line_no,
                                      f"expected 17 or 18 fields, got {len(fields)}")
            if fields[2] == "DontCare":
                continue
            try:
                rec = KittiRecord(
                    frame=int(fields[0]),
                    track_id=int(fields[1]),
                    type=fields[2],
                    truncated=float(fields[3]),
                    occluded=float(fields[4]),
                    alpha=float(fields[5]),
                    bbox=tuple(float(v) for v in fields[6:10]),
                    height=float(fields[10]),
                    width=float(fields[11]),
                    length=float(fields[12]),
                    x=float(fields[13]),
                    y=float(fields[14]),
                    z=float(fields[15]),
                    rotation_y=float(fields[16]),
                    score=float(fields[17]) if len(fields) == 18 else None,
                )
            except ValueError as exc:
                raise KittiParseError(path, line_no, f"bad field value: {exc}") from None
            records.append(rec)
    records.sort(key=lambda r: r.frame)  # stable: in-frame order preserved
    return records


def format_record(rec: KittiRecord) -> str:
    fields = [
        str(rec.frame), str(rec.track_id), rec.type,
        repr(rec.truncated), repr(rec.occluded), repr(rec.alpha),
        *(repr(v) for v in rec.bbox),
        repr(rec.height), repr(rec.width), repr(rec.length),
        repr(rec.x), repr(rec.y), repr(rec.z), repr(rec.rotation_y),
    ]
    if rec.score is not None:
        fields.append(repr(rec.score))
    return " ".join(fields)


def write_tracking_file(path, records: list[KittiRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(format_record(rec) + "\n")


def box_from_record(rec: KittiRecord) -> Box3D:
    """Direct field mapping: center (x, y, z), dims (l, w, h), yaw = rotation_y."""
    score = rec.score if rec.score is not None else 1.0
    return Box3D(center=(rec.x, rec.y, rec.z),
                 dims=(rec.length, rec.width, rec.height),
                 yaw=rec.rotation_y,
                 score=score,
                 class_id=CLASS_IDS.get(rec.type, -1))


def record_from_box(frame: int, track_id: int, box: Box3D,
                    with_score: bool = True) -> KittiRecord:
    return KittiRecord(
        frame=frame,
        track_id=track_id,
        type=CLASS_NAMES.get(box.class_id, "Car"),
        truncated=PLACEHOLDER,
        occluded=PLACEHOLDER,
        alpha=ALPHA_UNKNOWN,
        bbox=(PLACEHOLDER, PLACEHOLDER, PLACEHOLDER, PLACEHOLDER),
        height=box.dims[2],
        width=box.dims[1],
        length=box.dims[0],
        x=box.center[0],
        y=box.center[1],
        z=box.center[2],
        rotation_y=box.yaw,
        score=box.score if with_score else None,
    )


def records_to_frames(records: list[KittiRecord]) -> dict[int, list[tuple[int, Box3D]]]:
    """Group into frame -> [(track_id, box)] keeping in-frame order."""
    frames: dict[int, list[tuple[int, Box3D]]] = {}
    for rec in records:
        frames.setdefault(rec.frame, []).append((rec.track_id, box_from_record(rec)))
    return frames
