# Copyright (C) 2024 The pocketforge authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union
import csv
import json
import logging
import zlib

import numpy as np

from .cloud import CloudLike, PointCloud, SplitPlane, as_points
from .config import TEXT_PRECISION

PathLike = Union[str, Path]


def substream(seed: int, *names: Union[str, int]) -> np.random.Generator:
    """
    Derive an independent generator for a named component.

    All randomness flows from one integer seed; the names select a
    reproducible sub-stream (``substream(7, "train", "epoch", 3)``).
    Names are hashed with CRC-32 so the stream does not depend on the
    interpreter's string-hash salt.
    """
    key = [
        n if isinstance(n, int) else zlib.crc32(str(n).encode("utf-8"))
        for n in names
    ]
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    )


def _format_float(value: float) -> str:
    return f"{value:.{TEXT_PRECISION}g}"


def write_cloud(path: PathLike, cloud: CloudLike) -> Path:
    """
    Write a cloud in the text format: one ``x y z`` line per point,
    single spaces, ``\\n`` endings, no header.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        " ".join(_format_float(v) for v in row)
        for row in as_points(cloud)
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        file.write("\n".join(lines) + "\n")
    logging.debug("Cloud written: %s", path)
    return path


def read_cloud(path: PathLike) -> PointCloud:
    """
    Read a text-format cloud.

    Raises:
        OSError: the file cannot be opened.
        ValueError: a line is malformed; the message names the line.
    """
    path = Path(path)
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8") as file:
        for number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ValueError(
                    f"{path}:{number}: expected 3 values, "
                    f"got {len(fields)}"
                )
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise ValueError(f"{path}:{number}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: empty cloud")
    try:
        return PointCloud(np.array(rows))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def write_plane(path: PathLike, plane: SplitPlane) -> Path:
    """Write a plane record: ``nx ny nz offset`` on one line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        " ".join(_format_float(v) for v in plane.as_record()) + "\n",
        encoding="utf-8",
    )
    return path


def write_ply(path: PathLike, cloud: CloudLike) -> Path:
    """ASCII PLY export, vertices only."""
    pts = as_points(cloud)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    body = [" ".join(_format_float(v) for v in row) for row in pts]
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        file.write("\n".join(header + body) + "\n")
    logging.debug("PLY file written: %s", path)
    return path


def write_csv(
    path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Path:
    """
    Write a CSV file with a header row.

    Floats are written with ``repr`` so values round-trip exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, mode="w", newline="", encoding="utf-8") as file:
        csv_writer = csv.writer(file, lineterminator="\n")
        csv_writer.writerow(header)
        for row in rows:
            csv_writer.writerow(
                [repr(v) if isinstance(v, float) else v for v in row]
            )
    logging.info("CSV file generated: %s", path)
    return path


def write_json(path: PathLike, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logging.info("JSON file generated: %s", path)
    return path


def read_json(path: PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from exc
