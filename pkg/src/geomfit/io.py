"""File ingestion and export.

Formats (all headerless CSV unless noted):
  points           id,x,y,z[,label]
  correspondences  id,xr,yr,xc,yc[,label]
  masks            id,label            (-1 marks unlabeled)
  points (PLY)     ascii PLY with float x/y/z vertex properties

Ids must be unique; rows keep file order.  Malformed content raises
DataFormatError naming the offending line.
"""

from __future__ import annotations

import numpy as np

from .core import DataFormatError, SegmentationPrior, UNLABELED, UsageError


def _parse_rows(path, n_min: int, n_max: int):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if not n_min <= len(parts) <= n_max:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {n_min}"
                    + (f"-{n_max}" if n_max != n_min else "")
                    + f" comma-separated fields, got {len(parts)}")
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
            rows.append((lineno, values))
    return rows


def _check_ids(path, rows):
    ids = np.array([int(v[0]) for _, v in rows], dtype=np.int64)
    for (lineno, values), parsed in zip(rows, ids):
        if values[0] != parsed:
            raise DataFormatError(f"{path}:{lineno}: id must be an integer, got {values[0]!r}")
    if np.unique(ids).size != ids.size:
        raise DataFormatError(f"{path}: duplicate ids")
    return ids


def load_points_csv(path):
    """Read `id,x,y,z[,label]`; returns (ids, xyz, labels-or-None)."""
    rows = _parse_rows(path, 4, 5)
    ids = _check_ids(path, rows)
    xyz = np.array([v[1:4] for _, v in rows], dtype=float).reshape(-1, 3)
    labels = None
    if rows and len(rows[0][1]) == 5:
        if any(len(v) != 5 for _, v in rows):
            raise DataFormatError(f"{path}: mixed rows with and without a label column")
        labels = np.array([int(v[4]) for _, v in rows], dtype=np.int64)
    return ids, xyz, labels


def save_points_csv(path, ids, xyz, labels=None) -> None:
    xyz = np.asarray(xyz, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        for i, row_id in enumerate(ids):
            line = f"{int(row_id)},{xyz[i, 0]:.17g},{xyz[i, 1]:.17g},{xyz[i, 2]:.17g}"
            if labels is not None:
                line += f",{int(labels[i])}"
            fh.write(line + "\n")


def load_correspondences_csv(path):
    """Read `id,xr,yr,xc,yc[,label]`; returns (ids, ref, cur, labels-or-None)."""
    rows = _parse_rows(path, 5, 6)
    ids = _check_ids(path, rows)
    ref = np.array([v[1:3] for _, v in rows], dtype=float).reshape(-1, 2)
    cur = np.array([v[3:5] for _, v in rows], dtype=float).reshape(-1, 2)
    labels = None
    if rows and len(rows[0][1]) == 6:
        if any(len(v) != 6 for _, v in rows):
            raise DataFormatError(f"{path}: mixed rows with and without a label column")
        labels = np.array([int(v[5]) for _, v in rows], dtype=np.int64)
    return ids, ref, cur, labels


def save_correspondences_csv(path, ids, ref, cur, labels=None) -> None:
    ref = np.asarray(ref, dtype=float)
    cur = np.asarray(cur, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        for i, row_id in enumerate(ids):
            line = (f"{int(row_id)},{ref[i, 0]:.17g},{ref[i, 1]:.17g},"
                    f"{cur[i, 0]:.17g},{cur[i, 1]:.17g}")
            if labels is not None:
                line += f",{int(labels[i])}"
            fh.write(line + "\n")


def load_mask_csv(path):
    """Read `id,label`; returns (ids, labels)."""
    rows = _parse_rows(path, 2, 2)
    ids = _check_ids(path, rows)
    labels = np.array([int(v[1]) for _, v in rows], dtype=np.int64)
    return ids, labels


def save_mask_csv(path, ids, labels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row_id, label in zip(ids, labels):
            fh.write(f"{int(row_id)},{int(label)}\n")


def prior_for_points(point_ids, mask_ids, mask_labels) -> SegmentationPrior:
    """Align a mask file with a point file by id.

    Points missing from the mask stay unlabeled; mask ids that match no
    point are an error.
    """
    point_ids = np.asarray(point_ids, dtype=np.int64)
    index_of = {int(pid): i for i, pid in enumerate(point_ids)}
    labels = np.full(point_ids.size, UNLABELED, dtype=np.int64)
    for mid, lab in zip(mask_ids, mask_labels):
        pos = index_of.get(int(mid))
        if pos is None:
            raise DataFormatError(f"mask id {int(mid)} does not match any point id")
        labels[pos] = int(lab)
    return SegmentationPrior(labels)


def load_points_ply(path):
    """Read an ascii PLY with x/y/z float vertex properties.

    Extra vertex properties are tolerated and ignored.  Returns
    (ids, xyz, None) with ids assigned 0..n-1 in file order.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataFormatError(f"{path}:1: not a PLY file (missing 'ply' magic)")
    n_vertices = None
    in_vertex_element = False
    property_names = []
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            if "ascii" not in line:
                raise DataFormatError(f"{path}:{lineno}: only ascii PLY is supported")
        elif line.startswith("element"):
            parts = line.split()
            in_vertex_element = len(parts) == 3 and parts[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertices = int(parts[2])
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: bad vertex count") from None
        elif line.startswith("property") and in_vertex_element:
            property_names.append(line.split()[-1])
        elif line == "end_header":
            body_start = lineno
            break
    if body_start is None or n_vertices is None:
        raise DataFormatError(f"{path}: PLY header missing vertex element or end_header")
    try:
        cols = [property_names.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise DataFormatError(f"{path}: PLY vertex element lacks x/y/z properties") from None

    xyz = np.empty((n_vertices, 3))
    for i in range(n_vertices):
        lineno = body_start + 1 + i
        if lineno > len(lines):
            raise DataFormatError(f"{path}:{lineno}: vertex data ends early")
        parts = lines[lineno - 1].split()
        if len(parts) < len(property_names):
            raise DataFormatError(f"{path}:{lineno}: expected {len(property_names)} fields, got {len(parts)}")
        try:
            xyz[i] = [float(parts[c]) for c in cols]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric vertex field") from None
    return np.arange(n_vertices, dtype=np.int64), xyz, None


def save_points_ply(path, xyz) -> None:
    xyz = np.asarray(xyz, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {xyz.shape[0]}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for row in xyz:
            fh.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")


def load_points_any(path, fmt=None):
    """Dispatch on format name or file suffix ('csv' or 'ply')."""
    name = fmt or str(path).rsplit(".", 1)[-1].lower()
    if name == "csv":
        return load_points_csv(path)
    if name == "ply":
        return load_points_ply(path)
    raise UsageError(f"unknown points format {name!r} (expected csv or ply)")
