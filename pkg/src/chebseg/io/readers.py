"""Whitespace-separated ASCII point formats.

semantic3d  ``x y z intensity r g b`` per row, plus a sibling ``<stem>.labels`` file with
            one integer per row. File label 0 (unlabelled) becomes IGNORE_LABEL and
            label l >= 1 becomes class index l - 1.
s3dis       ``x y z r g b label`` per row; label is the class index.
xyzl        ``x y z label`` per row (prediction files); -1 marks unlabelled points.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..core import IGNORE_LABEL, PointCloud

SEMANTIC3D = "semantic3d"
S3DIS = "s3dis"
XYZL = "xyzl"
FORMATS = (SEMANTIC3D, S3DIS, XYZL)

_ARITY = {SEMANTIC3D: 7, S3DIS: 7, XYZL: 4}


class FormatError(ValueError):
    pass


def _parse_rows(path, arity: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != arity:
                raise FormatError(f"{path}:{lineno}: expected {arity} columns, found {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                bad = next(p for p in parts if not _is_number(p))
                raise FormatError(f"{path}:{lineno}: non-numeric token {bad!r}") from None
    if not rows:
        return np.empty((0, arity))
    return np.asarray(rows, dtype=np.float64)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _parse_labels(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.strip()
            if not tok:
                continue
            try:
                out.append(int(tok))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer label {tok!r}") from None
    return np.asarray(out, dtype=np.int64)


def _int_column(values: np.ndarray, path, first_line: int = 1) -> np.ndarray:
    as_int = values.astype(np.int64)
    bad = np.flatnonzero(as_int != values)
    if len(bad):
        raise FormatError(f"{path}: row {bad[0] + first_line}: label {values[bad[0]]!r} is not an integer")
    return as_int


def labels_path_for(path) -> Path:
    return Path(path).with_suffix(".labels")


def read_xyz_label(path, fmt: str = S3DIS, labels_path=None) -> PointCloud:
    """Read one cloud; only xyz feeds the model, extra columns become attributes."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    data = _parse_rows(path, _ARITY[fmt])
    if fmt == SEMANTIC3D:
        lp = Path(labels_path) if labels_path is not None else labels_path_for(path)
        if not lp.exists():
            return PointCloud(data[:, :3], data[:, 3:], None)
        raw = _parse_labels(lp)
        if len(raw) != len(data):
            raise FormatError(f"{lp} has {len(raw)} labels but {path} has {len(data)} points")
        labels = np.where(raw == 0, IGNORE_LABEL, raw - 1)
        return PointCloud(data[:, :3], data[:, 3:], labels)
    if fmt == S3DIS:
        return PointCloud(data[:, :3], data[:, 3:6], _int_column(data[:, 6], path))
    return PointCloud(data[:, :3], None, _int_column(data[:, 3], path))


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_predictions(cloud: PointCloud, labels, path) -> None:
    """Rows ``x y z label`` with 17 significant digits (the xyzl format)."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if len(labels) != len(cloud):
        raise ValueError(f"{len(labels)} labels for {len(cloud)} points")
    lines = [
        f"{_fmt(x)} {_fmt(y)} {_fmt(z)} {lab}\n"
        for (x, y, z), lab in zip(cloud.xyz.tolist(), labels.tolist())
    ]
    with open(path, "w", newline="\n") as fh:
        fh.writelines(lines)


def write_cloud(cloud: PointCloud, path, fmt: str = S3DIS) -> None:
    """Write a labelled cloud in ``fmt``; missing attributes are written as zeros."""
    n = len(cloud)
    labels = cloud.labels if cloud.labels is not None else np.full(n, IGNORE_LABEL)
    if fmt == XYZL:
        write_predictions(cloud, labels, path)
        return
    if fmt == S3DIS:
        extra = cloud.attributes if cloud.attributes is not None and cloud.attributes.shape[1] == 3 else np.zeros((n, 3))
        with open(path, "w", newline="\n") as fh:
            for p, a, lab in zip(cloud.xyz.tolist(), extra.tolist(), labels.tolist()):
                fh.write(" ".join(map(_fmt, p + a)) + f" {lab}\n")
        return
    if fmt == SEMANTIC3D:
        extra = cloud.attributes if cloud.attributes is not None and cloud.attributes.shape[1] == 4 else np.zeros((n, 4))
        with open(path, "w", newline="\n") as fh:
            for p, a in zip(cloud.xyz.tolist(), extra.tolist()):
                fh.write(" ".join(map(_fmt, p + a)) + "\n")
        file_labels = np.where(labels == IGNORE_LABEL, 0, labels + 1)
        with open(labels_path_for(path), "w", newline="\n") as fh:
            fh.writelines(f"{v}\n" for v in file_labels.tolist())
        return
    raise ValueError(f"unknown format {fmt!r}")


def list_clouds(directory, fmt: str = S3DIS):
    """Sorted point files in a directory (``.labels`` siblings excluded)."""
    names = sorted(
        f for f in os.listdir(directory)
        if not f.endswith(".labels") and not f.startswith(".") and os.path.isfile(os.path.join(directory, f))
        and f.endswith(".txt")
    )
    return [os.path.join(directory, f) for f in names]
