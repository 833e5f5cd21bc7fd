"""File formats used by the command-line tools.

* locations: CSV ``id,x,y``
* functions: CSV ``id,v_0,...,v_{m-1}``; an optional first data row with id
  ``__grid__`` lists the grid points, otherwise the uniform grid on [0, 1]
* curves: JSON, either one curve object, a list of them, or ``{"curves": [...]}``
* known mean: CSV with a single row of ``m`` values (optionally ``id``-prefixed
  with ``mean`` and preceded by a header), or the literal ``identity``
* model: JSON ``{"nugget_trace": x, "components": [{"sill": s, "range": r}, ...]}``

Parse failures raise :class:`~funcwomble.errors.InputError` naming the file
and, where it applies, the line and column.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .covmodel import BinnedCloud, CovarianceModel
from .errors import InputError
from .fdata import Grid
from .geometry import Curve
from .womble import SpatialDataset

GRID_ROW = "__grid__"


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_rows(path) -> list[list[str]]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    with path.open(newline="") as fh:
        return [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]


def _float(path, line: int, col: int, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"{path}:{line}:{col}: cannot parse {text!r} as a number") from None
    if not np.isfinite(value):
        raise InputError(f"{path}:{line}:{col}: value {text!r} is not finite")
    return value


def read_locations(path) -> tuple[list[str], np.ndarray]:
    rows = _read_rows(path)
    if not rows or [c.strip() for c in rows[0]] != ["id", "x", "y"]:
        raise InputError(f"{path}:1: expected header 'id,x,y'")
    ids, coords = [], []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise InputError(f"{path}:{line}: expected 3 columns, found {len(row)}")
        ids.append(row[0].strip())
        coords.append([_float(path, line, c + 1, row[c]) for c in (1, 2)])
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate location ids")
    return ids, np.array(coords, dtype=float).reshape(-1, 2)


def read_functions(path) -> tuple[list[str], np.ndarray, Grid]:
    rows = _read_rows(path)
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    m = len(header) - 1
    if header[0] != "id" or m < 2:
        raise InputError(f"{path}:1: expected header 'id,v_0,...,v_{{m-1}}' with at least two grid columns")
    body = list(enumerate(rows[1:], start=2))
    grid = None
    ids, values = [], []
    for line, row in body:
        if len(row) != m + 1:
            raise InputError(f"{path}:{line}: expected {m + 1} columns, found {len(row)}")
        vals = [_float(path, line, c + 2, cell) for c, cell in enumerate(row[1:])]
        if row[0].strip() == GRID_ROW:
            if grid is not None or values:
                raise InputError(f"{path}:{line}: the {GRID_ROW} row must come first")
            try:
                grid = Grid(vals)
            except InputError as exc:
                raise InputError(f"{path}:{line}: {exc}") from None
            continue
        ids.append(row[0].strip())
        values.append(vals)
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate function ids")
    return ids, np.array(values, dtype=float).reshape(-1, m), grid or Grid.uniform(m)


def read_mean(source, grid: Grid) -> np.ndarray:
    """Known mean on ``grid``; ``"identity"`` gives ``mu(t) = t``."""
    if str(source) == "identity":
        return grid.points.copy()
    rows = _read_rows(source)
    rows = [r for r in rows if not (r[0].strip() in ("id", "t") or r[0].strip().startswith("v_"))]
    if len(rows) != 1:
        raise InputError(f"{source}: expected exactly one row of mean values")
    row = rows[0]
    offset = 1 if row[0].strip() == "mean" else 0
    vals = [_float(source, 1, c + 1 + offset, cell) for c, cell in enumerate(row[offset:])]
    if len(vals) != len(grid):
        raise InputError(f"{source}: mean has {len(vals)} values but the grid has {len(grid)} points")
    return np.array(vals)


def read_curves(path) -> list[Curve]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if isinstance(doc, dict) and "curves" in doc:
        doc = doc["curves"]
    items = doc if isinstance(doc, list) else [doc]
    if not items or not all(isinstance(item, dict) for item in items):
        raise InputError(f"{path}: expected curve objects")
    curves = [Curve.from_dict(item) for item in items]
    names = [c.name for c in curves]
    if len(set(names)) != len(names):
        raise InputError(f"{path}: duplicate curve names")
    return curves


def read_model(path) -> CovarianceModel:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    try:
        return CovarianceModel.from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid model ({exc})") from None


def load_dataset(locations, functions, mean=None) -> SpatialDataset:
    """Join locations and functions on ``id``; rows follow the locations file."""
    loc_ids, coords = read_locations(locations)
    fn_ids, values, grid = read_functions(functions)
    missing = sorted(set(loc_ids) ^ set(fn_ids))
    if missing:
        raise InputError(f"ids present in only one of {locations}, {functions}: {', '.join(missing[:5])}")
    order = {k: i for i, k in enumerate(fn_ids)}
    values = values[[order[k] for k in loc_ids]]
    known = None if mean is None else read_mean(mean, grid)
    return SpatialDataset(coords, values, grid, known_mean=known, ids=loc_ids)


# ---------------------------------------------------------------------------
# writers


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_csv(path, header: Sequence[str], rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_locations(path, ids: Sequence[str], locations: np.ndarray) -> None:
    write_csv(path, ["id", "x", "y"], ([i, _fmt(x), _fmt(y)] for i, (x, y) in zip(ids, locations)))


def write_functions(path, ids: Sequence[str], values: np.ndarray, grid: Grid) -> None:
    header = ["id"] + [f"v_{k}" for k in range(len(grid))]
    rows = [[GRID_ROW] + [_fmt(t) for t in grid.points]]
    rows += [[i] + [_fmt(v) for v in row] for i, row in zip(ids, values)]
    write_csv(path, header, rows)


def write_mean(path, mean: np.ndarray) -> None:
    write_csv(path, ["id"] + [f"v_{k}" for k in range(len(mean))], [["mean"] + [_fmt(v) for v in mean]])


def write_curves(path, curves: Sequence[Curve]) -> None:
    write_json(path, {"curves": [c.to_dict() for c in curves]})


def write_model(path, model: CovarianceModel) -> None:
    write_json(path, model.to_dict())


def write_cloud(path, binned: BinnedCloud) -> None:
    write_csv(
        path,
        ["dist", "value", "count"],
        ([_fmt(d), _fmt(v), int(c)] for d, v, c in zip(binned.distances, binned.values, binned.counts)),
    )


def write_dataset(directory, data: SpatialDataset, curves: Sequence[Curve] = ()) -> dict[str, Path]:
    """Write ``locations.csv``, ``functions.csv``, ``mean.csv`` and ``curves.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = data.ids or [f"s{i:04d}" for i in range(data.n)]
    paths = {
        "locations": directory / "locations.csv",
        "functions": directory / "functions.csv",
    }
    write_locations(paths["locations"], ids, data.locations)
    write_functions(paths["functions"], ids, data.values, data.grid)
    if data.known_mean is not None:
        paths["mean"] = directory / "mean.csv"
        write_mean(paths["mean"], data.known_mean)
    if curves:
        paths["curves"] = directory / "curves.json"
        write_curves(paths["curves"], curves)
    return paths
