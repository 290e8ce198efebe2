"""File storage for losscape.

This module handles:
1. Reading and writing dataset CSVs with a "# d= m= mode=" header line
2. Saving and loading network parameters as JSON
3. Writing certification reports, histories and tables
4. Writing every file atomically (temporary file, then rename)
"""

import json
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd  # type: ignore[import-untyped]

from losscape.activations import make_activation
from losscape.losses import DatasetError, LabeledDataset
from losscape.models import ParamsDocument
from losscape.network import NetworkParams

PathLike = Union[str, Path]
Mode = Literal["regression", "classification"]

HEADER_PATTERN = re.compile(
    r"^#\s*d=(?P<d>\d+)\s+m=(?P<m>\d+)\s+mode=(?P<mode>regression|classification)\s*$"
)


class StoreError(ValueError):
    """Exception raised for unreadable or malformed files."""

    pass


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write text to path through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", dir=path.parent, prefix=f".{path.name}.", suffix=".tmp", delete=False
    )
    try:
        with handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(handle.name, path)
    except BaseException:
        Path(handle.name).unlink(missing_ok=True)
        raise
    return path


def to_jsonable(value: Any) -> Any:
    """Plain Python values for json.dumps; NaN and Inf become None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return number if math.isfinite(number) else None
    return value


def dumps(document: Any) -> str:
    # float repr is the shortest string that round-trips, at most 17 digits
    return json.dumps(to_jsonable(document), indent=2, allow_nan=False) + "\n"


def write_json(path: PathLike, document: Any) -> Path:
    return atomic_write_text(path, dumps(document))


def read_json(path: PathLike) -> Any:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise StoreError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None


def write_frame(path: PathLike, df: pd.DataFrame) -> Path:
    """Save a dataframe as CSV without the index."""
    return atomic_write_text(path, df.to_csv(index=False))


def _read_header(path: Path) -> Tuple[int, int, Mode]:
    with open(path, "r") as f:
        first = f.readline().strip()
    match = HEADER_PATTERN.match(first)
    if not match:
        raise StoreError(
            f"{path}, line 1: expected a header "
            "'# d=<d> m=<m> mode=<regression|classification>'"
        )
    d, m = int(match["d"]), int(match["m"])
    if d < 1 or m < 1:
        raise StoreError(f"{path}, line 1: d and m must be positive")
    return d, m, match["mode"]  # type: ignore[return-value]


def _read_table(path: Path, columns: int) -> npt.NDArray[np.float64]:
    try:
        df = pd.read_csv(
            path, header=None, skiprows=1, skipinitialspace=True, dtype=str
        )
    except pd.errors.EmptyDataError:
        raise StoreError(f"{path}: no samples after the header") from None
    except pd.errors.ParserError as e:
        raise StoreError(f"{path}: {e}") from None

    if df.shape[1] != columns:
        raise StoreError(
            f"{path}, line 2: expected {columns} columns, found {df.shape[1]}"
        )

    numeric = df.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy() | ~np.isfinite(numeric.to_numpy(dtype=np.float64))
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        raise StoreError(
            f"{path}, line {row + 2}, column {col + 1}: "
            f"'{df.iat[row, col]}' is not a finite number"
        )
    return numeric.to_numpy(dtype=np.float64)


def read_labeled_features(
    path: PathLike,
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.int64], int]:
    """Read a classification CSV as (features, 0-based classes, m).

    Identical feature rows are allowed here.
    """
    path = Path(path)
    d, m, mode = _read_header(path)
    if mode != "classification":
        raise StoreError(f"{path}, line 1: expected mode=classification")
    table = _read_table(path, d + 1)
    labels = table[:, d]
    for row, label in enumerate(labels):
        if label != round(label) or not 1 <= label <= m:
            raise StoreError(
                f"{path}, line {row + 2}: class {label:g} is not an integer in [1, {m}]"
            )
    return table[:, :d], labels.astype(np.int64) - 1, m


def read_dataset(
    path: PathLike, label_encoding: Tuple[float, float] = (1.0, -1.0)
) -> LabeledDataset:
    """Read a dataset CSV.

    The first line is "# d=<d> m=<m> mode=<regression|classification>". Each
    following line holds d features, then m targets (regression) or one class
    in [1, m] (classification).

    Raises:
        StoreError: Naming the file and line of the first problem
    """
    path = Path(path)
    d, m, mode = _read_header(path)
    try:
        if mode == "classification":
            X, classes, m = read_labeled_features(path)
            return LabeledDataset.from_classes(X, classes, m, label_encoding)
        table = _read_table(path, d + m)
        return LabeledDataset(X=table[:, :d], Y=table[:, d:])
    except DatasetError as e:
        match = re.match(r"Samples (\d+) and (\d+) are identical", str(e))
        if match:
            i, j = int(match[1]), int(match[2])
            raise StoreError(
                f"{path}, lines {i + 2} and {j + 2}: identical samples"
            ) from None
        raise StoreError(f"{path}: {e}") from None


def write_dataset(path: PathLike, data: LabeledDataset) -> Path:
    """Write a dataset in the format read_dataset accepts; classes become 1-based."""
    rows: List[str]
    if data.is_classification:
        header = f"# d={data.input_dim} m={data.output_dim} mode=classification"
        rows = [
            ",".join([*(repr(float(v)) for v in x), str(int(c) + 1)])
            for x, c in zip(data.X, data.classes)  # type: ignore[arg-type]
        ]
    else:
        header = f"# d={data.input_dim} m={data.output_dim} mode=regression"
        rows = [
            ",".join(repr(float(v)) for v in np.concatenate([x, y]))
            for x, y in zip(data.X, data.Y)
        ]
    return atomic_write_text(path, "\n".join([header, *rows]) + "\n")


def params_to_dict(params: NetworkParams) -> ParamsDocument:
    """Params document with row-major weight arrays."""
    return {
        "widths": list(params.architecture.widths),
        "activation": params.activation.name,
        "alpha": params.activation.alpha,
        "weights": [W.tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(document: Any, source: str = "params") -> NetworkParams:
    """Rebuild NetworkParams, checking shapes against the declared widths.

    Raises:
        StoreError: Naming the offending field
    """
    if not isinstance(document, dict):
        raise StoreError(f"{source}: expected a JSON object")
    for key in ("widths", "activation", "weights", "biases"):
        if key not in document:
            raise StoreError(f"{source}: missing field '{key}'")
    try:
        activation = make_activation(
            document["activation"],
            float(document.get("alpha", 1.0)),
            allow_identity=True,
        )
        params = NetworkParams(
            tuple(np.asarray(W, dtype=np.float64) for W in document["weights"]),
            tuple(np.asarray(b, dtype=np.float64) for b in document["biases"]),
            activation,
        )
    except (TypeError, ValueError) as e:
        raise StoreError(f"{source}: {e}") from None
    if list(params.architecture.widths) != list(document["widths"]):
        raise StoreError(
            f"{source}: field 'widths' is {document['widths']} but the weights have "
            f"widths {list(params.architecture.widths)}"
        )
    return params


def save_params(
    path: PathLike, params: NetworkParams, extra: Optional[Dict[str, Any]] = None
) -> Path:
    document: Dict[str, Any] = dict(params_to_dict(params))
    if extra:
        document.update(extra)
    return write_json(path, document)


def load_params(path: PathLike) -> NetworkParams:
    return params_from_dict(read_json(path), source=str(path))
