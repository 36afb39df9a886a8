import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

SCHEMA_VERSION = 1


def _atomic_write_text(text: str, dest_path: Path):
    """Write text to a sibling temp file, then rename it over ``dest_path``."""
    dest_path = Path(dest_path)
    dest_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(
        dir=dest_path.parent, prefix=f".{dest_path.name}.", suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp_name, dest_path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def _to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars and arrays into plain Python objects."""
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def save_json(document: dict, dest_path: Path, versioned: bool = True):
    """
    Save a JSON document atomically.

    Floats are written with ``repr``, the shortest decimal string that
    parses back to the same 64-bit value, so arrays round-trip bit-exactly.

    Parameters
    ----------
    document : dict
        The document to save. Numpy arrays and scalars are converted.
    dest_path : pathlib.Path
        Destination file, must end in ``.json``.
    versioned : bool, optional
        Prepend a ``schema_version`` field, by default True.
    """
    dest_path = Path(dest_path)
    if dest_path.suffix != ".json":
        raise ValueError(
            f"File extension {dest_path.suffix} is not valid. "
            f"Expected file path to end in .json"
        )
    payload = _to_jsonable(document)
    if versioned:
        payload = {"schema_version": SCHEMA_VERSION, **payload}
    text = json.dumps(payload, indent=2, allow_nan=False) + "\n"
    _atomic_write_text(text, dest_path)


def load_json(src_path: Path) -> dict:
    """Load a JSON document, checking its schema version when present."""
    with open(src_path, encoding="utf-8") as fh:
        document = json.load(fh)
    version = document.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"Unsupported schema_version {version} in {src_path}. "
            f"Expected {SCHEMA_VERSION}"
        )
    return document


def save_table_to_csv(table: pd.DataFrame, file_path: Path):
    """
    Save a table to a csv file atomically, without the index column.
    """
    file_path = Path(file_path)
    if file_path.suffix != ".csv":
        raise ValueError(
            f"File extension {file_path.suffix} is not valid. "
            f"Expected file path to end in .csv"
        )
    _atomic_write_text(
        table.to_csv(index=False, lineterminator="\n"), file_path
    )
