"""
Output writers. Every artifact echoes the config hash and seed it came from,
and nothing time-dependent is written, so reruns are byte-identical.
"""
import hashlib
import json
import logging
import os

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def make_header(config: dict, seed: int | None) -> dict:
    return {"config_sha256": config_hash(config), "seed": seed}


def _jsonable(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset, tuple)):
        return list(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def _ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_json(path, payload: dict, header: dict) -> None:
    _ensure_parent(path)
    doc = {"header": header, **payload}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")
    log.debug("wrote %s", path)


def write_csv(path, df: pd.DataFrame, header: dict) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key in ("config_sha256", "seed"):
            if key in header:
                f.write(f"# {key}={header[key]}\n")
        df.to_csv(f, index=False, lineterminator="\n")
    log.debug("wrote %s (%d rows)", path, len(df))


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
