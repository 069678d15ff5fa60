"""Weight containers: a numpy ``.npz`` archive plus a JSON metadata entry.

Layout::

    __meta__          0-d unicode array holding a JSON object
    <group>/<name>    one float64 array per named tensor

Entries are written in sorted order without pickling, so equal contents
give byte-identical files.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

META_KEY = "__meta__"


def save_arrays(path, groups: dict[str, dict[str, np.ndarray]], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {META_KEY: np.array(json.dumps(meta, sort_keys=True))}
    for group, arrays in groups.items():
        for name, arr in arrays.items():
            entries[f"{group}/{name}"] = np.asarray(arr, dtype=np.float64)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for key in sorted(entries):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, entries[key], allow_pickle=False)
            info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_arrays(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    groups: dict[str, dict[str, np.ndarray]] = {}
    meta: dict = {}
    with np.load(path, allow_pickle=False) as npz:
        for key in npz.files:
            if key == META_KEY:
                meta = json.loads(str(npz[key]))
                continue
            group, _, name = key.partition("/")
            groups.setdefault(group, {})[name] = npz[key]
    return groups, meta
