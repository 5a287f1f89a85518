"""Writer for the tensor-exchange format.

Deliberately self-contained: the consumer side lives in a different
package and the file layout is the only shared contract.  Line 1 is a
JSON header, the rest is the raw little-endian row-major payload.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

_DTYPES = {"i8": np.int8, "i16": np.int16, "i32": np.int32}


def write_exchange(values: np.ndarray, dtype: str, path: str | os.PathLike) -> None:
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    np_dtype = _DTYPES[dtype]
    info = np.iinfo(np_dtype)
    arr = np.asarray(values)
    if arr.size and (arr.min() < info.min or arr.max() > info.max):
        raise OverflowError(f"values exceed {dtype} range")
    header = {
        "dtype": dtype,
        "shape": list(arr.shape),
        "order": "row-major",
        "endian": "little",
    }
    payload = np.ascontiguousarray(arr).astype(np.dtype(np_dtype).newbyteorder("<"))
    directory = os.path.dirname(os.fspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(json.dumps(header).encode("ascii") + b"\n")
            f.write(payload.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
