"""JSON encoding of matrices: nested lists of ``[re, im]`` pairs.

Python's float repr round-trips exactly, so decode(encode(M)) == M bitwise.
"""

import json
import os
import tempfile

import numpy as np

from .core import Field

SCHEMA = 1


def matrix_to_json(M):
    M = np.asarray(M)
    re = np.real(M).tolist()
    im = np.imag(M).tolist() if np.iscomplexobj(M) else np.zeros(M.shape).tolist()
    return _pair(re, im)


def _pair(re, im):
    if isinstance(re, list):
        return [_pair(a, b) for a, b in zip(re, im)]
    return [float(re), float(im)]


def matrix_from_json(data, field=None):
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise ValueError("matrix entries must be [re, im] pairs")
    M = arr[..., 0] + 1j * arr[..., 1]
    if field is None:
        field = Field.COMPLEX if np.any(arr[..., 1] != 0) else Field.REAL
    if Field.parse(field) is Field.REAL:
        if np.any(arr[..., 1] != 0):
            raise ValueError("real matrix with nonzero imaginary part")
        return np.ascontiguousarray(arr[..., 0])
    return np.ascontiguousarray(M)


def dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and a rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
