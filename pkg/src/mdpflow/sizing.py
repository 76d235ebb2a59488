"""Deterministic byte-size accounting for values carried by datasets.

Every metered quantity in the engine (driver residency, shuffle, broadcast,
inter-module flow) is derived from :func:`size_of`. Domain value types
implement ``size_bytes()``; builtins follow the fixed rules below so memory
tests can be written as plain arithmetic.
"""

from __future__ import annotations

from typing import Any, Protocol, runtime_checkable

import numpy as np

SCALAR_BYTES = 8
SLOT_TAG_BYTES = 8


@runtime_checkable
class Measurable(Protocol):
    def size_bytes(self) -> int: ...


def size_of(value: Any) -> int:
    """Serialized size of ``value`` in bytes.

    * ``None`` -> 0
    * bool / int / float / numpy scalar -> 8
    * str -> UTF-8 length; bytes -> length
    * numpy array -> ``nbytes`` (raw numeric payload, no header)
    * tuple / list -> sum of items + 8 per item tag
    * dict -> sum of keys and values + 8 per entry
    * anything with ``size_bytes()`` -> that value
    """
    if value is None:
        return 0
    if isinstance(value, Measurable) and not isinstance(value, type):
        return int(value.size_bytes())
    if isinstance(value, (bool, int, float, np.generic)):
        return SCALAR_BYTES
    if isinstance(value, str):
        return len(value.encode("utf-8"))
    if isinstance(value, (bytes, bytearray, memoryview)):
        return len(value)
    if isinstance(value, np.ndarray):
        return int(value.nbytes)
    if isinstance(value, (tuple, list)):
        return sum(size_of(v) for v in value) + SLOT_TAG_BYTES * len(value)
    if isinstance(value, dict):
        return sum(size_of(k) + size_of(v) for k, v in value.items()) + SLOT_TAG_BYTES * len(value)
    if isinstance(value, (set, frozenset)):
        return sum(size_of(v) for v in value) + SLOT_TAG_BYTES * len(value)
    raise TypeError(f"cannot measure value of type {type(value).__name__}")


def size_of_all(values) -> int:
    return sum(size_of(v) for v in values)
