"""Named random streams derived from one master seed.

``stream(seed, "path")`` always yields the same generator for the same pair,
independently of every other label, so e.g. changing the search stream can
never perturb training draws.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "path", "data", "search")


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), label_key(label)])))


def get_state(gen: np.random.Generator) -> np.ndarray:
    """Bit generator state as 10 exactly-representable float64 values."""
    st = gen.bit_generator.state
    words = []
    for big in (st["state"]["state"], st["state"]["inc"]):
        words.extend(float((big >> (32 * i)) & 0xFFFFFFFF) for i in range(4))
    words += [float(st["has_uint32"]), float(st["uinteger"])]
    return np.array(words)


def set_state(gen: np.random.Generator, words) -> None:
    words = [int(w) for w in words]
    if len(words) != 10:
        raise ValueError(f"expected 10 state words, got {len(words)}")

    def join(chunk):
        return sum(w << (32 * i) for i, w in enumerate(chunk))

    gen.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": join(words[0:4]), "inc": join(words[4:8])},
        "has_uint32": words[8],
        "uinteger": words[9],
    }
