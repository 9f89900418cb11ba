"""Keyed, counter-based random streams.

A stream is a Philox generator whose key is derived from ``(seed, *keys)``;
the counter then advances once per draw, so draw ``i`` of a stream plays the
role of the per-coordinate counter.  Streams for different workers, steps or
purposes never share state, which keeps simulated workers and reruns
reproducible regardless of execution order.
"""

from __future__ import annotations

import numpy as np

PURPOSE_QUANTIZE = 1
PURPOSE_BATCH = 2
PURPOSE_STATS = 3
PURPOSE_STREAM = 4


def stream(seed: int, *keys: int) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32 & 0xFFFFFFFF]
    words += [int(k) for k in keys]
    ss = np.random.SeedSequence(words)
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))
