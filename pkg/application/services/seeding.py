"""
Seed splitting rule.

Every random stream in a run is derived from the single top-level seed and a
tuple of integer stream ids: derive_seed(seed, *ids) hashes [seed, *ids]
through numpy's SeedSequence. Distinct id tuples give independent streams, so
components never share a generator.
"""

import numpy as np

# Top-level stream ids
STREAM_INIT = 1
STREAM_FM_BATCHES = 2
STREAM_GRPO_GROUPS = 3
STREAM_EVAL_NOISE = 4
STREAM_MONTE_CARLO = 5


def derive_seed(seed: int, *stream_ids: int) -> int:
    entropy = [int(seed), *(int(s) for s in stream_ids)]
    if any(v < 0 for v in entropy):
        raise ValueError(f"Seeds and stream ids must be non-negative, got {entropy}")
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *stream_ids: int) -> np.random.Generator:
    if not stream_ids:
        return np.random.default_rng(int(seed))
    return np.random.default_rng(derive_seed(seed, *stream_ids))
