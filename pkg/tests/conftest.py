import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable

from coldwarm import ColumnSchema, ingest_log


def make_log(events):
    """Build an InteractionLog from (user_key, item_key, ts[, weight]) tuples."""
    lines = []
    for e in events:
        if len(e) == 3:
            u, i, t = e
            lines.append(f"{u},{i},{t}")
        else:
            u, i, t, w = e
            lines.append(f"{u},{i},{t},{w}")
    weight = 3 if any(len(e) == 4 for e in events) else None
    schema = ColumnSchema(user=0, item=1, timestamp=2, weight=weight)
    return ingest_log(lines, schema)


def random_log(rng, n_users=12, n_items=10, n_events=80, max_gap=3):
    """Random log with increasing (tie-prone) timestamps."""
    t = 0
    events = []
    for _ in range(n_events):
        t += int(rng.integers(0, max_gap))
        events.append(
            (f"u{rng.integers(0, n_users)}", f"i{rng.integers(0, n_items)}", t)
        )
    return make_log(events)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
