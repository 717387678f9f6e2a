"""Run configuration plumbing: nested config dicts and seed sub-streams.

All randomness in an experiment flows from one master seed; each consumer
(oracle, scenario sampling, trust-region exploration) gets its own derived
stream so adding draws in one place never perturbs another.
"""

from __future__ import annotations

import numpy as np

# Sub-stream indices under the master seed.
STREAM_ORACLE = 0
STREAM_SCENARIOS = 1
STREAM_EXPLORATION = 2


def derive_seed(master: int, stream: int) -> int:
    """Deterministic child seed for a named sub-stream."""
    return int(np.random.SeedSequence([int(master), int(stream)]).generate_state(1)[0])


def get_key(config: dict | None, dotted: str, default=None):
    """Look up a dotted key such as ``dispatch.samples`` in a nested dict."""
    node = config or {}
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def set_key(config: dict, dotted: str, value) -> None:
    """Set a dotted key, creating intermediate dicts."""
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
