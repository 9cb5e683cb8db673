"""Named deterministic random substreams.

Each concern (mobility, attack, defense, traffic) pulls from its own
`random.Random` seeded by hash(master_seed, name), so draws in one stream
never shift when another stream is consulted more or less often.
"""

from __future__ import annotations

import hashlib
import random


def _derive_seed(master_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class RngStreams:
    def __init__(self, master_seed: int):
        self.master_seed = master_seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            rng = random.Random(_derive_seed(self.master_seed, name))
            self._streams[name] = rng
        return rng

    # Shorthands for the standard concerns.
    def mobility(self, node_id: int) -> random.Random:
        return self.stream(f"mobility:{node_id}")

    @property
    def attack(self) -> random.Random:
        return self.stream("attack")

    @property
    def defense(self) -> random.Random:
        return self.stream("defense")

    @property
    def traffic(self) -> random.Random:
        return self.stream("traffic")
