import numpy as np


class ReplayBuffer:
    """Reservoir sample (algorithm R) over every training triple streamed in so far."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("replay buffer capacity must be >= 1")
        self.capacity = capacity
        self.items = np.zeros((0, 3), dtype=np.int64)
        self.seen = 0

    def __len__(self):
        return len(self.items)

    def state(self):
        return {"capacity": self.capacity, "seen": self.seen, "size": len(self.items)}


def update_buffer(buffer: ReplayBuffer, triples, rng) -> ReplayBuffer:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n = len(triples)
    if n == 0:
        return buffer
    room = max(0, buffer.capacity - len(buffer.items))
    fill, rest = triples[:room], triples[room:]
    items = np.vstack([buffer.items, fill])
    buffer.seen += len(fill)
    if len(rest):
        seen = buffer.seen + np.arange(1, len(rest) + 1)
        slots = rng.integers(0, seen)
        for i in np.nonzero(slots < buffer.capacity)[0]:
            items[slots[i]] = rest[i]
        buffer.seen += len(rest)
    buffer.items = items
    return buffer


def replay_sample(buffer: ReplayBuffer, m: int, rng) -> np.ndarray:
    """``m`` distinct buffered triples (all of them when ``m`` exceeds the size)."""
    if m <= 0 or len(buffer) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if m >= len(buffer):
        return buffer.items.copy()
    return buffer.items[rng.choice(len(buffer), size=m, replace=False)]
