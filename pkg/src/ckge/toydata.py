"""Learnable synthetic knowledge graphs for desk-scale experiments.

Entities get hidden positions in a low-dimensional space and every relation a
hidden translation. A triple ``(h, r, t)`` is emitted when ``t`` is among the
few entities nearest to ``pos[h] + shift[r]``, so translational and bilinear
models can recover a good share of held-out facts.
"""
from __future__ import annotations

import numpy as np


def latent_kg(n_entities: int, n_relations: int, n_triples: int, seed: int = 0, latent_dim: int = 6,
              fanout: int = 3, prefix: str = "") -> list[tuple[str, str, str]]:
    """``n_triples`` distinct name triples (fewer only if the hidden structure runs out)."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(n_entities, latent_dim))
    shift = rng.normal(scale=1.0, size=(n_relations, latent_dim))
    # relations are used with skewed frequency, as in real graphs
    rel_p = 1.0 / np.arange(1, n_relations + 1) ** 0.7
    rel_p /= rel_p.sum()
    seen: set = set()
    out = []
    budget = n_triples * 20
    while len(out) < n_triples and budget > 0:
        m = min(max(64, (1 << 22) // n_entities), 2 * (n_triples - len(out)))
        budget -= m
        h = rng.integers(0, n_entities, size=m)
        r = rng.choice(n_relations, size=m, p=rel_p)
        target = pos[h] + shift[r]
        d2 = ((target[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
        d2[np.arange(m), h] = np.inf
        near = np.argpartition(d2, fanout, axis=1)[:, :fanout]
        t = near[np.arange(m), rng.integers(0, fanout, size=m)]
        for a, b, c in zip(h.tolist(), r.tolist(), t.tolist()):
            if (a, b, c) not in seen:
                seen.add((a, b, c))
                out.append((a, b, c))
                if len(out) == n_triples:
                    break
    width_e = len(str(n_entities - 1))
    width_r = len(str(n_relations - 1))
    return [(f"{prefix}e{a:0{width_e}d}", f"{prefix}r{b:0{width_r}d}", f"{prefix}e{c:0{width_e}d}")
            for a, b, c in out]


BUNDLED_BASE = dict(n_entities=600, n_relations=12, n_triples=6000, seed=0)
BUNDLED_TOY = dict(n_entities=60, n_relations=4, n_triples=360, seed=1)
BUNDLED_TOY_SCENARIO = dict(kind="entity-growth", n_snapshots=3, seed=0)


def build_bundled(out_dir) -> None:
    """Regenerate ``base.tsv`` and the 3-snapshot ``toy`` directory shipped in ``ckge/data``."""
    from pathlib import Path

    from .kgstore import save_snapshot_sequence, write_triples_tsv
    from .snapgen import GrowthScenario, generate_snapshots

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_triples_tsv(out / "base.tsv", latent_kg(**BUNDLED_BASE))
    toy = generate_snapshots(latent_kg(**BUNDLED_TOY), GrowthScenario(**BUNDLED_TOY_SCENARIO))
    save_snapshot_sequence(toy, out / "toy")


def bundled_dir():
    from pathlib import Path

    return Path(__file__).parent / "data"
