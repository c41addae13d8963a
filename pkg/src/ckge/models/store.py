"""Embedding matrices, initialization, growth and the binary checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scoring import MODEL_KINDS, get_scorer, wrap_phase

MAGIC = b"CKGE"
VERSION = 1
_HEADER = struct.Struct("<4sIIQQQ")


class CheckpointError(Exception):
    pass


@dataclass
class EmbeddingStore:
    entity: np.ndarray
    relation: np.ndarray
    dim: int
    kind: str

    @property
    def n_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation.shape[0]

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.entity.copy(), self.relation.copy(), self.dim, self.kind)

    def matrix(self, which: str) -> np.ndarray:
        return self.entity if which == "entity" else self.relation

    def check(self) -> None:
        if not (np.isfinite(self.entity).all() and np.isfinite(self.relation).all()):
            raise FloatingPointError("embedding store contains non-finite values")


def _fresh_rows(rng, n, width, dim, scheme):
    if scheme == "uniform-xavier":
        bound = np.sqrt(6.0 / dim)
        return rng.uniform(-bound, bound, size=(n, width))
    if scheme == "normal":
        return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n, width))
    raise ValueError(f"unknown init scheme {scheme!r}")


def _init_relations(scorer, rng, n, dim, scheme):
    if scorer.kind == "RotatE":
        return rng.uniform(-np.pi, np.pi, size=(n, scorer.relation_width(dim)))
    return _fresh_rows(rng, n, scorer.relation_width(dim), dim, scheme)


def normalize_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.where(n > 0, n, 1.0)


def init_embeddings(n_entities, n_relations, dim=200, scheme="uniform-xavier", seed=0, kind="TransE-L2"):
    """Fresh store; TransE-family entity rows are unit L2 length."""
    if min(n_entities, n_relations, dim) < 1:
        raise ValueError("entity count, relation count and dimension must be >= 1")
    scorer = get_scorer(kind)
    scorer.check_dim(dim)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ent = _fresh_rows(rng, n_entities, scorer.entity_width(dim), dim, scheme)
    rel = _init_relations(scorer, rng, n_relations, dim, scheme)
    if scorer.translational:
        ent = normalize_rows(ent)
    return EmbeddingStore(ent, rel, dim, kind)


def expand_store(emb, new_n_entities, new_n_relations, scheme="uniform-xavier", seed=0,
                 projection="none", new_dim=None, entity_init=None):
    """Grow the store to new vocabulary sizes (and optionally a larger dimension).

    Existing rows are kept bit-exactly when ``projection="none"``; with
    ``"zero-pad-dim"`` they are padded with zeros up to ``new_dim``. New rows are
    drawn from ``scheme`` unless ``entity_init`` supplies them.
    """
    if new_n_entities < emb.n_entities or new_n_relations < emb.n_relations:
        raise ValueError("expand_store cannot shrink a store")
    scorer = get_scorer(emb.kind)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dim = emb.dim
    ent, rel = emb.entity.copy(), emb.relation.copy()
    if projection == "zero-pad-dim":
        if new_dim is None or new_dim < dim:
            raise ValueError("zero-pad-dim needs new_dim >= current dim")
        scorer.check_dim(new_dim)
        if new_dim > dim:
            ent = scorer.pad_entities(ent, dim, new_dim)
            rel = scorer.pad_relations(rel, dim, new_dim)
        dim = new_dim
    elif projection != "none":
        raise ValueError(f"unknown projection {projection!r}")
    n_new_e = new_n_entities - emb.n_entities
    n_new_r = new_n_relations - emb.n_relations
    if n_new_e:
        fresh = _fresh_rows(rng, n_new_e, scorer.entity_width(dim), dim, scheme)
        if scorer.translational:
            fresh = normalize_rows(fresh)
        if entity_init is not None:
            fresh = np.where(np.isnan(entity_init), fresh, entity_init)
        ent = np.vstack([ent, fresh])
    if n_new_r:
        rel = np.vstack([rel, _init_relations(scorer, rng, n_new_r, dim, scheme)])
    return EmbeddingStore(ent, rel, dim, emb.kind)


def neighbor_mean_init(emb, triples, n_old, n_new):
    """Rows for entities ``>= n_old`` built from known first-hop neighbours.

    A new tail ``t`` of ``(h, r, t)`` with known ``h`` receives ``h + r``; a new
    head receives ``t - r``; the candidates are averaged. Entities without a
    known neighbour get NaN (left to the random initializer).
    """
    if emb.kind not in ("TransE-L1", "TransE-L2"):
        raise ValueError("neighbor-mean transfer is defined through the TransE offset only")
    triples = np.asarray(triples).reshape(-1, 3)
    return _neighbor_mean(emb.entity, emb.relation, triples, n_old, n_new)


def _neighbor_mean(E, R, triples, n_old, n_total):
    h, r, t = triples.T
    known_rel = r < R.shape[0]
    h, r, t = h[known_rel], r[known_rel], t[known_rel]
    acc = np.zeros((n_total, E.shape[1]))
    cnt = np.zeros(n_total)
    tail_new = (t >= n_old) & (h < n_old)
    np.add.at(acc, t[tail_new], E[h[tail_new]] + R[r[tail_new]])
    np.add.at(cnt, t[tail_new], 1)
    head_new = (h >= n_old) & (t < n_old)
    np.add.at(acc, h[head_new], E[t[head_new]] - R[r[head_new]])
    np.add.at(cnt, h[head_new], 1)
    out = np.full((n_total - n_old, E.shape[1]), np.nan)
    sel = cnt[n_old:] > 0
    out[sel] = acc[n_old:][sel] / cnt[n_old:][sel, None]
    return out


def save_checkpoint(emb, path, manifest=None):
    """Write ``path`` (binary) and ``path`` + ``.json`` (manifest sidecar)."""
    path = Path(path)
    kind_code = MODEL_KINDS.index(emb.kind)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind_code, emb.n_entities, emb.n_relations, emb.dim))
        fh.write(np.ascontiguousarray(emb.entity, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(emb.relation, dtype="<f8").tobytes())
    meta = {"model_kind": emb.kind, "n_entities": emb.n_entities, "n_relations": emb.n_relations,
            "dim": emb.dim}
    meta.update(manifest or {})
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, kind_code, ne, nr, dim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    kind = MODEL_KINDS[kind_code]
    scorer = get_scorer(kind)
    ew, rw = scorer.entity_width(dim), scorer.relation_width(dim)
    expected = _HEADER.size + 8 * (ne * ew + nr * rw)
    if len(data) != expected:
        raise CheckpointError(f"{path}: size {len(data)} does not match header ({expected})")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    ent = body[: ne * ew].reshape(ne, ew).astype(np.float64)
    rel = body[ne * ew :].reshape(nr, rw).astype(np.float64)
    return EmbeddingStore(ent, rel, int(dim), kind)


__all__ = [
    "EmbeddingStore",
    "init_embeddings",
    "expand_store",
    "neighbor_mean_init",
    "normalize_rows",
    "save_checkpoint",
    "load_checkpoint",
    "wrap_phase",
]
