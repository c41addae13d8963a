"""Plausibility scores ``p(h, r, t)`` and their analytic partial derivatives.

Every scorer works on stacked rows: ``score(H, R, T)`` takes ``(B, w)`` arrays
of entity/relation rows and returns ``(B,)``; ``grad`` returns the partials of
the score with respect to each of the three inputs. Higher scores mean more
plausible triples for every model kind.

Complex-valued kinds (ComplEx, RotatE) lay out an entity row of width ``d`` as
``[real parts | imaginary parts]`` with ``d // 2`` complex coordinates.
"""
from __future__ import annotations

import numpy as np

from .. import kernels

MODEL_KINDS = ("TransE-L1", "TransE-L2", "TransH", "DistMult", "ComplEx", "RotatE")

_TINY = 1e-15


class Scorer:
    kind: str = ""
    translational = False

    def entity_width(self, dim: int) -> int:
        return dim

    def relation_width(self, dim: int) -> int:
        return dim

    def check_dim(self, dim: int) -> None:
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")

    def score(self, H, R, T):
        raise NotImplementedError

    def grad(self, H, R, T):
        raise NotImplementedError

    def score_tails(self, h_rows, r_rows, cand):
        """``(Q, w)`` query rows against ``(n, w)`` candidate tails -> ``(Q, n)``."""
        return np.stack([self.score(np.broadcast_to(h, cand.shape), np.broadcast_to(r, (len(cand), r.size)), cand)
                         for h, r in zip(h_rows, r_rows)]) if len(h_rows) else np.zeros((0, len(cand)))

    def score_heads(self, r_rows, t_rows, cand):
        return np.stack([self.score(cand, np.broadcast_to(r, (len(cand), r.size)), np.broadcast_to(t, cand.shape))
                         for r, t in zip(r_rows, t_rows)]) if len(r_rows) else np.zeros((0, len(cand)))

    def pad_relations(self, rel: np.ndarray, old_dim: int, new_dim: int) -> np.ndarray:
        return _pad(rel, new_dim - old_dim)

    def pad_entities(self, ent: np.ndarray, old_dim: int, new_dim: int) -> np.ndarray:
        return _pad(ent, new_dim - old_dim)

    def postprocess(self, emb, rows=None) -> None:
        """Project parameters back onto their domain after an update."""


def _pad(m: np.ndarray, extra: int) -> np.ndarray:
    return np.hstack([m, np.zeros((m.shape[0], extra))])


def _pad_halves(m: np.ndarray, extra_each: int) -> np.ndarray:
    half = m.shape[1] // 2
    z = np.zeros((m.shape[0], extra_each))
    return np.hstack([m[:, :half], z, m[:, half:], z])


class TransE(Scorer):
    translational = True

    def __init__(self, p: int):
        self.p = p
        self.kind = f"TransE-L{p}"

    def score(self, H, R, T):
        x = H + R - T
        if self.p == 1:
            return -np.abs(x).sum(axis=-1)
        return -np.sqrt((x * x).sum(axis=-1))

    def grad(self, H, R, T):
        x = H + R - T
        if self.p == 1:
            g = -np.sign(x)
        else:
            n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
            g = np.where(n > _TINY, -x / np.maximum(n, _TINY), 0.0)
        return g, g, -g

    def score_tails(self, h_rows, r_rows, cand):
        return kernels.neg_distances(h_rows + r_rows, cand, self.p)

    def score_heads(self, r_rows, t_rows, cand):
        # -||c + r - t|| = -||c - (t - r)||
        return kernels.neg_distances(t_rows - r_rows, cand, self.p)


class TransH(Scorer):
    """Relation rows hold ``[normal w | translation d_r]`` (width ``2d``)."""

    translational = True
    kind = "TransH"

    def relation_width(self, dim):
        return 2 * dim

    def _split(self, R):
        d = R.shape[-1] // 2
        return R[..., :d], R[..., d:]

    def score(self, H, R, T):
        w, dr = self._split(R)
        u = H - T
        x = u - (u * w).sum(axis=-1, keepdims=True) * w + dr
        return -np.sqrt((x * x).sum(axis=-1))

    def grad(self, H, R, T):
        w, dr = self._split(R)
        u = H - T
        s = (u * w).sum(axis=-1, keepdims=True)
        x = u - s * w + dr
        n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        g = np.where(n > _TINY, -x / np.maximum(n, _TINY), 0.0)
        gw_dot = (g * w).sum(axis=-1, keepdims=True)
        gu = g - gw_dot * w
        gwn = -(s * g + gw_dot * u)
        return gu, np.concatenate([gwn, g], axis=-1), -gu

    def _project(self, E, w):
        return E - (E @ w)[:, None] * w

    def score_tails(self, h_rows, r_rows, cand):
        out = np.empty((len(h_rows), len(cand)))
        for a, (h, r) in enumerate(zip(h_rows, r_rows)):
            w, dr = self._split(r)
            q = h - (h @ w) * w + dr
            out[a] = kernels.neg_distances(q[None, :], self._project(cand, w), 2)[0]
        return out

    def score_heads(self, r_rows, t_rows, cand):
        out = np.empty((len(r_rows), len(cand)))
        for a, (r, t) in enumerate(zip(r_rows, t_rows)):
            w, dr = self._split(r)
            q = t - (t @ w) * w - dr
            out[a] = kernels.neg_distances(q[None, :], self._project(cand, w), 2)[0]
        return out

    def pad_relations(self, rel, old_dim, new_dim):
        return _pad_halves(rel, new_dim - old_dim)


class DistMult(Scorer):
    kind = "DistMult"

    def score(self, H, R, T):
        return (H * R * T).sum(axis=-1)

    def grad(self, H, R, T):
        return R * T, H * T, H * R

    def score_tails(self, h_rows, r_rows, cand):
        return _chunked_rowwise(h_rows * r_rows, cand)

    def score_heads(self, r_rows, t_rows, cand):
        # (c * r) * t == c * (r * t) only up to rounding; keep the per-triple order
        return _chunked_rowwise_left(cand, r_rows, t_rows)


def _chunked_rowwise(qr, cand, chunk=1 << 21):
    out = np.empty((len(qr), len(cand)))
    step = max(1, chunk // max(1, cand.size))
    for lo in range(0, len(qr), step):
        out[lo : lo + step] = (qr[lo : lo + step, None, :] * cand[None, :, :]).sum(axis=-1)
    return out


def _chunked_rowwise_left(cand, r_rows, t_rows, chunk=1 << 21):
    out = np.empty((len(r_rows), len(cand)))
    step = max(1, chunk // max(1, cand.size))
    for lo in range(0, len(r_rows), step):
        out[lo : lo + step] = (cand[None, :, :] * r_rows[lo : lo + step, None, :] * t_rows[lo : lo + step, None, :]).sum(axis=-1)
    return out


class ComplEx(Scorer):
    kind = "ComplEx"

    def check_dim(self, dim):
        super().check_dim(dim)
        if dim % 2:
            raise ValueError("ComplEx needs an even dimension (real/imaginary halves)")

    @staticmethod
    def _h(X):
        c = X.shape[-1] // 2
        return X[..., :c], X[..., c:]

    def score(self, H, R, T):
        a, b = self._h(H)
        c, d = self._h(R)
        e, f = self._h(T)
        return ((a * c - b * d) * e + (a * d + b * c) * f).sum(axis=-1)

    def grad(self, H, R, T):
        a, b = self._h(H)
        c, d = self._h(R)
        e, f = self._h(T)
        gh = np.concatenate([c * e + d * f, c * f - d * e], axis=-1)
        gr = np.concatenate([a * e + b * f, a * f - b * e], axis=-1)
        gt = np.concatenate([a * c - b * d, a * d + b * c], axis=-1)
        return gh, gr, gt

    def score_tails(self, h_rows, r_rows, cand):
        a, b = self._h(h_rows)
        c, d = self._h(r_rows)
        e, f = self._h(cand)
        re, im = a * c - b * d, a * d + b * c
        out = np.empty((len(h_rows), len(cand)))
        for lo in range(0, len(h_rows), 256):
            sl = slice(lo, lo + 256)
            out[sl] = (re[sl, None, :] * e[None] + im[sl, None, :] * f[None]).sum(axis=-1)
        return out

    def score_heads(self, r_rows, t_rows, cand):
        a, b = self._h(cand)
        c, d = self._h(r_rows)
        e, f = self._h(t_rows)
        out = np.empty((len(r_rows), len(cand)))
        for lo in range(0, len(r_rows), 256):
            sl = slice(lo, lo + 256)
            cc, dd, ee, ff = (x[sl, None, :] for x in (c, d, e, f))
            out[sl] = ((a[None] * cc - b[None] * dd) * ee + (a[None] * dd + b[None] * cc) * ff).sum(axis=-1)
        return out

    def pad_entities(self, ent, old_dim, new_dim):
        return _pad_halves(ent, (new_dim - old_dim) // 2)

    def pad_relations(self, rel, old_dim, new_dim):
        return _pad_halves(rel, (new_dim - old_dim) // 2)


class RotatE(Scorer):
    """Relation rows are phases (width ``d // 2``); distance is the sum of complex moduli."""

    kind = "RotatE"

    def check_dim(self, dim):
        super().check_dim(dim)
        if dim % 2:
            raise ValueError("RotatE needs an even dimension (real/imaginary halves)")

    def relation_width(self, dim):
        return dim // 2

    @staticmethod
    def _h(X):
        c = X.shape[-1] // 2
        return X[..., :c], X[..., c:]

    def _residual(self, H, R, T):
        a, b = self._h(H)
        e, f = self._h(T)
        cos, sin = np.cos(R), np.sin(R)
        xr = a * cos - b * sin - e
        xi = a * sin + b * cos - f
        return a, b, cos, sin, xr, xi

    def score(self, H, R, T):
        *_, xr, xi = self._residual(H, R, T)
        return -np.sqrt(xr * xr + xi * xi).sum(axis=-1)

    def grad(self, H, R, T):
        a, b, cos, sin, xr, xi = self._residual(H, R, T)
        m = np.sqrt(xr * xr + xi * xi)
        safe = np.maximum(m, _TINY)
        gxr = np.where(m > _TINY, -xr / safe, 0.0)
        gxi = np.where(m > _TINY, -xi / safe, 0.0)
        gh = np.concatenate([gxr * cos + gxi * sin, -gxr * sin + gxi * cos], axis=-1)
        gr = gxr * (-a * sin - b * cos) + gxi * (a * cos - b * sin)
        gt = np.concatenate([-gxr, -gxi], axis=-1)
        return gh, gr, gt

    def score_tails(self, h_rows, r_rows, cand):
        a, b = self._h(h_rows)
        cos, sin = np.cos(r_rows), np.sin(r_rows)
        qr, qi = a * cos - b * sin, a * sin + b * cos
        e, f = self._h(cand)
        out = np.empty((len(h_rows), len(cand)))
        for lo in range(0, len(h_rows), 256):
            sl = slice(lo, lo + 256)
            xr = qr[sl, None, :] - e[None]
            xi = qi[sl, None, :] - f[None]
            out[sl] = -np.sqrt(xr * xr + xi * xi).sum(axis=-1)
        return out

    def score_heads(self, r_rows, t_rows, cand):
        a, b = self._h(cand)
        e, f = self._h(t_rows)
        cos, sin = np.cos(r_rows), np.sin(r_rows)
        out = np.empty((len(r_rows), len(cand)))
        for lo in range(0, len(r_rows), 256):
            sl = slice(lo, lo + 256)
            c, s = cos[sl, None, :], sin[sl, None, :]
            xr = a[None] * c - b[None] * s - e[sl, None, :]
            xi = a[None] * s + b[None] * c - f[sl, None, :]
            out[sl] = -np.sqrt(xr * xr + xi * xi).sum(axis=-1)
        return out

    def pad_entities(self, ent, old_dim, new_dim):
        return _pad_halves(ent, (new_dim - old_dim) // 2)

    def pad_relations(self, rel, old_dim, new_dim):
        # zero phase is the identity rotation, so padded coordinates stay inert
        return _pad(rel, (new_dim - old_dim) // 2)

    def postprocess(self, emb, rows=None):
        rel = emb.relation
        if rows is None:
            rel[:] = wrap_phase(rel)
        else:
            rel[rows] = wrap_phase(rel[rows])


def wrap_phase(x):
    """Map angles onto ``[-pi, pi)``."""
    return np.mod(x + np.pi, 2 * np.pi) - np.pi


_REGISTRY = {
    "TransE-L1": lambda: TransE(1),
    "TransE-L2": lambda: TransE(2),
    "TransH": TransH,
    "DistMult": DistMult,
    "ComplEx": ComplEx,
    "RotatE": RotatE,
}


def get_scorer(kind: str) -> Scorer:
    try:
        return _REGISTRY[kind]()
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}") from None
