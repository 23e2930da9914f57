"""Explicit backward passes for the pairwise hinge losses, plus a finite-difference checker.

Every loss here has the form ``[m + f(pos) - f(neg)]_+`` where ``f`` is one of
the distances in :mod:`ugrec.model`.  The batched entry point
:func:`pair_loss_and_grads` is what the trainer uses; the single-pair wrappers
exist for checking and for callers that want a :class:`GradientSet`.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import ContractError, DegenerateNormalError, NumericalError
from .graph import Triplet
from .model import DEGENERATE_NORM_SQ, ModelParams, UndirectedScorer, relation_attention, transd_project

__all__ = [
    "GradientSet",
    "pair_loss_and_grads",
    "directed_pair_grad",
    "undirected_pair_grad",
    "pair_grad",
    "finite_difference_check",
    "pair_kinks",
    "KINDS",
]

KINDS = ("directed", "hyperplane", "distmult", "transe")


class GradientSet:
    """Sparse gradients: family -> (sorted unique row indices, stacked row gradients).

    A "row" is one embedding vector, or one ``k x 2k`` weight matrix for
    ``att_weight``.
    """

    def __init__(self, rows: dict | None = None, values: dict | None = None):
        self.rows = rows or {}
        self.values = values or {}

    @classmethod
    def aggregate(cls, parts: dict) -> "GradientSet":
        """Sum duplicate rows. ``parts`` maps family -> list of (rows, values)."""
        rows, values = {}, {}
        for fam, chunks in parts.items():
            if not chunks:
                continue
            r = np.concatenate([np.atleast_1d(np.asarray(c[0], dtype=np.int64)) for c in chunks])
            v = np.concatenate([c[1] for c in chunks], axis=0)
            if r.size == 0:
                continue
            uniq, inv = np.unique(r, return_inverse=True)
            acc = np.zeros((uniq.size,) + v.shape[1:])
            np.add.at(acc, inv, v)
            rows[fam], values[fam] = uniq, acc
        return cls(rows, values)

    def __add__(self, other: "GradientSet") -> "GradientSet":
        parts = {}
        for g in (self, other):
            for fam in g.rows:
                parts.setdefault(fam, []).append((g.rows[fam], g.values[fam]))
        return GradientSet.aggregate(parts)

    def scaled(self, c: float) -> "GradientSet":
        return GradientSet(dict(self.rows), {f: v * c for f, v in self.values.items()})

    def __len__(self) -> int:
        return sum(r.size for r in self.rows.values())

    def is_empty(self) -> bool:
        return len(self) == 0

    def slots(self) -> list[tuple[str, int]]:
        return [(fam, int(i)) for fam in sorted(self.rows) for i in self.rows[fam]]

    def __contains__(self, slot) -> bool:
        fam, row = slot
        return fam in self.rows and bool(np.any(self.rows[fam] == row))

    def __getitem__(self, slot) -> np.ndarray:
        fam, row = slot
        if fam in self.rows:
            pos = np.searchsorted(self.rows[fam], row)
            if pos < self.rows[fam].size and self.rows[fam][pos] == row:
                return self.values[fam][pos]
        raise KeyError(slot)

    def value_at(self, family: str, index: tuple) -> float:
        """Partial derivative at one scalar coordinate ``(row, *col)``; 0 if untouched."""
        try:
            return float(self[(family, index[0])][tuple(index[1:])])
        except KeyError:
            return 0.0

    def allclose(self, other: "GradientSet", rtol=1e-9, atol=1e-12) -> bool:
        if set(self.rows) != set(other.rows):
            return False
        return all(np.array_equal(self.rows[f], other.rows[f]) and
                   np.allclose(self.values[f], other.values[f], rtol=rtol, atol=atol) for f in self.rows)

    def __repr__(self) -> str:
        return f"GradientSet({ {f: r.tolist() for f, r in self.rows.items()} })"


class _Acc:
    def __init__(self):
        self.parts: dict[str, list] = {}

    def add(self, fam, rows, vals):
        self.parts.setdefault(fam, []).append((rows, vals))

    def result(self) -> GradientSet:
        return GradientSet.aggregate(self.parts)


def _attention_back(params: ModelParams, x, r, pre, gate, g_gate, acc: _Acc):
    """Backprop through softmax(ReLU(W x + b)); returns d/dx."""
    k = params.k
    if params.config.scale_attention:
        s, g_s = gate / k, g_gate * k
    else:
        s, g_s = gate, g_gate
    g_z = s * (g_s - np.sum(g_s * s, axis=-1, keepdims=True))
    g_pre = g_z * (pre > 0)
    a_idx = np.broadcast_to(params.att_index(r), pre.shape[:1])
    acc.add("att_bias", a_idx, g_pre)
    gx = np.empty_like(x)
    W = params.att_weight
    for a in np.unique(a_idx):
        sel = a_idx == a
        gp = g_pre[sel]
        acc.add("att_weight", [a], (gp.T @ x[sel])[None])
        gx[sel] = gp @ W[a]
    return gx


def _directed(params: ModelParams, h, t, r, use_att):
    E, P = params.entity_emb, params.entity_proj
    eh, ph, et, pt = E[h], P[h], E[t], P[t]
    rp, rv = params.rel_proj[r], params.rel_emb[r]
    ah = np.sum(ph * eh, axis=-1)
    at = np.sum(pt * et, axis=-1)
    hr = transd_project(eh, ph, rp)
    tr = transd_project(et, pt, rp)
    if use_att:
        x = np.concatenate([hr, tr], axis=-1)
        pre, gate = relation_attention(params, x, r)
        rg = rv * gate
    else:
        rg = rv
    d = hr + rg - tr
    f = np.sum(d * d, axis=-1)

    def back(gf, acc: _Acc):
        k = params.k
        gd = 2.0 * d * gf[:, None]
        g_hr, g_tr = gd.copy(), -gd
        if use_att:
            g_rv = gd * gate
            gx = _attention_back(params, x, r, pre, gate, gd * rv, acc)
            g_hr += gx[:, :k]
            g_tr += gx[:, k:]
        else:
            g_rv = gd
        acc.add("rel_emb", r, g_rv)
        ch = np.sum(rp * g_hr, axis=-1, keepdims=True)
        ct = np.sum(rp * g_tr, axis=-1, keepdims=True)
        acc.add("entity_emb", h, g_hr + ph * ch)
        acc.add("entity_proj", h, eh * ch)
        acc.add("entity_emb", t, g_tr + pt * ct)
        acc.add("entity_proj", t, et * ct)
        acc.add("rel_proj", r, g_hr * ah[:, None] + g_tr * at[:, None])

    return f, back


def _hyperplane(params: ModelParams, h, t, r, use_att):
    E = params.entity_emb
    eh, et, rv = E[h], E[t], params.rel_emb[r]
    if use_att:
        lo, hi = np.minimum(h, t), np.maximum(h, t)
        x = np.concatenate([E[lo], E[hi]], axis=-1)
        pre, gate = relation_attention(params, x, r)
        rhat = rv * gate
    else:
        rhat = rv
    s = np.sum(rhat * rhat, axis=-1)
    if np.any(s < DEGENERATE_NORM_SQ):
        raise DegenerateNormalError(f"hyperplane normal has squared norm {float(s.min()):.3g}")
    delta = eh - et
    q = np.sum(rhat * delta, axis=-1) / s
    pd = delta - q[:, None] * rhat
    f = np.sum(pd * pd, axis=-1)

    def back(gf, acc: _Acc):
        k = params.k
        g_delta = 2.0 * pd * gf[:, None]
        # pd is orthogonal to rhat, which leaves only this term for the normal
        g_rhat = -q[:, None] * g_delta
        acc.add("entity_emb", h, g_delta)
        acc.add("entity_emb", t, -g_delta)
        if use_att:
            acc.add("rel_emb", r, g_rhat * gate)
            gx = _attention_back(params, x, r, pre, gate, g_rhat * rv, acc)
            acc.add("entity_emb", lo, gx[:, :k])
            acc.add("entity_emb", hi, gx[:, k:])
        else:
            acc.add("rel_emb", r, g_rhat)

    return f, back


def _distmult(params: ModelParams, h, t, r, use_att):
    E = params.entity_emb
    eh, et, rv = E[h], E[t], params.rel_emb[r]
    f = -np.sum(eh * rv * et, axis=-1)

    def back(gf, acc: _Acc):
        g = -gf[:, None]
        acc.add("entity_emb", h, g * rv * et)
        acc.add("entity_emb", t, g * rv * eh)
        acc.add("rel_emb", r, g * eh * et)

    return f, back


def _transe(params: ModelParams, h, t, r, use_att):
    E = params.entity_emb
    d = E[h] + params.rel_emb[r] - E[t]
    f = np.sum(d * d, axis=-1)

    def back(gf, acc: _Acc):
        gd = 2.0 * d * gf[:, None]
        acc.add("entity_emb", h, gd)
        acc.add("rel_emb", r, gd)
        acc.add("entity_emb", t, -gd)

    return f, back


_FORWARD = {"directed": _directed, "hyperplane": _hyperplane, "distmult": _distmult, "transe": _transe}


def kind_for(params: ModelParams, r: int) -> str:
    """Which scorer a relation uses under the model configuration."""
    if params.rel_directed[r]:
        return "directed"
    return {
        UndirectedScorer.HYPERPLANE: "hyperplane",
        UndirectedScorer.DISTMULT: "distmult",
        UndirectedScorer.DIRECTED_PAIR: "transe",
    }[params.config.undirected_scorer]


def pair_loss_and_grads(params: ModelParams, kind: str, h, t, tn, r, margin, use_attention: bool,
                        weight=1.0) -> tuple[np.ndarray, GradientSet]:
    """Per-row hinge losses and the summed ``weight * d loss / d theta`` over a batch.

    ``h, t, tn, r`` are equal-length index arrays (positive tail ``t``,
    negative tail ``tn``); ``margin`` and ``weight`` broadcast per row.
    Rows whose hinge is inactive (loss <= 0) contribute nothing.
    """
    if kind not in _FORWARD:
        raise ContractError(f"unknown scorer kind {kind!r}")
    fwd = _FORWARD[kind]
    h, t, tn, r = (np.atleast_1d(np.asarray(a, dtype=np.int64)) for a in (h, t, tn, r))
    margin = np.broadcast_to(np.asarray(margin, dtype=float), h.shape)
    weight = np.broadcast_to(np.asarray(weight, dtype=float), h.shape)
    fp, _ = fwd(params, h, t, r, use_attention)
    fn, _ = fwd(params, h, tn, r, use_attention)
    loss = np.maximum(margin + fp - fn, 0.0)
    active = np.flatnonzero(loss > 0)
    acc = _Acc()
    if active.size:
        w = weight[active]
        _, back_p = fwd(params, h[active], t[active], r[active], use_attention)
        _, back_n = fwd(params, h[active], tn[active], r[active], use_attention)
        back_p(w, acc)
        back_n(-w, acc)
    return loss, acc.result()


def _check_pair(pos: Triplet, neg: Triplet, directed: bool):
    if pos.relation != neg.relation:
        raise ContractError(f"pair relations differ: {pos.relation} vs {neg.relation}")
    if directed and pos.head != neg.head:
        raise ContractError("positive and negative triplets must share the head entity")
    if not directed and not ({pos.head, pos.tail} & {neg.head, neg.tail}):
        raise ContractError("positive and negative triplets must share an entity")


def _orient(pos: Triplet, neg: Triplet):
    """Reorder an undirected pair so both triplets start from their shared entity."""
    if pos.head in (neg.head, neg.tail):
        shared, pt = pos.head, pos.tail
    else:
        shared, pt = pos.tail, pos.head
    nt = neg.tail if neg.head == shared else neg.head
    return shared, pt, nt


def pair_grad(pos: Triplet, neg: Triplet, params: ModelParams, m: float, kind: str,
              use_attention: bool | None = None) -> tuple[float, GradientSet]:
    use_att = params.config.use_attention if use_attention is None else use_attention
    directed = kind == "directed"
    if directed != bool(params.rel_directed[pos.relation]):
        raise ContractError(f"relation {pos.relation} cannot be scored as {kind}")
    _check_pair(pos, neg, directed)
    if directed or kind == "transe":
        h, t, tn = pos.head, pos.tail, neg.tail
    else:
        h, t, tn = _orient(pos, neg)
    loss, grads = pair_loss_and_grads(params, kind, [h], [t], [tn], [pos.relation], m, use_att)
    return float(loss[0]), grads


def directed_pair_grad(pos: Triplet, neg: Triplet, params: ModelParams, m: float,
                       use_attention: bool | None = None) -> tuple[float, GradientSet]:
    """Hinge loss of a directed positive/negative pair and its exact gradient."""
    return pair_grad(pos, neg, params, m, "directed", use_attention)


def undirected_pair_grad(pos: Triplet, neg: Triplet, params: ModelParams, m: float,
                         use_attention: bool | None = None) -> tuple[float, GradientSet]:
    """Hinge loss of an undirected (hyperplane-scored) pair and its exact gradient."""
    return pair_grad(pos, neg, params, m, "hyperplane", use_attention)


def pair_kinks(params: ModelParams, kind: str, h, t, tn, r, margin, use_attention: bool) -> float:
    """Distance to the nearest non-differentiable point: min |ReLU pre-activation| and |hinge argument|."""
    fwd = _FORWARD[kind]
    h, t, tn, r = (np.atleast_1d(np.asarray(a, dtype=np.int64)) for a in (h, t, tn, r))
    fp, _ = fwd(params, h, t, r, use_attention)
    fn, _ = fwd(params, h, tn, r, use_attention)
    gap = float(np.min(np.abs(margin + fp - fn)))
    if use_attention and kind in ("directed", "hyperplane"):
        E, P = params.entity_emb, params.entity_proj
        for tail in (t, tn):
            if kind == "directed":
                rp = params.rel_proj[r]
                x = np.concatenate([transd_project(E[h], P[h], rp), transd_project(E[tail], P[tail], rp)], -1)
            else:
                lo, hi = np.minimum(h, tail), np.maximum(h, tail)
                x = np.concatenate([E[lo], E[hi]], -1)
            pre, _ = relation_attention(params, x, r)
            gap = min(gap, float(np.min(np.abs(pre))))
    return gap


def finite_difference_check(score: Callable[[ModelParams], float], params: ModelParams,
                            slots: Iterable[tuple[str, tuple]], eps: float = 1e-6,
                            analytic: Callable[[str, tuple], float] | None = None) -> float:
    """Max relative error between ``analytic`` partials and central differences of ``score``.

    ``slots`` are ``(family, index)`` scalar coordinates.  The relative error of
    one coordinate is ``|analytic - numeric| / max(1, |numeric|)``.  Parameters
    are perturbed in place and restored.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ContractError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    if analytic is None:
        analytic = lambda fam, idx: 0.0  # noqa: E731
    worst = 0.0
    for fam, idx in slots:
        arr = params.family(fam)
        idx = tuple(int(i) for i in idx)
        orig = arr[idx]
        try:
            arr[idx] = orig + eps
            up = float(score(params))
            arr[idx] = orig - eps
            down = float(score(params))
        finally:
            arr[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalError(f"non-finite score while perturbing {fam}{list(idx)}")
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic(fam, idx))
        worst = max(worst, abs(a - numeric) / max(1.0, abs(numeric)))
    return worst
