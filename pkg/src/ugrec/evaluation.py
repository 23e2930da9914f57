"""Top-n ranking by interaction-relation distance, HR@K / NDCG@K, sparsity groups and sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DataError
from .graph import DataSplit, UnifiedGraph
from .model import ModelParams, directed_distance

__all__ = [
    "EvalReport",
    "hr_at_k",
    "ndcg_at_k",
    "rank_items",
    "heldout_ranks",
    "evaluate",
    "cooccurrence_sweep",
    "ablation_study",
    "write_table",
    "DEFAULT_GROUPS",
    "GAMES_GROUPS",
    "DEFAULT_RATIOS",
]

log = logging.getLogger(__name__)

DEFAULT_GROUPS = (5, 10, 15)
GAMES_GROUPS = (5, 10, 30)
DEFAULT_RATIOS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
# keeps one (users x items x 2k) scoring block around 32 MB
_BLOCK_FLOATS = 4_000_000


def hr_at_k(rank: int, K: int) -> int:
    if rank < 1:
        raise ContractError(f"rank must be >= 1, got {rank}")
    return 1 if rank <= K else 0


def ndcg_at_k(rank: int, K: int) -> float:
    """Single relevant item, so the ideal DCG is 1."""
    if rank < 1:
        raise ContractError(f"rank must be >= 1, got {rank}")
    return 1.0 / math.log2(rank + 1) if rank <= K else 0.0


def group_labels(thresholds: Sequence[int]) -> list[str]:
    return [f"<={t}" for t in thresholds] + [f">{thresholds[-1]}"]


def group_of(n_train: int, thresholds: Sequence[int]) -> str:
    for t in thresholds:
        if n_train <= t:
            return f"<={t}"
    return f">{thresholds[-1]}"


@dataclass
class EvalReport:
    hr_at_k: float
    ndcg_at_k: float
    K: int
    n_users: int
    skipped: int = 0
    per_group: dict = field(default_factory=dict)
    per_user_rank: dict = field(default_factory=dict)

    def to_text(self) -> str:
        """One ``key<TAB>value`` record per metric, then one per group."""
        lines = [
            f"K\t{self.K}",
            f"users\t{self.n_users}",
            f"skipped\t{self.skipped}",
            f"hr@{self.K}\t{self.hr_at_k:.6f}",
            f"ndcg@{self.K}\t{self.ndcg_at_k:.6f}",
        ]
        for label, (count, hr, ndcg) in self.per_group.items():
            lines.append(f"group\t{label}\t{count}\t{hr:.6f}\t{ndcg:.6f}")
        return "\n".join(lines) + "\n"

    def group_rows(self) -> list[dict]:
        return [{"group": label, "users": count, f"hr@{self.K}": round(hr, 6), f"ndcg@{self.K}": round(ndcg, 6)}
                for label, (count, hr, ndcg) in self.per_group.items()]

    def summary_row(self, **labels) -> dict:
        row = dict(labels)
        row.update({f"hr@{self.K}": round(self.hr_at_k, 6), f"ndcg@{self.K}": round(self.ndcg_at_k, 6),
                    "users": self.n_users})
        return row


def _score_matrix(params: ModelParams, users: np.ndarray, items: np.ndarray, rid: int,
                  use_attention: bool | None) -> np.ndarray:
    per_user = max(1, _BLOCK_FLOATS // max(1, items.size * 2 * params.k))
    out = np.empty((users.size, items.size))
    for s in range(0, users.size, per_user):
        u = users[s:s + per_user]
        out[s:s + per_user] = directed_distance(u[:, None], items[None, :], rid, params, use_attention)
    return out


def rank_items(user: int, params: ModelParams, graph: UnifiedGraph, exclude: Iterable[int] = (),
               use_attention: bool | None = None, return_distances: bool = False):
    """All items not in ``exclude`` ordered by ascending distance (ties by item index)."""
    items = graph.items
    excl = np.fromiter((int(e) for e in exclude), dtype=np.int64)
    cand = items[~np.isin(items, excl)]
    if cand.size == 0:
        return (cand, np.empty(0)) if return_distances else cand
    d = directed_distance(np.int64(user), cand, graph.interaction_id, params, use_attention)
    order = np.lexsort((cand, d))
    if return_distances:
        return cand[order], d[order]
    return cand[order]


def heldout_ranks(params: ModelParams, graph: UnifiedGraph, targets: dict, also_exclude: dict | None = None,
                  use_attention: bool | None = None) -> dict:
    """Rank of each user's held-out item among items outside their training history.

    ``also_exclude`` removes one more item per user (the other held-out item).
    """
    users = np.array(sorted(targets), dtype=np.int64)
    if users.size == 0:
        return {}
    items = graph.items
    col = np.full(graph.n_entities, -1, dtype=np.int64)
    col[items] = np.arange(items.size)
    hist = graph.user_histories
    ranks = {}
    per_block = max(1, _BLOCK_FLOATS // max(1, items.size * 2 * params.k))
    rid = graph.interaction_id
    for s in range(0, users.size, per_block):
        ub = users[s:s + per_block]
        D = _score_matrix(params, ub, items, rid, use_attention)
        excl = np.zeros(D.shape, dtype=bool)
        for row, u in enumerate(ub.tolist()):
            seen = hist.get(u)
            if seen is not None and seen.size:
                excl[row, col[seen]] = True
            if also_exclude and u in also_exclude:
                excl[row, col[also_exclude[u]]] = True
        tgt = np.array([targets[u] for u in ub.tolist()], dtype=np.int64)
        tcol = col[tgt]
        if np.any(tcol < 0):
            raise DataError("held-out target is not an item entity")
        excl[np.arange(ub.size), tcol] = False
        dt = D[np.arange(ub.size), tcol][:, None]
        ahead = (D < dt) | ((D == dt) & (items[None, :] < tgt[:, None]))
        ahead &= ~excl
        for u, r in zip(ub.tolist(), (1 + ahead.sum(axis=1)).tolist()):
            ranks[u] = int(r)
    return ranks


def evaluate(split: DataSplit, params: ModelParams, K: int = 20, grouping: Sequence[int] = DEFAULT_GROUPS,
             use_attention: bool | None = None, target: str = "test") -> EvalReport:
    """HR@K / NDCG@K over users, overall and per training-sparsity group.

    The other held-out item (validation when testing, test when validating)
    is removed from the candidate set along with the user's training items.
    """
    if target == "test":
        targets, other = split.test, split.validation
    elif target == "validation":
        targets, other = split.validation, split.test
    else:
        raise ContractError(f"target must be 'test' or 'validation', got {target!r}")
    if not targets:
        raise DataError(f"{target} map is empty")
    graph = split.train
    all_users = graph.users
    present = {u: targets[u] for u in all_users.tolist() if u in targets}
    skipped = int(all_users.size - len(present))
    if skipped:
        log.warning("%d users have no %s item and were skipped", skipped, target)
    ranks = heldout_ranks(params, graph, present, other, use_attention)
    thresholds = tuple(sorted(grouping))
    groups = {label: [0, 0.0, 0.0] for label in group_labels(thresholds)}
    hist = graph.user_histories
    hr_total = ndcg_total = 0.0
    for u in sorted(ranks):
        rank = ranks[u]
        hr, nd = hr_at_k(rank, K), ndcg_at_k(rank, K)
        hr_total += hr
        ndcg_total += nd
        n_train = int(hist[u].size) if u in hist else 0
        g = groups[group_of(n_train, thresholds)]
        g[0] += 1
        g[1] += hr
        g[2] += nd
    n = len(ranks)
    per_group = {label: (c, (h / c if c else 0.0), (d / c if c else 0.0)) for label, (c, h, d) in groups.items()}
    return EvalReport(
        hr_at_k=hr_total / n if n else 0.0,
        ndcg_at_k=ndcg_total / n if n else 0.0,
        K=K,
        n_users=n,
        skipped=skipped,
        per_group=per_group,
        per_user_rank=ranks,
    )


def cooccurrence_sweep(split: DataSplit, ratios: Sequence[float] = DEFAULT_RATIOS, config=None,
                       model_config=None, K: int | None = None) -> dict:
    """Retrain per co-occurrence sampling ratio (same seed) and evaluate on the fixed test split."""
    from .training import TrainConfig, fit, subsample_cooccurrence

    config = config or TrainConfig()
    K = K or config.eval_k
    for ratio in ratios:
        if not 0.0 <= ratio <= 1.0:
            raise ContractError(f"ratio {ratio} outside [0, 1]")
    out = {}
    for ratio in ratios:
        train = subsample_cooccurrence(split.train, ratio, config.seed)
        sub = DataSplit(train, split.validation, split.test)
        params, _ = fit(sub, config, model_config)
        out[ratio] = evaluate(sub, params, K=K)
    return out


ABLATION_ORDER = ("o/dc", "o/c", "o/d", "o/att", "full")


def ablation_study(split: DataSplit, config=None, model_config=None, K: int | None = None,
                   variants: Sequence[str] = ABLATION_ORDER) -> dict:
    """Train and test every ablation variant with a shared seed."""
    from dataclasses import replace

    from .training import TrainConfig, fit

    config = config or TrainConfig()
    K = K or config.eval_k
    out = {}
    for v in variants:
        params, _ = fit(split, replace(config, ablation=v), model_config)
        out[v] = evaluate(split, params, K=K)
    return out


def write_table(rows: Sequence[dict], dest=None) -> str:
    """Comma-separated table with one header row; returns the text and optionally writes it."""
    buf = io.StringIO()
    if rows:
        fieldnames = list(rows[0])
        for r in rows[1:]:
            for key in r:
                if key not in fieldnames:
                    fieldnames.append(key)
        w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
