"""Optimization: hard-negative sampling, multi-task hinge losses, AdaGrad, unit-ball constraints."""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ContractError, NumericalError, SamplingExhaustedError
from .evaluation import evaluate
from .gradients import GradientSet, kind_for, pair_loss_and_grads
from .graph import DataSplit, Triplet, UnifiedGraph
from .model import (
    REINIT_NORM,
    ModelConfig,
    ModelParams,
    UndirectedScorer,
    init_params,
    project_unit_ball,
    triplet_distance,
)

__all__ = [
    "Ablation",
    "TrainConfig",
    "AdaGradState",
    "EpochSummary",
    "enabled_positives",
    "sample_hard_negative",
    "sample_hard_negatives",
    "train_epoch",
    "fit",
    "fit_full",
    "FitResult",
    "subsample_cooccurrence",
    "LEARNING_RATE_GRID",
]

log = logging.getLogger(__name__)

LEARNING_RATE_GRID = (0.001, 0.005, 0.01, 0.05, 0.1)


class Ablation(str, enum.Enum):
    FULL = "full"
    NO_DIRECTED_NO_CO = "o/dc"
    NO_CO = "o/c"
    NO_DIRECTED = "o/d"
    NO_ATTENTION = "o/att"

    @classmethod
    def parse(cls, text) -> "Ablation":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "/").replace("_", "/")
        if key in ("ugrec", "all"):
            key = "full"
        for a in cls:
            if a.value == key:
                return a
        raise ContractError(f"unknown ablation {text!r}; expected one of {[a.value for a in cls]}")

    @property
    def keeps_side_directed(self) -> bool:
        return self in (Ablation.FULL, Ablation.NO_CO, Ablation.NO_ATTENTION)

    @property
    def keeps_cooccurrence(self) -> bool:
        return self in (Ablation.FULL, Ablation.NO_DIRECTED, Ablation.NO_ATTENTION)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    margin_interaction: float = 1.8
    margin_other: float = 1.0
    neg_pool: int = 20
    lambda_d: float = 1.0
    lambda_c: float = 1.0
    epochs: int = 1000
    eval_every: int = 10
    eval_k: int = 20
    seed: int = 0
    ablation: Ablation = Ablation.FULL
    batch_size: int = 1024
    # evaluations without improvement before stopping; None trains all epochs
    patience: int | None = 20
    # "closest" keeps the candidate with the largest hinge violation
    hardest: str = "closest"

    def __post_init__(self):
        object.__setattr__(self, "ablation", Ablation.parse(self.ablation))
        if self.margin_interaction <= 0 or self.margin_other <= 0:
            raise ContractError("margins must be positive")
        if self.neg_pool < 1:
            raise ContractError("neg_pool must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.eval_every < 1 or self.epochs < 0:
            raise ContractError("learning_rate, batch_size, eval_every must be positive; epochs >= 0")
        if self.hardest not in ("closest", "farthest"):
            raise ContractError(f"hardest must be 'closest' or 'farthest', got {self.hardest!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = self.ablation.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class AdaGradState:
    """Per-coordinate squared-gradient accumulators, one array per parameter family."""

    def __init__(self, params: ModelParams, epsilon: float = 1e-8):
        self.epsilon = epsilon
        self.acc = {f: np.zeros_like(params.family(f)) for f in params.families}

    def step(self, params: ModelParams, grads: GradientSet, lr: float) -> None:
        """``acc += g^2`` then ``theta -= lr * g / sqrt(acc + eps)`` on the touched rows."""
        for fam, rows in grads.rows.items():
            g = grads.values[fam]
            a = self.acc[fam][rows] + g * g
            self.acc[fam][rows] = a
            params.family(fam)[rows] -= lr * g / np.sqrt(a + self.epsilon)


@dataclass
class EpochSummary:
    losses: dict = field(default_factory=dict)
    active_fraction: float = 0.0
    n_pairs: int = 0
    pairs_per_relation: dict = field(default_factory=dict)


def effective_model_config(model_config: ModelConfig, ablation: Ablation) -> ModelConfig:
    if ablation is Ablation.NO_ATTENTION:
        return replace(model_config, use_attention=False)
    return model_config


def enabled_positives(graph: UnifiedGraph, ablation=Ablation.FULL,
                      scorer=UndirectedScorer.HYPERPLANE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positive (head, tail, relation) arrays processed in one epoch under an ablation.

    With the directed-pair scorer each co-occurrence edge appears in both orientations.
    """
    ablation = Ablation.parse(ablation)
    scorer = UndirectedScorer(scorer)
    hs, ts, rs = [], [], []
    for rel in graph.catalog:
        if rel.is_interaction:
            keep = True
        elif rel.directed:
            keep = ablation.keeps_side_directed
        else:
            keep = ablation.keeps_cooccurrence
        if not keep:
            continue
        h, t = graph.heads[rel.id], graph.tails[rel.id]
        hs.append(h)
        ts.append(t)
        rs.append(np.full(h.size, rel.id, dtype=np.int64))
        if not rel.directed and scorer is UndirectedScorer.DIRECTED_PAIR:
            hs.append(t)
            ts.append(h)
            rs.append(np.full(h.size, rel.id, dtype=np.int64))
    return np.concatenate(hs), np.concatenate(ts), np.concatenate(rs)


_warned_pools: set = set()


def sample_hard_negatives(graph: UnifiedGraph, params: ModelParams, h, t, r, N: int,
                          rng: np.random.Generator, use_attention: bool | None = None,
                          hardest: str = "closest") -> np.ndarray:
    """Replacement tails for a batch of positives.

    For each positive, ``N`` tails of the right kind are drawn uniformly,
    rejecting known positives (up to ``10 N`` draws); the candidate with the
    smallest distance (or largest, for ``hardest="farthest"``) wins, ties going
    to the smallest entity index.
    """
    if N < 1:
        raise ContractError("N must be >= 1")
    h, t, r = (np.asarray(a, dtype=np.int64) for a in (h, t, r))
    out = np.empty_like(t)
    n_ent = np.int64(graph.n_entities)
    for rel in np.unique(r):
        rel = int(rel)
        sel = np.flatnonzero(r == rel)
        directed = graph.catalog[rel].directed
        pool = graph.tail_pool(rel)
        keys = graph.positive_keys(rel)
        if pool.size < 2 * N and rel not in _warned_pools:
            _warned_pools.add(rel)
            log.warning("relation %s: tail pool of %d entities is smaller than 2N=%d",
                        graph.catalog[rel].name, pool.size, 2 * N)
        if pool.size == 0:
            raise SamplingExhaustedError(f"relation {graph.catalog[rel].name} has no tail candidates")
        hs = h[sel]

        def valid(heads, cand):
            if directed:
                key = heads * n_ent + cand
            else:
                key = np.minimum(heads, cand) * n_ent + np.maximum(heads, cand)
            pos = np.searchsorted(keys, key)
            known = (pos < keys.size) & (keys[np.minimum(pos, keys.size - 1)] == key)
            ok = ~known
            if not directed:
                ok &= cand != heads
            return ok

        cand = pool[rng.integers(0, pool.size, size=(sel.size, N))]
        head_grid = np.broadcast_to(hs[:, None], cand.shape)
        ok = valid(head_grid, cand)
        for _ in range(9):
            bad = ~ok
            nbad = int(bad.sum())
            if not nbad:
                break
            cand[bad] = pool[rng.integers(0, pool.size, size=nbad)]
            ok[bad] = valid(head_grid[bad], cand[bad])
        empty = ~ok.any(axis=1)
        if empty.any():
            j = sel[np.flatnonzero(empty)[0]]
            raise SamplingExhaustedError(
                f"no valid negative for triplet ({int(h[j])}, {int(t[j])}, {graph.catalog[rel].name}) "
                f"after {10 * N} draws")
        if N == 1:
            out[sel] = cand[:, 0]
            continue
        d = triplet_distance(hs[:, None], cand, rel, params, use_attention)
        if hardest == "closest":
            d = np.where(ok, d, np.inf)
            best = d.min(axis=1, keepdims=True)
        else:
            d = np.where(ok, d, -np.inf)
            best = d.max(axis=1, keepdims=True)
        tied = ok & (d == best)
        out[sel] = np.where(tied, cand, np.iinfo(np.int64).max).min(axis=1)
    return out


def sample_hard_negative(pos: Triplet, graph: UnifiedGraph, params: ModelParams, N: int,
                         rng: np.random.Generator, use_attention: bool | None = None,
                         hardest: str = "closest") -> Triplet:
    """Single-triplet form of :func:`sample_hard_negatives`."""
    tn = sample_hard_negatives(graph, params, [pos.head], [pos.tail], [pos.relation], N, rng,
                               use_attention, hardest)
    return Triplet(pos.head, int(tn[0]), pos.relation)


def _relation_settings(graph: UnifiedGraph, params: ModelParams, config: TrainConfig):
    kinds, margins, weights = {}, {}, {}
    for rel in graph.catalog:
        kinds[rel.id] = kind_for(params, rel.id)
        margins[rel.id] = config.margin_interaction if rel.is_interaction else config.margin_other
        weights[rel.id] = config.lambda_d if rel.directed else config.lambda_c
    return kinds, margins, weights


def _reinit_degenerate_normals(params: ModelParams, rng: np.random.Generator) -> None:
    if params.config.undirected_scorer is not UndirectedScorer.HYPERPLANE:
        return
    k = params.k
    for rid in np.flatnonzero(~params.rel_directed):
        if np.linalg.norm(params.rel_emb[rid]) < REINIT_NORM:
            bound = 1.0 / np.sqrt(k)
            params.rel_emb[rid] = project_unit_ball(rng.uniform(-bound, bound, size=k))


def train_epoch(graph: UnifiedGraph, params: ModelParams, state: AdaGradState, config: TrainConfig,
                rng: np.random.Generator | None = None, positives=None) -> EpochSummary:
    """One shuffled pass over the enabled positives; mutates ``params`` and ``state``.

    Each batch samples its negatives and computes all gradients against the
    parameters as they were at the start of the batch, then applies one
    AdaGrad step and re-projects the touched embeddings into the unit ball.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    use_att = params.config.use_attention
    if positives is None:
        positives = enabled_positives(graph, config.ablation, params.config.undirected_scorer)
    h_all, t_all, r_all = positives
    n = h_all.size
    kinds, margins, weights = _relation_settings(graph, params, config)
    order = rng.permutation(n)
    loss_sum = np.zeros(len(graph.catalog))
    count = np.zeros(len(graph.catalog), dtype=np.int64)
    active = 0
    for start in range(0, n, config.batch_size):
        idx = order[start:start + config.batch_size]
        bh, bt, br = h_all[idx], t_all[idx], r_all[idx]
        tn = sample_hard_negatives(graph, params, bh, bt, br, config.neg_pool, rng, use_att, config.hardest)
        total = GradientSet()
        for rel in np.unique(br):
            rel = int(rel)
            sel = br == rel
            loss, g = pair_loss_and_grads(params, kinds[rel], bh[sel], bt[sel], tn[sel], br[sel],
                                          margins[rel], use_att, weights[rel])
            if not np.all(np.isfinite(loss)):
                j = np.flatnonzero(~np.isfinite(loss))[0]
                raise NumericalError(
                    f"non-finite loss for triplet ({int(bh[sel][j])}, {int(bt[sel][j])}, "
                    f"{graph.catalog[rel].name}) with negative tail {int(tn[sel][j])}")
            loss_sum[rel] += loss.sum()
            count[rel] += loss.size
            active += int((loss > 0).sum())
            total = total + g
        if total.is_empty():
            continue
        state.step(params, total, config.learning_rate)
        for fam in params.constrained:
            rows = total.rows.get(fam)
            if rows is not None:
                arr = params.family(fam)
                arr[rows] = project_unit_ball(arr[rows])
        _reinit_degenerate_normals(params, rng)
    losses = {graph.catalog[i].name: float(loss_sum[i] / count[i]) for i in range(len(graph.catalog)) if count[i]}
    return EpochSummary(
        losses=losses,
        active_fraction=active / n if n else 0.0,
        n_pairs=n,
        pairs_per_relation={graph.catalog[i].name: int(count[i]) for i in range(len(graph.catalog)) if count[i]},
    )


@dataclass
class FitResult:
    params: ModelParams
    final: ModelParams
    history: list
    best_epoch: int
    best_hr: float
    epochs_run: int


def fit_full(split: DataSplit, config: TrainConfig, model_config: ModelConfig | None = None,
             on_eval: Callable[[dict], None] | None = None) -> FitResult:
    """Train from scratch and keep the parameters with the best validation HR.

    Validation runs every ``eval_every`` epochs; training stops early after
    ``patience`` evaluations without improvement.  With ``epochs=0`` both the
    best and final parameters are the initialization.
    """
    model_config = effective_model_config(model_config or ModelConfig(), config.ablation)
    graph = split.train
    params = init_params(graph, model_config, config.seed)
    history: list[dict] = []
    if config.epochs == 0:
        return FitResult(params, params, history, 0, float("nan"), 0)
    state = AdaGradState(params)
    rng = np.random.default_rng([config.seed, 1])
    positives = enabled_positives(graph, config.ablation, model_config.undirected_scorer)
    best, best_hr, best_epoch, stale = None, -1.0, 0, 0
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        summary = train_epoch(graph, params, state, config, rng, positives)
        if epoch % config.eval_every:
            continue
        report = evaluate(split, params, K=config.eval_k, target="validation")
        record = {
            "epoch": epoch,
            "variant": config.ablation.value,
            "losses": summary.losses,
            "active_fraction": summary.active_fraction,
            "hr": report.hr_at_k,
            "ndcg": report.ndcg_at_k,
            "K": config.eval_k,
        }
        history.append(record)
        if on_eval is not None:
            on_eval(record)
        if report.hr_at_k > best_hr:
            best, best_hr, best_epoch, stale = params.copy(), report.hr_at_k, epoch, 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                log.info("early stop at epoch %d (best validation HR %.4f)", epoch, best_hr)
                break
    if best is None:
        # fewer epochs than one evaluation interval
        best, best_epoch, best_hr = params.copy(), epoch, float("nan")
    return FitResult(best, params, history, best_epoch, best_hr, epoch)


def fit(split: DataSplit, config: TrainConfig, model_config: ModelConfig | None = None,
        on_eval: Callable[[dict], None] | None = None) -> tuple[ModelParams, list[dict]]:
    """Shorthand for :func:`fit_full` returning ``(best params, history)``."""
    res = fit_full(split, config, model_config, on_eval)
    return res.params, res.history


def subsample_cooccurrence(graph: UnifiedGraph, ratio: float, seed: int = 0) -> UnifiedGraph:
    """Keep ``round(ratio * n)`` randomly chosen triplets of every undirected relation."""
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"ratio must lie in [0, 1], got {ratio}")
    rng = np.random.default_rng(seed)
    heads, tails = list(graph.heads), list(graph.tails)
    for rid in graph.catalog.undirected_ids:
        n = graph.count(rid)
        keep = int(np.floor(ratio * n + 0.5))
        idx = np.sort(rng.permutation(n)[:keep])
        heads[rid], tails[rid] = heads[rid][idx], tails[rid][idx]
    return graph.replace(heads=heads, tails=tails)
