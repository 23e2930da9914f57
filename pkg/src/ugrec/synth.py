"""Planted-cluster synthetic graphs, a naive reference scorer, and the trivial-solution probe."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DataError, DegenerateNormalError
from .graph import EntityKind, RelationCatalog, Triplet, UnifiedGraph, Vocabulary

__all__ = [
    "SynthConfig",
    "synthetic_catalog",
    "generate_synthetic_graph",
    "oracle_distance",
    "ProbeRow",
    "trivial_solution_probe",
]


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    n_items: int = 100
    n_clusters: int = 5
    interactions_per_user: int = 8
    co_edge_prob_intra: float = 0.3
    co_edge_prob_inter: float = 0.005
    n_categories: int = 5
    n_makers: int = 10
    attribute_dropout: float = 0.5
    intra_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_items", "n_clusters"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        for name in ("co_edge_prob_intra", "co_edge_prob_inter", "attribute_dropout", "intra_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1]")
        if self.co_edge_prob_intra < self.co_edge_prob_inter:
            raise ContractError("co_edge_prob_intra must not be below co_edge_prob_inter")


def synthetic_catalog() -> RelationCatalog:
    return RelationCatalog.from_specs([
        ("interact", "Directed", "User", "Item", True),
        ("belong_to", "Directed", "Item", "Attribute", False),
        ("made_by", "Directed", "Item", "Attribute", False),
        ("co_view", "Undirected", "Item", "Item", False),
    ])


def generate_synthetic_graph(config: SynthConfig = SynthConfig()) -> tuple[UnifiedGraph, np.ndarray]:
    """Build a graph with clustered items and cluster-loyal users.

    Returns the graph and the cluster id of every item (indexed by item
    number, ``i0 .. i{n_items-1}``).  Interaction timestamps are the draw
    order per user, so leave-one-out holds out the last-drawn item.
    """
    c = config
    if c.interactions_per_user > c.n_items:
        raise ContractError(f"{c.interactions_per_user} interactions per user exceed {c.n_items} items")
    if c.interactions_per_user < 0:
        raise ContractError("interactions_per_user must be >= 0")
    rng = np.random.default_rng(c.seed)
    catalog = synthetic_catalog()
    inter, belong, made, co = (catalog.by_name(n) for n in ("interact", "belong_to", "made_by", "co_view"))
    vocab = Vocabulary()
    users = [vocab.add(EntityKind.USER, "", f"u{j}") for j in range(c.n_users)]
    items = [vocab.add(EntityKind.ITEM, "", f"i{j}") for j in range(c.n_items)]
    clusters = rng.permutation(np.arange(c.n_items) % c.n_clusters)
    members = [np.flatnonzero(clusters == q) for q in range(c.n_clusters)]

    trips: list[Triplet] = []
    for u in range(c.n_users):
        pref = int(rng.integers(c.n_clusters))
        intra = list(rng.permutation(members[pref]))
        inter_pool = list(rng.permutation(np.flatnonzero(clusters != pref)))
        for ts in range(1, c.interactions_per_user + 1):
            take_intra = rng.random() < c.intra_fraction
            if (take_intra and intra) or not inter_pool:
                j = intra.pop()
            else:
                j = inter_pool.pop()
            trips.append(Triplet(users[u], items[int(j)], inter.id, ts))

    cats_of = [[q for q in range(c.n_categories) if q % c.n_clusters == cl] or
               ([cl % c.n_categories] if c.n_categories else []) for cl in range(c.n_clusters)]
    for j in range(c.n_items):
        options = cats_of[clusters[j]]
        dropped = rng.random() < c.attribute_dropout
        if options and not dropped:
            cat = options[int(rng.integers(len(options)))]
            trips.append(Triplet(items[j], vocab.add(EntityKind.ATTRIBUTE, belong.name, f"c{cat}"), belong.id))
        if c.n_makers:
            maker = int(rng.integers(c.n_makers))
            trips.append(Triplet(items[j], vocab.add(EntityKind.ATTRIBUTE, made.name, f"m{maker}"), made.id))

    a, b = np.triu_indices(c.n_items, k=1)
    same = clusters[a] == clusters[b]
    p = np.where(same, c.co_edge_prob_intra, c.co_edge_prob_inter)
    hit = rng.random(a.size) < p
    for x, y in zip(a[hit].tolist(), b[hit].tolist()):
        trips.append(Triplet(items[x], items[y], co.id))
    return UnifiedGraph.from_triplets(catalog, vocab, trips), clusters


def oracle_distance(triplet: Triplet, params, use_attention: bool | None = None, scorer: str | None = None) -> float:
    """Reference distance computed the slow, explicit way.

    Builds the full ``k x k`` mapping matrices, evaluates the softmax without
    any stabilization tricks and applies the hyperplane formula literally.
    It shares no code with the model's scorers.  ``scorer`` selects how an
    undirected triplet is scored ("hyperplane", "distmult" (negated score)
    or "directed-pair"); it defaults to the model configuration.
    """
    k = params.entity_emb.shape[1]
    att_on = params.config.use_attention if use_attention is None else use_attention
    scorer = scorer or params.config.undirected_scorer.value
    r = triplet.relation
    h_vec = np.array(params.entity_emb[triplet.head], dtype=float)
    t_vec = np.array(params.entity_emb[triplet.tail], dtype=float)
    rel = np.array(params.rel_emb[r], dtype=float)
    a_row = 0 if params.config.shared_attention else r

    def gate(left, right):
        W = params.att_weight[a_row]
        b = params.att_bias[a_row]
        z = W @ np.concatenate([left, right]) + b
        z = np.array([v if v > 0 else 0.0 for v in z])
        e = np.exp(z)
        g = e / np.sum(e)
        return g * k if params.config.scale_attention else g

    if params.rel_directed[r]:
        rp = params.rel_proj[r]
        M_h = np.outer(rp, params.entity_proj[triplet.head]) + np.eye(k)
        M_t = np.outer(rp, params.entity_proj[triplet.tail]) + np.eye(k)
        h_r = M_h @ h_vec
        t_r = M_t @ t_vec
        trans = rel * gate(h_r, t_r) if att_on else rel
        v = h_r + trans - t_r
        return float(v @ v)

    if scorer == "distmult":
        return -float(t_vec @ np.diag(rel) @ h_vec)
    if scorer == "directed-pair":
        v = h_vec + rel - t_vec
        return float(v @ v)
    if att_on:
        if triplet.head <= triplet.tail:
            normal = rel * gate(h_vec, t_vec)
        else:
            normal = rel * gate(t_vec, h_vec)
    else:
        normal = rel
    nn = float(normal @ normal)
    if nn < 1e-12:
        raise DegenerateNormalError(f"hyperplane normal has squared norm {nn:.3g}")
    h_c = h_vec - (normal @ h_vec) * normal / nn
    t_c = t_vec - (normal @ t_vec) * normal / nn
    v = h_c - t_c
    return float(v @ v)


@dataclass
class ProbeRow:
    mode: str
    relation_norms: dict = field(default_factory=dict)
    mean_cooccurrence_distance: float = 0.0

    @property
    def mean_relation_norm(self) -> float:
        return float(np.mean(list(self.relation_norms.values())))

    def as_row(self) -> dict:
        row = {"mode": self.mode}
        for name, v in self.relation_norms.items():
            row[f"norm_{name}"] = round(v, 6)
        row["mean_cooccurrence_distance"] = round(self.mean_cooccurrence_distance, 6)
        return row


def trivial_solution_probe(graph: UnifiedGraph, config, model_config=None) -> list[ProbeRow]:
    """Train twice with one seed: co-occurrence as paired translations, then on hyperplanes.

    Reports the final norm of every undirected relation vector and the mean
    Euclidean distance between co-occurring item embeddings under each mode.
    """
    from .model import ModelConfig, UndirectedScorer, init_params
    from .training import AdaGradState, effective_model_config, enabled_positives, train_epoch

    und = graph.catalog.undirected_ids
    if not und or sum(graph.count(r) for r in und) == 0:
        raise DataError("the probe needs at least one undirected triplet")
    base = effective_model_config(model_config or ModelConfig(), config.ablation)
    rows = []
    for mode in (UndirectedScorer.DIRECTED_PAIR, UndirectedScorer.HYPERPLANE):
        mc = replace(base, undirected_scorer=mode)
        params = init_params(graph, mc, config.seed)
        state = AdaGradState(params)
        rng = np.random.default_rng([config.seed, 1])
        positives = enabled_positives(graph, config.ablation, mode)
        for _ in range(config.epochs):
            train_epoch(graph, params, state, config, rng, positives)
        norms = {graph.catalog[r].name: float(np.linalg.norm(params.rel_emb[r])) for r in und}
        E = params.entity_emb
        hs = np.concatenate([graph.heads[r] for r in und])
        ts = np.concatenate([graph.tails[r] for r in und])
        dist = float(np.mean(np.linalg.norm(E[hs] - E[ts], axis=1)))
        rows.append(ProbeRow(mode.value, norms, dist))
    return rows
