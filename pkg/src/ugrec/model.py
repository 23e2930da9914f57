"""Learnable parameters and the forward geometry.

Directed triplets are scored in a relation-specific space reached through a
rank-1-plus-identity mapping, ``M e = e + r_p (e_p . e)``, and optionally gated
by a head-tail attention vector.  Undirected (co-occurrence) triplets are
scored on the hyperplane whose normal is the (attended) relation vector.

All geometry functions broadcast over leading axes, so the same code scores a
single triplet or a user-by-item matrix.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ContractError, DegenerateNormalError

__all__ = [
    "UndirectedScorer",
    "ModelConfig",
    "ModelParams",
    "transd_project",
    "attention_vector",
    "relation_attention",
    "directed_distance",
    "hyperplane_project",
    "undirected_distance",
    "distmult_score",
    "transe_distance",
    "triplet_distance",
    "init_params",
    "project_unit_ball",
    "save_checkpoint",
    "load_checkpoint",
    "DEGENERATE_NORM_SQ",
    "REINIT_NORM",
]

DEGENERATE_NORM_SQ = 1e-12
REINIT_NORM = 1e-6


class UndirectedScorer(str, enum.Enum):
    HYPERPLANE = "hyperplane"
    DISTMULT = "distmult"
    # each co-occurrence edge trained as two directed translation triplets
    DIRECTED_PAIR = "directed-pair"


@dataclass(frozen=True)
class ModelConfig:
    k: int = 64
    use_attention: bool = True
    undirected_scorer: UndirectedScorer = UndirectedScorer.HYPERPLANE
    shared_attention: bool = False
    # multiply the attention gate by k so its entries average 1 instead of 1/k
    scale_attention: bool = False

    def __post_init__(self):
        if int(self.k) < 1:
            raise ContractError(f"embedding dimension must be >= 1, got {self.k}")
        object.__setattr__(self, "undirected_scorer", UndirectedScorer(self.undirected_scorer))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undirected_scorer"] = self.undirected_scorer.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


FAMILIES = ("entity_emb", "entity_proj", "rel_emb", "rel_proj", "att_weight", "att_bias")
CONSTRAINED = ("entity_emb", "entity_proj", "rel_emb", "rel_proj")


@dataclass(eq=False)
class ModelParams:
    """Flat parameter store.

    ``rel_proj`` has a row for every relation; rows of undirected relations
    are never read.  ``att_weight`` is ``(n_att, k, 2k)`` where ``n_att`` is the
    number of relations, or 1 when attention is shared.
    """

    entity_emb: np.ndarray
    entity_proj: np.ndarray
    rel_emb: np.ndarray
    rel_proj: np.ndarray
    att_weight: np.ndarray
    att_bias: np.ndarray
    rel_directed: np.ndarray
    config: ModelConfig = field(default_factory=ModelConfig)
    catalog_hash: str = ""

    families = FAMILIES
    constrained = CONSTRAINED

    @property
    def k(self) -> int:
        return self.entity_emb.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel_emb.shape[0]

    def att_index(self, r):
        r = np.asarray(r)
        return np.zeros_like(r) if self.config.shared_attention else r

    def family(self, name: str) -> np.ndarray:
        if name not in FAMILIES:
            raise KeyError(name)
        return getattr(self, name)

    def copy(self) -> "ModelParams":
        return replace(self, **{f: getattr(self, f).copy() for f in FAMILIES},
                       rel_directed=self.rel_directed.copy())

    def with_config(self, config: ModelConfig) -> "ModelParams":
        return replace(self, config=config)

    def identical_to(self, other: "ModelParams") -> bool:
        """Bit-for-bit equality of every tensor."""
        return all(np.array_equal(getattr(self, f), getattr(other, f)) and
                   getattr(self, f).tobytes() == getattr(other, f).tobytes() for f in FAMILIES)

    def max_constrained_norm(self) -> float:
        return max(float(np.linalg.norm(getattr(self, f), axis=-1).max(initial=0.0)) for f in CONSTRAINED)


# -- primitives --------------------------------------------------------------


def _check_last_dim(*arrays):
    dims = {np.shape(a)[-1] if np.ndim(a) else None for a in arrays}
    if len(dims) != 1 or None in dims:
        raise ContractError(f"dimension mismatch: {[np.shape(a) for a in arrays]}")


def transd_project(e, e_p, r_p):
    """Map an entity into a relation space: ``(r_p e_p^T + I) e`` without forming the matrix."""
    e, e_p, r_p = np.asarray(e, float), np.asarray(e_p, float), np.asarray(r_p, float)
    _check_last_dim(e, e_p, r_p)
    return e + r_p * np.sum(e_p * e, axis=-1, keepdims=True)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def attention_vector(h_proj, t_proj, W, b):
    """``softmax(ReLU(W [h:t] + b))`` for one weight matrix; broadcasts over leading axes."""
    h_proj, t_proj = np.asarray(h_proj, float), np.asarray(t_proj, float)
    W, b = np.asarray(W, float), np.asarray(b, float)
    _check_last_dim(h_proj, t_proj)
    k = h_proj.shape[-1]
    if W.shape != (k, 2 * k) or b.shape != (k,):
        raise ContractError(f"attention weights must be ({k}, {2 * k}) and ({k},), got {W.shape}, {b.shape}")
    h_proj, t_proj = np.broadcast_arrays(h_proj, t_proj)
    x = np.concatenate([h_proj, t_proj], axis=-1)
    return _softmax(np.maximum(x @ W.T + b, 0.0))


def relation_attention(params: ModelParams, x, r):
    """Pre-activations and gate for concatenated inputs ``x (..., 2k)`` under relation(s) ``r``.

    The gate includes the optional ``k`` scaling.
    """
    lead = x.shape[:-1]
    k = params.k
    x2 = x.reshape(-1, 2 * k)
    a_idx = np.broadcast_to(params.att_index(r), lead).reshape(-1)
    W, b = params.att_weight, params.att_bias
    uniq = np.unique(a_idx)
    if uniq.size == 1:
        a = uniq[0]
        pre = x2 @ W[a].T + b[a]
    else:
        pre = np.empty((x2.shape[0], k))
        for a in uniq:
            sel = a_idx == a
            pre[sel] = x2[sel] @ W[a].T + b[a]
    gate = _softmax(np.maximum(pre, 0.0))
    if params.config.scale_attention:
        gate = gate * k
    return pre.reshape(lead + (k,)), gate.reshape(lead + (k,))


def _require(params: ModelParams, r, directed: bool, what: str):
    mask = params.rel_directed[np.asarray(r)]
    if directed and not np.all(mask):
        raise ContractError(f"{what} needs a directed relation, got relation {r}")
    if not directed and np.any(mask):
        raise ContractError(f"{what} needs an undirected relation, got relation {r}")


def _use_att(params, use_attention):
    return params.config.use_attention if use_attention is None else bool(use_attention)


def directed_distance(h, t, r, params: ModelParams, use_attention: bool | None = None):
    """Squared translation residual ``|| M_rh h + r (.) Att - M_rt t ||^2`` in the relation space."""
    _require(params, r, True, "directed_distance")
    E, P = params.entity_emb, params.entity_proj
    rp = params.rel_proj[r]
    hr = transd_project(E[h], P[h], rp)
    tr = transd_project(E[t], P[t], rp)
    hr, tr = np.broadcast_arrays(hr, tr)
    rel = params.rel_emb[r]
    if _use_att(params, use_attention):
        _, gate = relation_attention(params, np.concatenate([hr, tr], axis=-1), r)
        rel = rel * gate
    d = hr + rel - tr
    return np.sum(d * d, axis=-1)


def hyperplane_project(e, r_hat):
    """Remove the component of ``e`` along ``r_hat``."""
    e, r_hat = np.asarray(e, float), np.asarray(r_hat, float)
    _check_last_dim(e, r_hat)
    s = np.sum(r_hat * r_hat, axis=-1, keepdims=True)
    if np.any(s < DEGENERATE_NORM_SQ):
        raise DegenerateNormalError(f"hyperplane normal has squared norm {float(s.min()):.3g}")
    return e - (np.sum(r_hat * e, axis=-1, keepdims=True) / s) * r_hat


def _undirected_normal(params, h, t, r, use_attention):
    rel = params.rel_emb[r]
    if _use_att(params, use_attention):
        E = params.entity_emb
        lo, hi = np.minimum(h, t), np.maximum(h, t)
        elo, ehi = np.broadcast_arrays(E[lo], E[hi])
        _, gate = relation_attention(params, np.concatenate([elo, ehi], axis=-1), r)
        rel = rel * gate
    return rel


def undirected_distance(h, t, r, params: ModelParams, use_attention: bool | None = None):
    """Squared distance between both entities after projection onto the relation hyperplane.

    The attention input is ordered by entity index, so swapping ``h`` and ``t``
    gives a bit-identical result.
    """
    _require(params, r, False, "undirected_distance")
    E = params.entity_emb
    r_hat = _undirected_normal(params, h, t, r, use_attention)
    d = hyperplane_project(E[h], r_hat) - hyperplane_project(E[t], r_hat)
    return np.sum(d * d, axis=-1)


def distmult_score(h, t, r, params: ModelParams):
    """Bilinear-diagonal similarity ``t^T diag(r) h`` (higher means closer)."""
    _require(params, r, False, "distmult_score")
    E = params.entity_emb
    return np.sum(E[t] * params.rel_emb[r] * E[h], axis=-1)


def transe_distance(h, t, r, params: ModelParams):
    """Plain translation residual ``||h + r - t||^2`` in the entity space."""
    E = params.entity_emb
    d = E[h] + params.rel_emb[r] - E[t]
    return np.sum(d * d, axis=-1)


def triplet_distance(h, t, r: int, params: ModelParams, use_attention: bool | None = None):
    """Distance under whichever scorer the relation uses (DistMult returns the negated score)."""
    if params.rel_directed[r]:
        return directed_distance(h, t, r, params, use_attention)
    scorer = params.config.undirected_scorer
    if scorer is UndirectedScorer.HYPERPLANE:
        return undirected_distance(h, t, r, params, use_attention)
    if scorer is UndirectedScorer.DISTMULT:
        return -distmult_score(h, t, r, params)
    return transe_distance(h, t, r, params)


def project_unit_ball(v):
    """Rescale vectors (last axis) with norm above 1 back onto the unit sphere."""
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norms > 1.0, v / np.where(norms > 1.0, norms, 1.0), v)


def _uniform_rows(rng, n, k):
    bound = 1.0 / np.sqrt(k)
    return project_unit_ball(rng.uniform(-bound, bound, size=(n, k)))


def init_params(graph, config: ModelConfig | None = None, seed: int = 0) -> ModelParams:
    """Uniform ``[-1/sqrt(k), 1/sqrt(k)]`` embeddings (unit-ball projected), small attention weights, zero bias."""
    config = config or ModelConfig()
    k = config.k
    rng = np.random.default_rng(seed)
    n_ent, n_rel = graph.n_entities, len(graph.catalog)
    n_att = 1 if config.shared_attention else n_rel
    ent = _uniform_rows(rng, n_ent, k)
    ent_p = _uniform_rows(rng, n_ent, k)
    rel = _uniform_rows(rng, n_rel, k)
    rel_p = _uniform_rows(rng, n_rel, k)
    bound = 1.0 / np.sqrt(k)
    W = rng.uniform(-bound, bound, size=(n_att, k, 2 * k)) / np.sqrt(2 * k)
    b = np.zeros((n_att, k))
    return ModelParams(ent, ent_p, rel, rel_p, W, b, graph.catalog.directed_mask(),
                       config, graph.catalog.hash())


# -- checkpoints ----------------------------------------------------------------

MAGIC = b"UGRECKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    """Write a little-endian binary checkpoint (layout documented in the README)."""
    meta = {
        "config": params.config.to_dict(),
        "rel_directed": [bool(x) for x in params.rel_directed],
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    digest = bytes.fromhex(params.catalog_hash) if params.catalog_hash else bytes(32)
    chunks = [
        MAGIC,
        struct.pack("<IIII", CHECKPOINT_VERSION, params.k, params.n_entities, params.n_relations),
        digest,
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
        struct.pack("<I", len(FAMILIES)),
    ]
    for name in FAMILIES:
        arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
        nb = name.encode("ascii")
        chunks.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        return _parse_checkpoint(path, data)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None


def _parse_checkpoint(path, data: bytes) -> tuple[ModelParams, dict]:
    pos = 8
    version, k, n_ent, n_rel = struct.unpack_from("<IIII", data, pos)
    pos += 16
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = data[pos:pos + 32]
    pos += 32
    (meta_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_tensors,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(n_tensors):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("ascii")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    missing = set(FAMILIES) - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    params = ModelParams(
        **{f: tensors[f] for f in FAMILIES},
        rel_directed=np.array(meta["rel_directed"], dtype=bool),
        config=ModelConfig.from_dict(meta["config"]),
        catalog_hash=digest.hex() if any(digest) else "",
    )
    if params.k != k or params.n_entities != n_ent or params.n_relations != n_rel:
        raise CheckpointError(f"{path}: header sizes disagree with tensor shapes")
    return params, meta


def vocabulary_hash(vocab) -> str:
    h = hashlib.sha256()
    h.update(vocab.to_text().encode("utf-8"))
    return h.hexdigest()
