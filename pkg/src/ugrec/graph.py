"""Unified graph data model, triplet file I/O, filtering and leave-one-out splits.

A unified graph holds users, items and attribute values as entities in one
dense vocabulary, plus a catalog of relations that are either directed
(interaction, belongs-to, made-by, ...) or undirected (co-view, co-buy, ...).

Triplet file format (UTF-8, tab separated, ``#`` starts a comment line)::

    head<TAB>tail<TAB>relation[<TAB>timestamp]

Relation catalog format (one relation per line, tab separated)::

    name<TAB>directedness<TAB>head_kind<TAB>tail_kind<TAB>is_interaction
"""

from __future__ import annotations

import enum
import hashlib
import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CatalogError, DataError, FilterError, ParseError, SplitError

__all__ = [
    "EntityKind",
    "Directedness",
    "RelationDef",
    "RelationCatalog",
    "Vocabulary",
    "Triplet",
    "UnifiedGraph",
    "DataSplit",
    "parse_catalog",
    "parse_triplet_file",
    "load_graph",
    "write_triplet_file",
    "filter_min_interactions",
    "leave_one_out_split",
    "graph_statistics",
    "save_split",
    "load_split",
]


class EntityKind(str, enum.Enum):
    USER = "User"
    ITEM = "Item"
    ATTRIBUTE = "Attribute"

    @classmethod
    def parse(cls, text: str) -> "EntityKind":
        for kind in cls:
            if kind.value.lower() == text.strip().lower():
                return kind
        raise CatalogError(f"unknown entity kind {text!r}")


class Directedness(str, enum.Enum):
    DIRECTED = "Directed"
    UNDIRECTED = "Undirected"

    @classmethod
    def parse(cls, text: str) -> "Directedness":
        for d in cls:
            if d.value.lower() == text.strip().lower():
                return d
        raise CatalogError(f"unknown directedness {text!r}")


_TRUE = {"true", "1", "yes", "y"}
_FALSE = {"false", "0", "no", "n"}


@dataclass(frozen=True)
class RelationDef:
    id: int
    name: str
    directedness: Directedness
    head_kind: EntityKind
    tail_kind: EntityKind
    is_interaction: bool = False

    @property
    def directed(self) -> bool:
        return self.directedness is Directedness.DIRECTED

    def to_line(self) -> str:
        return "\t".join([
            self.name,
            self.directedness.value,
            self.head_kind.value,
            self.tail_kind.value,
            "true" if self.is_interaction else "false",
        ])


class RelationCatalog:
    """Ordered set of relation definitions; ids are positions."""

    def __init__(self, relations: Sequence[RelationDef]):
        self._relations = tuple(relations)
        self._by_name = {}
        for i, rel in enumerate(self._relations):
            if rel.id != i:
                raise CatalogError(f"relation {rel.name!r} has id {rel.id}, expected {i}")
            if rel.name in self._by_name:
                raise CatalogError(f"duplicate relation name {rel.name!r}")
            if not rel.name or any(c in rel.name for c in "\t\n"):
                raise CatalogError(f"invalid relation name {rel.name!r}")
            self._by_name[rel.name] = rel
        inter = [r for r in self._relations if r.is_interaction]
        if len(inter) != 1:
            raise CatalogError(f"catalog needs exactly one interaction relation, found {len(inter)}")
        r = inter[0]
        if not r.directed or r.head_kind is not EntityKind.USER or r.tail_kind is not EntityKind.ITEM:
            raise CatalogError(f"interaction relation {r.name!r} must be Directed User -> Item")
        for rel in self._relations:
            if not rel.directed and (rel.head_kind is not EntityKind.ITEM
                                     or rel.tail_kind is not EntityKind.ITEM):
                raise CatalogError(f"undirected relation {rel.name!r} must connect Item to Item")

    @classmethod
    def from_specs(cls, specs: Iterable[tuple]) -> "RelationCatalog":
        """Build from ``(name, directedness, head_kind, tail_kind, is_interaction)`` tuples."""
        rels = []
        for i, (name, d, hk, tk, inter) in enumerate(specs):
            rels.append(RelationDef(
                i, name,
                d if isinstance(d, Directedness) else Directedness.parse(d),
                hk if isinstance(hk, EntityKind) else EntityKind.parse(hk),
                tk if isinstance(tk, EntityKind) else EntityKind.parse(tk),
                bool(inter),
            ))
        return cls(rels)

    def __len__(self) -> int:
        return len(self._relations)

    def __iter__(self) -> Iterator[RelationDef]:
        return iter(self._relations)

    def __getitem__(self, rid: int) -> RelationDef:
        return self._relations[rid]

    def by_name(self, name: str) -> RelationDef:
        try:
            return self._by_name[name]
        except KeyError:
            raise CatalogError(f"unknown relation {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def interaction(self) -> RelationDef:
        return next(r for r in self._relations if r.is_interaction)

    @property
    def directed_ids(self) -> list[int]:
        return [r.id for r in self._relations if r.directed]

    @property
    def undirected_ids(self) -> list[int]:
        return [r.id for r in self._relations if not r.directed]

    def directed_mask(self) -> np.ndarray:
        return np.array([r.directed for r in self._relations], dtype=bool)

    def to_text(self) -> str:
        return "".join(r.to_line() + "\n" for r in self._relations)

    def hash(self) -> str:
        """SHA-256 over the canonical text form (hex)."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, RelationCatalog) and self._relations == other._relations

    def __repr__(self) -> str:
        return f"RelationCatalog({[r.name for r in self._relations]})"


def _open_lines(source) -> tuple[Iterable[str], str | None, object]:
    """Return (lines, display name, closer) for a path, text stream, str or line list."""
    if isinstance(source, os.PathLike) or (isinstance(source, str) and not any(c in source for c in "\t\n")):
        path = Path(source)
        fh = open(path, encoding="utf-8")
        return fh, str(path), fh
    if isinstance(source, str):
        return io.StringIO(source), None, None
    return source, getattr(source, "name", None), None


def parse_catalog(source) -> RelationCatalog:
    """Parse a relation catalog from a path, text, or iterable of lines."""
    lines, name, closer = _open_lines(source)
    specs = []
    try:
        for lineno, raw in enumerate(lines, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ParseError(f"expected 5 tab-separated fields, got {len(fields)}", lineno, name)
            rname, d, hk, tk, inter = (f.strip() for f in fields)
            if inter.lower() in _TRUE:
                flag = True
            elif inter.lower() in _FALSE:
                flag = False
            else:
                raise ParseError(f"bad is_interaction flag {inter!r}", lineno, name)
            try:
                specs.append((rname, Directedness.parse(d), EntityKind.parse(hk), EntityKind.parse(tk), flag))
            except CatalogError as exc:
                raise ParseError(str(exc), lineno, name) from None
    finally:
        if closer is not None:
            closer.close()
    return RelationCatalog.from_specs(specs)


class Vocabulary:
    """Dense entity index keyed by ``(kind, namespace, name)``.

    Users and items live in the empty namespace; attribute values are
    namespaced by the relation that introduced them, so the same string used
    as a category and as a manufacturer yields two entities.
    """

    def __init__(self):
        self._keys: list[tuple[EntityKind, str, str]] = []
        self._index: dict[tuple[EntityKind, str, str], int] = {}
        self._frozen = False

    @staticmethod
    def namespace_for(kind: EntityKind, relation: RelationDef) -> str:
        return relation.name if kind is EntityKind.ATTRIBUTE else ""

    def add(self, kind: EntityKind, namespace: str, name: str) -> int:
        key = (kind, namespace, name)
        idx = self._index.get(key)
        if idx is None:
            if self._frozen:
                raise DataError(f"vocabulary is frozen; cannot add {kind.value} {name!r}")
            idx = len(self._keys)
            self._keys.append(key)
            self._index[key] = idx
        return idx

    def lookup(self, kind: EntityKind, namespace: str, name: str) -> int | None:
        return self._index.get((kind, namespace, name))

    def freeze(self) -> "Vocabulary":
        self._frozen = True
        return self

    def __len__(self) -> int:
        return len(self._keys)

    def kind(self, idx: int) -> EntityKind:
        return self._keys[idx][0]

    def namespace(self, idx: int) -> str:
        return self._keys[idx][1]

    def name(self, idx: int) -> str:
        return self._keys[idx][2]

    def keys(self) -> list[tuple[EntityKind, str, str]]:
        return list(self._keys)

    @cached_property
    def _kind_codes(self) -> np.ndarray:
        order = list(EntityKind)
        return np.array([order.index(k) for k, _, _ in self._keys], dtype=np.int8)

    def indices(self, kind: EntityKind, namespace: str | None = None) -> np.ndarray:
        """Entity indices of one kind (optionally one namespace), ascending."""
        if namespace is None and self._frozen:
            code = list(EntityKind).index(kind)
            return np.flatnonzero(self._kind_codes == code)
        return np.array([i for i, (k, ns, _) in enumerate(self._keys)
                         if k is kind and (namespace is None or ns == namespace)], dtype=np.int64)

    def subset(self, keep: np.ndarray) -> tuple["Vocabulary", np.ndarray]:
        """New vocabulary with the kept indices (order preserved) and an old->new map (-1 = dropped)."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.full(len(self._keys), -1, dtype=np.int64)
        out = Vocabulary()
        for i in np.flatnonzero(keep):
            remap[i] = out.add(*self._keys[i])
        return out.freeze(), remap

    def to_text(self) -> str:
        return "".join(f"{i}\t{k.value}\t{ns}\t{n}\n" for i, (k, ns, n) in enumerate(self._keys))

    @classmethod
    def from_text(cls, source) -> "Vocabulary":
        lines, name, closer = _open_lines(source)
        vocab = cls()
        try:
            for lineno, raw in enumerate(lines, 1):
                line = raw.rstrip("\r\n")
                if not line or line.startswith("#"):
                    continue
                fields = line.split("\t")
                if len(fields) != 4:
                    raise ParseError("expected index, kind, namespace, name", lineno, name)
                idx = vocab.add(EntityKind.parse(fields[1]), fields[2], fields[3])
                if idx != int(fields[0]):
                    raise ParseError(f"non-contiguous entity index {fields[0]}", lineno, name)
        finally:
            if closer is not None:
                closer.close()
        return vocab.freeze()


@dataclass(frozen=True)
class Triplet:
    head: int
    tail: int
    relation: int
    timestamp: int | None = None


def parse_triplet_file(source, catalog: RelationCatalog, vocab: Vocabulary,
                       *, extend: bool = True) -> list[Triplet]:
    """Parse triplet lines, resolving names through ``vocab``.

    Undirected triplets are stored with ``head <= tail`` and deduplicated;
    repeated directed triplets collapse to one, and a repeated user-item
    interaction keeps its latest timestamp.  With ``extend=False`` an unseen
    entity name is an error instead of a new vocabulary entry.
    """
    lines, name, closer = _open_lines(source)
    out: list[Triplet] = []
    seen: dict[tuple[int, int, int], int] = {}
    try:
        for lineno, raw in enumerate(lines, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise ParseError(f"expected 3 or 4 tab-separated fields, got {len(fields)}", lineno, name)
            h_name, t_name, r_name = fields[0], fields[1], fields[2]
            if r_name not in catalog:
                raise CatalogError(f"{name or '<input>'}:{lineno}: unknown relation {r_name!r}")
            rel = catalog.by_name(r_name)
            ts = None
            if len(fields) == 4 and fields[3].strip():
                try:
                    ts = int(fields[3])
                except ValueError:
                    raise ParseError(f"timestamp {fields[3]!r} is not an integer", lineno, name) from None
            if not rel.is_interaction:
                ts = None
            if not rel.directed and h_name == t_name:
                raise ParseError(f"undirected self-loop on {h_name!r} ({r_name})", lineno, name)
            ids = []
            for ent, kind in ((h_name, rel.head_kind), (t_name, rel.tail_kind)):
                if not ent:
                    raise ParseError("empty entity name", lineno, name)
                ns = Vocabulary.namespace_for(kind, rel)
                if extend:
                    ids.append(vocab.add(kind, ns, ent))
                else:
                    idx = vocab.lookup(kind, ns, ent)
                    if idx is None:
                        raise ParseError(f"unknown {kind.value} {ent!r}", lineno, name)
                    ids.append(idx)
            h, t = ids
            if not rel.directed and h > t:
                h, t = t, h
            key = (rel.id, h, t)
            prev = seen.get(key)
            if prev is None:
                seen[key] = len(out)
                out.append(Triplet(h, t, rel.id, ts))
            elif rel.is_interaction and ts is not None:
                old = out[prev].timestamp
                if old is None or ts > old:
                    out[prev] = Triplet(h, t, rel.id, ts)
    finally:
        if closer is not None:
            closer.close()
    return out


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class UnifiedGraph:
    """Immutable unified graph: per-relation head/tail index arrays.

    ``timestamps`` is populated for the interaction relation only.
    """

    catalog: RelationCatalog
    vocab: Vocabulary
    heads: tuple
    tails: tuple
    timestamps: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, catalog, vocab, heads, tails, timestamps) -> "UnifiedGraph":
        heads = tuple(_readonly(np.asarray(h, dtype=np.int64)) for h in heads)
        tails = tuple(_readonly(np.asarray(t, dtype=np.int64)) for t in tails)
        n = len(vocab)
        for rel, h, t in zip(catalog, heads, tails):
            if h.shape != t.shape:
                raise DataError(f"relation {rel.name}: head/tail length mismatch")
            if h.size and (min(h.min(), t.min()) < 0 or max(h.max(), t.max()) >= n):
                raise DataError(f"relation {rel.name}: entity index out of vocabulary")
        ts = _readonly(np.asarray(timestamps, dtype=np.int64))
        if ts.shape != heads[catalog.interaction.id].shape:
            raise DataError("timestamps must align with interaction triplets")
        vocab.freeze()
        return cls(catalog, vocab, heads, tails, ts)

    @classmethod
    def from_triplets(cls, catalog: RelationCatalog, vocab: Vocabulary,
                      triplets: Iterable[Triplet]) -> "UnifiedGraph":
        """Group triplets per relation; missing interaction timestamps become file ordinals."""
        heads = [[] for _ in catalog]
        tails = [[] for _ in catalog]
        ts = []
        inter = catalog.interaction.id
        for trip in triplets:
            rel = catalog[trip.relation]
            if vocab.kind(trip.head) is not rel.head_kind or vocab.kind(trip.tail) is not rel.tail_kind:
                raise DataError(f"triplet {trip} does not match kinds of relation {rel.name!r}")
            h, t = trip.head, trip.tail
            if not rel.directed:
                if h == t:
                    raise DataError(f"undirected self-loop on entity {h}")
                h, t = min(h, t), max(h, t)
            heads[rel.id].append(h)
            tails[rel.id].append(t)
            if rel.id == inter:
                ts.append(len(ts) if trip.timestamp is None else trip.timestamp)
        return cls.from_arrays(catalog, vocab, heads, tails, ts)

    # -- basic accessors -------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.vocab)

    @property
    def interaction_id(self) -> int:
        return self.catalog.interaction.id

    def count(self, rid: int) -> int:
        return int(self.heads[rid].size)

    def triplets(self, rid: int | None = None) -> Iterator[Triplet]:
        rids = range(len(self.catalog)) if rid is None else [rid]
        inter = self.interaction_id
        for r in rids:
            ts = self.timestamps if r == inter else None
            for j, (h, t) in enumerate(zip(self.heads[r].tolist(), self.tails[r].tolist())):
                yield Triplet(h, t, r, None if ts is None else int(ts[j]))

    @cached_property
    def users(self) -> np.ndarray:
        return self.vocab.indices(EntityKind.USER)

    @cached_property
    def items(self) -> np.ndarray:
        return self.vocab.indices(EntityKind.ITEM)

    def tail_pool(self, rid: int) -> np.ndarray:
        """Entities that may replace the tail of a relation's triplets."""
        return self._pools[rid]

    @cached_property
    def _pools(self) -> dict:
        out = {}
        for rel in self.catalog:
            out[rel.id] = self.vocab.indices(rel.tail_kind, Vocabulary.namespace_for(rel.tail_kind, rel))
        return out

    @cached_property
    def user_histories(self) -> dict[int, np.ndarray]:
        """user -> interacted items sorted by (timestamp, item index)."""
        inter = self.interaction_id
        u, i, ts = self.heads[inter], self.tails[inter], self.timestamps
        order = np.lexsort((i, ts, u))
        u_s, i_s = u[order], i[order]
        out: dict[int, np.ndarray] = {}
        if u_s.size:
            cuts = np.flatnonzero(np.diff(u_s)) + 1
            for seg_u, seg_i in zip(np.split(u_s, cuts), np.split(i_s, cuts)):
                out[int(seg_u[0])] = _readonly(seg_i)
        return out

    @cached_property
    def _keysets(self) -> tuple:
        n = np.int64(self.n_entities)
        return tuple(np.unique(h * n + t) for h, t in zip(self.heads, self.tails))

    def positive_keys(self, rid: int) -> np.ndarray:
        """Sorted ``head * n_entities + tail`` keys (canonical order for undirected)."""
        return self._keysets[rid]

    def contains(self, head: int, tail: int, rid: int) -> bool:
        if not self.catalog[rid].directed and head > tail:
            head, tail = tail, head
        keys = self._keysets[rid]
        key = np.int64(head) * self.n_entities + tail
        pos = np.searchsorted(keys, key)
        return bool(pos < keys.size and keys[pos] == key)

    def replace(self, heads=None, tails=None, timestamps=None) -> "UnifiedGraph":
        """Copy with some per-relation arrays swapped (same vocabulary)."""
        return UnifiedGraph.from_arrays(
            self.catalog, self.vocab,
            self.heads if heads is None else heads,
            self.tails if tails is None else tails,
            self.timestamps if timestamps is None else timestamps,
        )

    def canonical_name_sets(self) -> dict[str, set]:
        """Relation name -> set of name-level triplets; used to compare graphs across vocabularies."""
        out = {}
        v = self.vocab
        for rel in self.catalog:
            s = set()
            for h, t in zip(self.heads[rel.id].tolist(), self.tails[rel.id].tolist()):
                pair = (v.name(h), v.name(t))
                s.add(pair if rel.directed else tuple(sorted(pair)))
            out[rel.name] = s
        return out


def load_graph(path, catalog: RelationCatalog) -> UnifiedGraph:
    vocab = Vocabulary()
    trips = parse_triplet_file(path, catalog, vocab)
    return UnifiedGraph.from_triplets(catalog, vocab, trips)


def write_triplet_file(graph: UnifiedGraph, dest) -> None:
    """Serialize every triplet, relation by relation, in stored order."""
    v = graph.vocab
    inter = graph.interaction_id

    def emit(fh):
        for rel in graph.catalog:
            hs, ts_ = graph.heads[rel.id].tolist(), graph.tails[rel.id].tolist()
            stamps = graph.timestamps.tolist() if rel.id == inter else None
            for j, (h, t) in enumerate(zip(hs, ts_)):
                line = f"{v.name(h)}\t{v.name(t)}\t{rel.name}"
                if stamps is not None:
                    line += f"\t{stamps[j]}"
                fh.write(line + "\n")

    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            emit(fh)
    else:
        emit(dest)


def filter_min_interactions(graph: UnifiedGraph, threshold: int) -> UnifiedGraph:
    """Iteratively drop users/items with fewer than ``threshold`` interactions.

    Repeats until no user or item falls below the threshold, then removes
    side triplets that touch a dropped user/item, drops attribute entities
    left without triplets, and recompacts the vocabulary.
    """
    if threshold < 1:
        raise FilterError(f"threshold must be >= 1, got {threshold}")
    n = graph.n_entities
    inter = graph.interaction_id
    u, i = graph.heads[inter], graph.tails[inter]
    is_ui = np.zeros(n, dtype=bool)
    is_ui[graph.users] = True
    is_ui[graph.items] = True
    alive = np.ones(n, dtype=bool)
    while True:
        edge = alive[u] & alive[i]
        deg = np.bincount(u[edge], minlength=n) + np.bincount(i[edge], minlength=n)
        dead = alive & is_ui & (deg < threshold)
        if not dead.any():
            break
        alive &= ~dead

    keep_edges = []
    for rel in graph.catalog:
        h, t = graph.heads[rel.id], graph.tails[rel.id]
        ok = (alive[h] | ~is_ui[h]) & (alive[t] | ~is_ui[t])
        keep_edges.append(ok)
    referenced = np.zeros(n, dtype=bool)
    for rel, ok in zip(graph.catalog, keep_edges):
        referenced[graph.heads[rel.id][ok]] = True
        referenced[graph.tails[rel.id][ok]] = True
    keep = referenced & (alive | ~is_ui)
    if not keep_edges[inter].any():
        raise FilterError(f"no interactions survive threshold {threshold}; filtering is too aggressive")
    vocab, remap = graph.vocab.subset(keep)
    heads = [remap[graph.heads[r][ok]] for r, ok in enumerate(keep_edges)]
    tails = [remap[graph.tails[r][ok]] for r, ok in enumerate(keep_edges)]
    ts = graph.timestamps[keep_edges[inter]]
    return UnifiedGraph.from_arrays(graph.catalog, vocab, heads, tails, ts)


@dataclass(frozen=True, eq=False)
class DataSplit:
    train: UnifiedGraph
    validation: dict
    test: dict

    @property
    def users(self) -> list[int]:
        return sorted(self.test)


def leave_one_out_split(graph: UnifiedGraph) -> DataSplit:
    """Latest interaction per user -> test, second latest -> validation, rest -> train.

    Ties on timestamp are ordered by item index, so among equal latest
    timestamps the larger item index is held out for test.
    """
    inter = graph.interaction_id
    histories = graph.user_histories
    validation, test = {}, {}
    for user in sorted(histories):
        hist = histories[user]
        if hist.size < 3:
            raise SplitError(f"user {graph.vocab.name(user)!r} has {hist.size} interactions; need at least 3")
        test[user] = int(hist[-1])
        validation[user] = int(hist[-2])
    u, i = graph.heads[inter], graph.tails[inter]
    n = np.int64(graph.n_entities)
    held = np.array([k * n + test[k] for k in test] + [k * n + validation[k] for k in validation],
                    dtype=np.int64)
    mask = ~np.isin(u * n + i, held)
    heads = list(graph.heads)
    tails = list(graph.tails)
    heads[inter], tails[inter] = u[mask], i[mask]
    train = graph.replace(heads=heads, tails=tails, timestamps=graph.timestamps[mask])
    return DataSplit(train, validation, test)


def graph_statistics(graph: UnifiedGraph) -> dict:
    """Entity counts, per-relation triplet counts and interaction sparsity."""
    inter = graph.interaction_id
    n_users = int(graph.users.size)
    n_items = int(graph.items.size)
    n_inter = graph.count(inter)
    stats = {
        "users": n_users,
        "items": n_items,
        "interactions": n_inter,
        "sparsity": 1.0 - n_inter / (n_users * n_items) if n_users and n_items else 1.0,
    }
    total = 0
    for rel in graph.catalog:
        if rel.id == inter:
            continue
        stats[f"r_{rel.name}"] = graph.count(rel.id)
        total += graph.count(rel.id)
    stats["r_total"] = total
    return stats


def _write_heldout(path, graph: UnifiedGraph, held: dict) -> None:
    v = graph.vocab
    name = graph.catalog.interaction.name
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for user in sorted(held):
            fh.write(f"{v.name(user)}\t{v.name(held[user])}\t{name}\n")


def save_split(split: DataSplit, directory) -> None:
    """Write catalog, vocabulary, train/valid/test triplet files into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    g = split.train
    (d / "catalog.tsv").write_text(g.catalog.to_text(), encoding="utf-8")
    (d / "entities.tsv").write_text(g.vocab.to_text(), encoding="utf-8")
    write_triplet_file(g, d / "train.tsv")
    _write_heldout(d / "valid.tsv", g, split.validation)
    _write_heldout(d / "test.tsv", g, split.test)


def load_split(directory) -> DataSplit:
    d = Path(directory)
    for fname in ("catalog.tsv", "entities.tsv", "train.tsv", "valid.tsv", "test.tsv"):
        if not (d / fname).exists():
            raise DataError(f"prepared split is missing {d / fname}")
    catalog = parse_catalog(d / "catalog.tsv")
    vocab = Vocabulary.from_text(d / "entities.tsv")
    train = UnifiedGraph.from_triplets(catalog, vocab,
                                       parse_triplet_file(d / "train.tsv", catalog, vocab, extend=False))
    inter = catalog.interaction.id
    held = []
    for fname in ("valid.tsv", "test.tsv"):
        m = {}
        for trip in parse_triplet_file(d / fname, catalog, vocab, extend=False):
            if trip.relation != inter:
                raise DataError(f"{d / fname}: only interaction triplets are allowed")
            m[trip.head] = trip.tail
        held.append(m)
    return DataSplit(train, held[0], held[1])
