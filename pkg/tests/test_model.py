import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_params
from ugrec.errors import CheckpointError, ContractError, DegenerateNormalError
from ugrec.model import (
    ModelConfig,
    UndirectedScorer,
    attention_vector,
    directed_distance,
    distmult_score,
    hyperplane_project,
    init_params,
    load_checkpoint,
    project_unit_ball,
    save_checkpoint,
    transd_project,
    undirected_distance,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vec(k):
    return arrays(np.float64, k, elements=finite)


def tiny_params(k=2, **cfg):
    """Two directed relations (0, 1), one undirected (2), four zeroed entities."""
    p = random_params(4, k, np.random.default_rng(0), config=ModelConfig(k=k, **cfg))
    for name in ("entity_emb", "entity_proj", "rel_emb", "rel_proj", "att_weight", "att_bias"):
        getattr(p, name)[...] = 0.0
    return p


# -- projection -----------------------------------------------------------------

def test_zero_relation_projection_is_identity():
    e = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(transd_project(e, np.array([1.0, 2.0, 3.0]), np.zeros(3)), e)


@pytest.mark.parametrize("e, expected", [((1.0, 0.0), (1.0, 0.0)), ((0.0, 1.0), (1.0, 2.0))])
def test_transd_small_cases(e, expected):
    e_p, r_p = np.array([0.0, 1.0]), np.array([1.0, 1.0])
    M = np.outer(r_p, e_p) + np.eye(2)
    assert np.allclose(M @ np.array(e), expected)
    assert np.allclose(transd_project(np.array(e), e_p, r_p), expected)


def test_transd_dimension_mismatch():
    with pytest.raises(ContractError):
        transd_project(np.zeros(3), np.zeros(2), np.zeros(3))


# -- attention ------------------------------------------------------------------

def test_zero_weights_give_uniform_attention():
    k = 5
    a = attention_vector(np.ones(k), -np.ones(k), np.zeros((k, 2 * k)), np.zeros(k))
    assert np.allclose(a, 1 / k)


def test_attention_bias_ln3():
    a = attention_vector(np.zeros(2), np.zeros(2), np.zeros((2, 4)), np.array([0.0, math.log(3)]))
    assert np.allclose(a, [0.25, 0.75], atol=1e-15)


def test_attention_rejects_wrong_weight_shape():
    with pytest.raises(ContractError):
        attention_vector(np.zeros(2), np.zeros(2), np.zeros((2, 2)), np.zeros(2))


@settings(max_examples=200)
@given(st.integers(1, 6).flatmap(lambda k: st.tuples(vec(k), vec(k), arrays(np.float64, (k, 2 * k), elements=finite),
                                                     vec(k))))
def test_attention_is_a_distribution(args):
    h, t, W, b = args
    a = attention_vector(h, t, W, b)
    assert abs(a.sum() - 1) < 1e-9
    assert np.all(a > 0)


# -- directed distance --------------------------------------------------------------

def test_directed_zero_translation():
    p = tiny_params(k=3)
    p.entity_emb[0] = p.entity_emb[1] = [0.1, 0.2, 0.3]
    p.entity_proj[0] = p.entity_proj[1] = [0.5, -0.5, 0.1]
    p.rel_proj[0] = [0.2, 0.2, 0.2]
    assert directed_distance(0, 1, 0, p, use_attention=True) == 0.0
    assert directed_distance(0, 1, 0, p, use_attention=False) == 0.0


def test_directed_without_attention():
    p = tiny_params()
    p.entity_emb[0] = [1.0, 0.0]
    p.entity_emb[1] = [0.0, 1.0]
    p.rel_emb[0] = [1.0, 1.0]
    assert directed_distance(0, 1, 0, p, use_attention=False) == pytest.approx(4.0, abs=1e-15)


def test_directed_with_uniform_attention():
    p = tiny_params()
    p.entity_emb[1] = [0.5, 0.5]
    p.rel_emb[0] = [1.0, 1.0]
    assert directed_distance(0, 1, 0, p, use_attention=True) == pytest.approx(0.0, abs=1e-15)


def test_directed_distance_zero_when_translation_lands_exactly(rng):
    p = random_params(3, 4, rng)
    p.rel_proj[0] = 0.0
    p.rel_emb[0] = p.entity_emb[1] - p.entity_emb[0]
    assert directed_distance(0, 1, 0, p, use_attention=False) == pytest.approx(0.0, abs=1e-24)


def test_scorers_reject_wrong_relation_kind(rng):
    p = random_params(3, 4, rng)
    with pytest.raises(ContractError):
        directed_distance(0, 1, 2, p)
    with pytest.raises(ContractError):
        undirected_distance(0, 1, 0, p)


def test_broadcasting_matches_single_calls(rng):
    p = random_params(6, 5, rng)
    users = np.array([0, 1])[:, None]
    items = np.array([2, 3, 4, 5])[None, :]
    D = directed_distance(users, items, 0, p)
    for a in range(2):
        for b in range(4):
            assert D[a, b] == pytest.approx(float(directed_distance(int(users[a, 0]), int(items[0, b]), 0, p)),
                                            rel=1e-14)


# -- hyperplane ---------------------------------------------------------------------

def test_hyperplane_fixes_orthogonal_vectors():
    assert np.allclose(hyperplane_project(np.array([0.0, 2.0, -1.0]), np.array([3.0, 0.0, 0.0])), [0.0, 2.0, -1.0])


def test_hyperplane_small_case():
    assert np.allclose(hyperplane_project(np.array([0.6, 0.8]), np.array([1.0, 0.0])), [0.0, 0.8])


def test_hyperplane_annihilates_parallel_vectors():
    assert np.allclose(hyperplane_project(np.array([2.0, -4.0]), np.array([-1.0, 2.0])), 0.0, atol=1e-15)


def test_degenerate_normal_raises():
    with pytest.raises(DegenerateNormalError):
        hyperplane_project(np.ones(3), np.full(3, 1e-8))


@settings(max_examples=300)
@given(st.integers(1, 8).flatmap(lambda k: st.tuples(vec(k), vec(k))), st.floats(0.01, 50), st.booleans())
def test_hyperplane_properties(args, c, flip):
    e, r = args
    if np.linalg.norm(r) < 1e-3:
        r = r + 1.0
    c = -c if flip else c
    out = hyperplane_project(e, r)
    assert abs(out @ r) / np.linalg.norm(r) < 1e-9 * max(1.0, np.linalg.norm(e))
    assert np.allclose(hyperplane_project(out, r), out, atol=1e-12 * max(1.0, np.linalg.norm(e)))
    assert np.allclose(hyperplane_project(e, c * r), out, atol=1e-9 * max(1.0, np.linalg.norm(e)))


def test_undirected_identical_entities_score_zero(rng):
    p = random_params(3, 4, rng)
    p.entity_emb[1] = p.entity_emb[0]
    assert undirected_distance(0, 1, 2, p) == 0.0


def test_undirected_small_case():
    p = tiny_params()
    p.entity_emb[0] = [0.6, 0.8]
    p.entity_emb[1] = [0.6, 0.0]
    p.rel_emb[2] = [1.0, 0.0]
    assert undirected_distance(0, 1, 2, p, use_attention=False) == pytest.approx(0.64, abs=1e-15)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_undirected_swap_is_bit_identical(seed, att):
    p = random_params(5, 6, np.random.default_rng(seed))
    a = undirected_distance(1, 4, 2, p, use_attention=att)
    b = undirected_distance(4, 1, 2, p, use_attention=att)
    assert a.tobytes() == b.tobytes()


# -- distmult -----------------------------------------------------------------------

def test_distmult_cases(rng):
    p = tiny_params()
    p.entity_emb[0] = [1.0, 2.0]
    p.entity_emb[1] = [3.0, 4.0]
    p.rel_emb[2] = [1.0, 1.0]
    assert distmult_score(0, 1, 2, p) == 11.0
    p.rel_emb[2] = 0.0
    assert distmult_score(0, 1, 2, p) == 0.0
    q = random_params(3, 5, rng)
    q.rel_emb[2] = 1.0
    assert distmult_score(0, 1, 2, q) == pytest.approx(q.entity_emb[0] @ q.entity_emb[1])


# -- unit ball and init -------------------------------------------------------------

def test_unit_ball_projection():
    assert np.array_equal(project_unit_ball(np.array([0.3, 0.4])), [0.3, 0.4])
    assert np.allclose(project_unit_ball(np.array([3.0, 4.0])), [0.6, 0.8])
    assert np.array_equal(project_unit_ball(np.zeros(2)), [0.0, 0.0])


def test_init_is_deterministic_and_constrained(synth_graph):
    a = init_params(synth_graph, ModelConfig(k=16), seed=4)
    b = init_params(synth_graph, ModelConfig(k=16), seed=4)
    assert a.identical_to(b)
    assert a.max_constrained_norm() <= 1.0
    assert not a.identical_to(init_params(synth_graph, ModelConfig(k=16), seed=5))


def test_default_dimension_is_64(synth_graph):
    assert ModelConfig().k == 64
    assert init_params(synth_graph).entity_emb.shape == (synth_graph.n_entities, 64)


def test_shared_attention_has_one_weight_matrix(synth_graph):
    p = init_params(synth_graph, ModelConfig(k=4, shared_attention=True))
    assert p.att_weight.shape == (1, 4, 8)


# -- checkpoints --------------------------------------------------------------------

def test_checkpoint_roundtrip(synth_graph, tmp_path):
    p = init_params(synth_graph, ModelConfig(k=8, undirected_scorer=UndirectedScorer.DISTMULT), seed=1)
    save_checkpoint(tmp_path / "m.ckpt", p, {"note": "x"})
    q, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert q.identical_to(p)
    assert q.config == p.config and q.catalog_hash == p.catalog_hash
    assert meta["extra"] == {"note": "x"}
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == b"UGRECKPT"


def test_corrupt_checkpoint_rejected(synth_graph, tmp_path):
    p = init_params(synth_graph, ModelConfig(k=4))
    save_checkpoint(tmp_path / "m.ckpt", p)
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")
