"""Random smooth pair-loss configurations and their finite-difference error."""

import numpy as np

from conftest import random_params
from ugrec.gradients import finite_difference_check, pair_grad, pair_kinks
from ugrec.graph import Triplet
from ugrec.model import ModelConfig, UndirectedScorer, triplet_distance

SCORER = {"hyperplane": UndirectedScorer.HYPERPLANE, "distmult": UndirectedScorer.DISTMULT,
          "transe": UndirectedScorer.DIRECTED_PAIR}
# a configuration counts as smooth when every ReLU input and the hinge argument
# sit at least this far from zero; central differences at eps=1e-6 never cross
KINK_CLEARANCE = 1e-3


def smooth_case(seed, kind="directed", k=8, scale_attention=False, use_attention=True, n_entities=6):
    """Draw parameters and a pos/neg pair with an active hinge away from every kink."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(k=k, undirected_scorer=SCORER.get(kind, UndirectedScorer.HYPERPLANE),
                      scale_attention=scale_attention, use_attention=use_attention)
    for _ in range(1000):
        params = random_params(n_entities, k, rng, config=cfg, scale=0.6)
        h, t, tn = (int(x) for x in rng.choice(n_entities, size=3, replace=False))
        r = 0 if kind == "directed" else 2
        margin = float(rng.uniform(0.5, 2.0))
        if pair_kinks(params, kind, h, t, tn, r, margin, use_attention) < KINK_CLEARANCE:
            continue
        loss, _ = pair_grad(Triplet(h, t, r), Triplet(h, tn, r), params, margin, kind, use_attention)
        if loss > 0:
            return params, Triplet(h, t, r), Triplet(h, tn, r), margin
        # flip the pair so the hinge becomes active
        t, tn = tn, t
        loss, _ = pair_grad(Triplet(h, t, r), Triplet(h, tn, r), params, margin, kind, use_attention)
        if loss > 0 and pair_kinks(params, kind, h, t, tn, r, margin, use_attention) >= KINK_CLEARANCE:
            return params, Triplet(h, t, r), Triplet(h, tn, r), margin
    raise RuntimeError("could not draw a smooth active configuration")


def all_coordinates(params, grads, rng, n_untouched=10, max_touched=None):
    """Scalar coordinates the gradient touches plus a few random untouched ones.

    ``max_touched`` caps the touched coordinates with a uniform sample.
    """
    slots = []
    for fam, rows in grads.rows.items():
        arr = params.family(fam)
        for row in rows.tolist():
            for col in np.ndindex(arr.shape[1:]):
                slots.append((fam, (row,) + col))
    if max_touched is not None and len(slots) > max_touched:
        pick = rng.choice(len(slots), size=max_touched, replace=False)
        slots = [slots[i] for i in sorted(pick)]
    for _ in range(n_untouched):
        fam = params.families[int(rng.integers(len(params.families)))]
        arr = params.family(fam)
        slots.append((fam, tuple(int(rng.integers(s)) for s in arr.shape)))
    return slots


def case_error(seed, kind="directed", k=8, scale_attention=False, use_attention=True, eps=1e-6, max_touched=None):
    params, pos, neg, m = smooth_case(seed, kind, k, scale_attention, use_attention)
    _, grads = pair_grad(pos, neg, params, m, kind, use_attention)

    def score(p):
        # forward distances only, independent of the backward code
        fp = triplet_distance(pos.head, pos.tail, pos.relation, p, use_attention)
        fn = triplet_distance(neg.head, neg.tail, neg.relation, p, use_attention)
        return max(0.0, m + float(fp) - float(fn))

    slots = all_coordinates(params, grads, np.random.default_rng(seed + 1), max_touched=max_touched)
    return finite_difference_check(score, params, slots, eps, analytic=grads.value_at)
