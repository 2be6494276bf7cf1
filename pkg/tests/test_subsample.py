import math
from collections import Counter

import numpy as np
import pytest
from scipy.special import logit

from cjsub.data import stratify
from cjsub.model import ModelSpec, Theta
from cjsub.simulate import default_releases, simulate_dataset
from cjsub.subsample import SubsamplePlan, draw_subsample, stratum_table

TRUTH = Theta(alpha=np.array([logit(0.65)]), p=np.array([0.13]), sigma_eps=0.5)


@pytest.fixture(scope="module")
def data():
    spec = ModelSpec.constant(7)
    return simulate_dataset(spec, TRUTH, default_releases(600, 7), seed=21)


def occasions_multiset(d):
    return Counter(h.occasions for h in d.expand())


class TestPlan:
    def test_validation(self):
        with pytest.raises(ValueError):
            SubsamplePlan(fraction=0.0)
        with pytest.raises(ValueError):
            SubsamplePlan(fraction=1.5)
        with pytest.raises(ValueError):
            SubsamplePlan(M=0)

    def test_index_bounds(self, data):
        plan = SubsamplePlan(M=3, master_seed=1)
        with pytest.raises(ValueError):
            draw_subsample(data, plan, 0)
        with pytest.raises(ValueError):
            draw_subsample(data, plan, 4)


class TestDrawSubsample:
    def test_exact_partition(self, data):
        plan = SubsamplePlan(fraction=0.2, M=2, master_seed=7)
        x1, x2 = draw_subsample(data, plan, 1)
        assert occasions_multiset(x1) + occasions_multiset(x2) == \
            occasions_multiset(data)

    def test_per_stratum_ceiling_counts(self, data):
        plan = SubsamplePlan(fraction=0.2, scheme="first_last", M=1,
                             master_seed=7)
        x1, _ = draw_subsample(data, plan, 1)
        full = stratify(data, "first_last")
        sampled = stratify(x1, "first_last")
        for key, slots in full.items():
            want = math.ceil(plan.fraction * len(slots))
            assert len(sampled.get(key, [])) == want

    def test_deterministic_per_index(self, data):
        plan = SubsamplePlan(fraction=0.2, M=3, master_seed=7)
        a1, a2 = draw_subsample(data, plan, 2)
        b1, b2 = draw_subsample(data, plan, 2)
        assert (a1, a2) == (b1, b2)
        c1, _ = draw_subsample(data, plan, 3)
        assert a1 != c1

    def test_fraction_one_takes_everything(self, data):
        plan = SubsamplePlan(fraction=1.0, master_seed=0)
        x1, x2 = draw_subsample(data, plan, 1)
        assert x1 == data
        assert x2.total_individuals == 0

    def test_uniform_scheme_total(self, data):
        plan = SubsamplePlan(fraction=0.25, scheme="uniform", master_seed=3)
        x1, x2 = draw_subsample(data, plan, 1)
        want = math.ceil(0.25 * data.total_individuals)
        assert x1.total_individuals == want
        assert x2.total_individuals == data.total_individuals - want


class TestStratumTable:
    def test_matches_stratify(self, data):
        plan = SubsamplePlan(fraction=0.2, scheme="first_last")
        rows = stratum_table(data, plan)
        full = stratify(data, "first_last")
        assert len(rows) == len(full)
        assert sum(r["size"] for r in rows) == data.total_individuals
        for r in rows:
            assert r["sampled"] == math.ceil(0.2 * r["size"])
