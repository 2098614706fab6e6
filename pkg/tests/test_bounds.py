import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dalab.bounds import (
    INTERIOR_PATH, BoundReport, bound_report, certify_instance, interior_minimum_instance, lambda_terms,
    layer_bound_sweep, monotonicity_check, summary_csv,
)
from dalab.divergence import BudgetExceeded
from dalab.finite import (
    FiniteFunction, FiniteInstance, LabeledSample, LayeredFiniteClass, SplitClasses, corrupt_nesting,
    random_instance,
)

THRESHOLDS = [FiniteFunction([int(x >= t) for x in range(3)], 2) for t in range(4)]


def _threshold_samples():
    S = LabeledSample((0, 1), (0, 1))
    T = LabeledSample((1, 2), (1, 1))
    return S, T


instances = st.integers(0, 2**32 - 1).map(lambda s: random_instance(np.random.default_rng(s), instance_id=str(s)))


def test_lambda_h_threshold_instance():
    assert lambda_terms("lambda_h", THRESHOLDS, _threshold_samples()) == 0.0


def test_lambda_realizable_case():
    # f' o g is perfect on S and f' o g' is perfect on both domains
    g = FiniteFunction([0, 1, 0], 2)
    g2 = FiniteFunction([0, 1, 1], 2)
    f = FiniteFunction([0, 1], 2)
    S = LabeledSample((0, 1), (0, 1))
    T = LabeledSample((2,), (1,))
    c = SplitClasses([g, g2], [f])
    assert lambda_terms("lambda_fg_of_g", c, (S, T), g=g) == 0.0


def test_lambda_singleton_is_direct_sum():
    g = FiniteFunction([0, 1, 1], 2)
    f = FiniteFunction([1, 0], 2)
    S = LabeledSample((0, 1, 2), (1, 1, 1))
    T = LabeledSample((0, 2), (0, 0))
    c = SplitClasses([g], [f])
    rs, rt = 2 / 3, 1 / 2  # f o g = (1, 0, 0)
    assert lambda_terms("lambda_fg_of_g", c, (S, T), g=g) == pytest.approx(3 * rs + rt, abs=1e-15)
    assert lambda_terms("lambda_f_of_g", c, (S, T), g=g) == pytest.approx(rs + rt, abs=1e-15)


def test_lambda_argument_checks():
    c = SplitClasses([FiniteFunction([0, 1], 2)], [FiniteFunction([0, 1], 2)])
    S = LabeledSample((0,), (0,))
    with pytest.raises(ValueError):
        lambda_terms("lambda_f_of_g", c, (S, S))
    with pytest.raises(ValueError):
        lambda_terms("lambda_h", c, (S, S), g=c.G[0])
    with pytest.raises(ValueError):
        lambda_terms("lambda_q", c, (S, S))
    with pytest.raises(BudgetExceeded):
        lambda_terms("lambda_h", c, (S, S), budget=0)


def test_zero_target_risk_never_violates():
    inst = random_instance(np.random.default_rng(2))
    for r in certify_instance(inst):
        if r.r_t == 0.0:
            assert not r.violated


def test_report_json_roundtrip():
    inst = random_instance(np.random.default_rng(3), instance_id="x")
    r = bound_report(inst, 0, 0, 1)
    d = json.loads(r.to_json())
    assert d["instance_id"] == "x"
    assert BoundReport(**d) == r
    assert r.tighter in ("joint", "embedding", "equal")


def test_report_accepts_functions():
    inst = random_instance(np.random.default_rng(4))
    c = inst.classes.at(1)
    assert bound_report(inst, c.F[-1], c.G[-1], 1) == bound_report(inst, len(c.F) - 1, len(c.G) - 1, 1)


@settings(max_examples=40, deadline=None)
@given(instances)
def test_all_bounds_hold(inst):
    for r in certify_instance(inst):
        assert r.r_t <= r.embedding_bound + 1e-12
        assert r.r_t <= r.joint_bound + 1e-12
        assert r.r_t <= r.latent_bound + 1e-12
        assert not r.violated


@settings(max_examples=40, deadline=None)
@given(instances)
def test_joint_lambda_below_fixed_encoder_lambda(inst):
    S, T = inst.source, inst.target
    for i in range(1, inst.classes.depth):
        c = inst.classes.at(i)
        joint = lambda_terms("lambda_fg_joint", c, (S, T))
        for g in c.G:
            assert joint <= lambda_terms("lambda_f_of_g", c, (S, T), g=g)


@settings(max_examples=40, deadline=None)
@given(instances, st.data())
def test_layer_sweep_minimum(inst, data):
    path = tuple(data.draw(st.integers(0, len(l) - 1)) for l in inst.classes.layers)
    sw = layer_bound_sweep(inst, path)
    assert len(sw.values) == inst.classes.depth - 1
    assert sw.minimum == min(sw.values)
    assert all(sw.minimum <= v for v in sw.values)
    assert sw.minimum >= sw.r_t - 1e-12


def test_layer_sweep_single_split_equals_report():
    layers = [[FiniteFunction([0, 1, 1, 0], 2), FiniteFunction([1, 1, 0, 0], 2)],
              [FiniteFunction([0, 1], 2), FiniteFunction([1, 0], 2)]]
    inst = FiniteInstance(LayeredFiniteClass(layers, [4, 2, 2]),
                          LabeledSample((0, 1, 2), (0, 1, 1)), LabeledSample((3, 3, 2), (0, 1, 0)))
    sw = layer_bound_sweep(inst, (1, 0))
    assert sw.values == [bound_report(inst, 0, 1, 1).embedding_bound]


def test_interior_minimum_instance():
    sw = layer_bound_sweep(interior_minimum_instance(), INTERIOR_PATH)
    assert sw.argmin == 2
    assert sw.values[1] < sw.values[0] and sw.values[1] < sw.values[2]


@settings(max_examples=40, deadline=None)
@given(instances)
def test_monotonicity_holds(inst):
    m = monotonicity_check(inst)
    assert m.violations == 0
    assert m.path_violations == 0


def test_monotonicity_fault_injection_detected():
    rng = np.random.default_rng(3)
    found = 0
    for _ in range(60):
        inst = random_instance(rng)
        if inst.classes.depth < 3:
            continue
        m = monotonicity_check(inst, corrupt_nesting(inst.classes))
        if m.violations:
            found += 1
            w = m.witnesses[0]
            assert w["i"] < w["j"]
            assert w["kind"] == "embedding"
            assert w["value_i"] > w["value_j"]
    assert found > 0


def test_summary_csv_header():
    inst = random_instance(np.random.default_rng(0), instance_id="a")
    text = summary_csv(certify_instance(inst))
    assert text.splitlines()[0].startswith("instance_id,split,f_index,g_index,r_t,")
