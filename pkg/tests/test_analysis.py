import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfsim.analysis import (
    analytic_distribution,
    bw_clarification,
    compare_semantics,
    healey_decomposition,
    joint_memory_distribution,
    mc_sample,
    order_invariance,
    record_vs_remeasurement,
    sigma_band,
    total_variation,
)
from wfsim.qcore import LayoutError
from wfsim.registers import SpaceLayout, basis_state, layout
from wfsim.scenario import Scenario, Step, run
from wfsim.semantics import Measurement, ZeroProbabilityError, born_distribution

from conftest import pointer_outer, qudit, rand_measurement, rand_state, two_observer

seeds = st.integers(0, 2**32 - 1)
FR_JOINT = {("ok", "ok"): 1 / 12, ("ok", "fail"): 1 / 12, ("fail", "ok"): 1 / 12, ("fail", "fail"): 3 / 4}


def test_bw_clarification_values():
    rep = bw_clarification()
    row = rep.rows[0]
    assert abs(row.p) <= 1e-12
    assert abs(row.q - 1 / 6) <= 1e-12
    assert not row.agree
    assert abs(rep.extras["q_joint_ok_t"] - 1 / 12) <= 1e-12
    assert abs(rep.extras["q_joint_fail_t"] - 5 / 12) <= 1e-12
    assert abs(rep.extras["q_joint_sum_t"] - 1 / 2) <= 1e-12
    # the encapsulated Fbar memory gives the same number as the re-measurement
    assert abs(rep.extras["q_cond_on_Fbar_memory"] - 1 / 6) <= 1e-12


def test_record_vs_remeasurement_is_reported():
    joint = record_vs_remeasurement()
    assert abs(sum(joint.values()) - 1) <= 1e-12
    assert all(joint[(a, "other")] <= 1e-12 for a in ("h", "t"))


def test_compare_fr_encapsulated(fr):
    rep = compare_semantics(fr, ("Fbar", "t"))
    ok = rep.row("W=ok")
    assert abs(ok.p) <= 1e-12 and abs(ok.q - 1 / 6) <= 1e-12
    assert abs(abs(ok.q - ok.p) - 1 / 6) <= 1e-12
    assert not ok.agree and rep.pointer_product is False
    assert "product-pointer=no" in ok.note


def test_compare_zero_probability():
    lay = SpaceLayout((qudit("Q", 2),))
    q = lay.registers[0]
    sc = Scenario(
        lay,
        basis_state(lay, {"Q": "x0"}),
        (Step("n:00", Measurement.computational("A", q)), Step("n:10", Measurement.computational("B", q))),
    )
    with pytest.raises(ZeroProbabilityError):
        compare_semantics(sc, ("A", "x1"))


@settings(max_examples=100)
@given(seeds, st.integers(1, 4))
def test_compare_agrees_without_encapsulation(seed, d):
    rng = np.random.default_rng(seed)
    sc, m1, _ = two_observer(rng, d)
    a = max(m1.labels, key=lambda lbl: born_distribution(sc.initial, m1)[lbl])
    rep = compare_semantics(sc, ("A", a))
    assert rep.all_agree
    assert all(r.note == "non-encapsulated" for r in rep.rows)


def _pointer_scenario(rng, d, mix):
    lay = SpaceLayout((qudit("S", d),))
    m1 = rand_measurement(rng, "A", lay)
    outer = pointer_outer(rng, m1, mix=mix)
    return Scenario(lay, rand_state(rng, lay), (Step("n:00", m1), Step("n:10", outer))), m1


@given(seeds, st.integers(1, 3))
def test_pointer_basis_rows_agree(seed, d):
    rng = np.random.default_rng(seed)
    sc, m1 = _pointer_scenario(rng, d, mix=False)
    for a in m1.labels:
        try:
            rep = compare_semantics(sc, ("A", a))
        except ZeroProbabilityError:
            continue
        assert rep.pointer_product is True
        assert all(abs(r.p - r.q) <= 1e-10 for r in rep.rows)


def test_rotated_basis_breaks_agreement():
    rng = np.random.default_rng(4)
    sc, m1 = _pointer_scenario(rng, 2, mix=True)
    rep = compare_semantics(sc, ("A", m1.labels[0]))
    assert rep.pointer_product is False
    assert not rep.all_agree


def test_healey_round_trip(fr):
    phi = run(fr, halt_at="n:21").final
    h = healey_decomposition(phi)
    assert h.max_coefficient_error <= 1e-12
    assert h.recontraction_error <= 1e-12
    assert abs(h.norm - 1) <= 1e-12
    want = (1 / math.sqrt(2)) * math.sqrt(5 / 6) * (3 / math.sqrt(10))
    assert abs(h.coefficients[("h", "fail", "fail")] - want) <= 1e-15
    assert abs(h.extracted[("h", "fail", "fail")] - want) <= 1e-12


def test_healey_wrong_state(fr):
    with pytest.raises(LayoutError):
        healey_decomposition(run(fr).final)


def test_order_invariance_fr(fr):
    assert order_invariance(fr, "Wbar", "W") <= 1e-12
    joint = joint_memory_distribution(run(fr))
    for (wb, w), p in FR_JOINT.items():
        marg = sum(v for k, v in joint.items() if dict(k)["Wbar"] == wb and dict(k)["W"] == w)
        assert abs(marg - p) <= 1e-12


def test_order_invariance_single_step():
    rng = np.random.default_rng(0)
    lay = SpaceLayout((qudit("Q", 2),))
    sc = Scenario(lay, rand_state(rng, lay), (Step("n:00", rand_measurement(rng, "A", lay)),))
    assert order_invariance(sc, "A", "A") == 0


def test_order_invariance_overlap_rejected(fr):
    with pytest.raises(LayoutError):
        order_invariance(fr, "Fbar", "Wbar")


@settings(max_examples=50)
@given(seeds, st.integers(1, 3), st.integers(1, 2), st.integers(1, 2))
def test_order_invariance_random_commuting(seed, da, db, dc):
    rng = np.random.default_rng(seed)
    a, b, c = qudit("A", da), qudit("B", db), qudit("C", dc)
    lay = layout(a, b, c)
    m1 = rand_measurement(rng, "X", SpaceLayout((a,)))
    m2 = rand_measurement(rng, "Y", layout(b, c))
    sc = Scenario(lay, rand_state(rng, lay), (Step("n:00", m1), Step("n:10", m2)))
    assert order_invariance(sc, "X", "Y") <= 1e-12


def test_mc_analytic_matches_fr(fr):
    exact = analytic_distribution(fr)
    assert set(exact) == set(FR_JOINT)
    for k, p in FR_JOINT.items():
        assert abs(exact[k] - p) <= 1e-12


def test_mc_collapse_everything_loses_interference(fr):
    exact = analytic_distribution(fr, collapse_encapsulated=True)
    ok_ok = sum(p for k, p in exact.items() if k[-2:] == ("ok", "ok"))
    assert abs(ok_ok - 1 / 4) <= 1e-12


def test_mc_single_sample(fr):
    emp = mc_sample(fr, 1, seed=3)
    assert emp.n == 1 and sum(emp.counts.values()) == 1


def test_mc_deterministic_and_schedule_free(fr):
    a = mc_sample(fr, 2000, seed=11)
    b = mc_sample(fr, 2000, seed=11)
    c = mc_sample(fr, 2000, seed=11, workers=2)
    assert a.counts == b.counts == c.counts
    assert repr(sorted(a.counts.items())) == repr(sorted(c.counts.items()))


def test_mc_rejects_empty(fr):
    with pytest.raises(ValueError):
        mc_sample(fr, 0, seed=0)


@pytest.mark.parametrize("n", [1000, pytest.param(100_000, marks=pytest.mark.slow)])
@pytest.mark.parametrize("seed", [1, 2])
def test_mc_total_variation(fr, n, seed):
    emp = mc_sample(fr, n, seed)
    k = len(FR_JOINT)
    assert total_variation(emp, analytic_distribution(fr)) <= 5 * math.sqrt(k / n)


@given(seeds, st.integers(1, 3))
@settings(max_examples=20)
def test_mc_total_variation_random(seed, d):
    rng = np.random.default_rng(seed)
    sc, _, _ = two_observer(rng, d)
    n = 1000
    emp = mc_sample(sc, n, seed % 1000)
    exact = analytic_distribution(sc)
    assert abs(sum(exact.values()) - 1) <= 1e-10
    assert total_variation(emp, exact) <= 5 * math.sqrt(len(exact) / n)


def test_sigma_band():
    assert sigma_band(0.25, 100) == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
