import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wfsim import qcore
from wfsim.qcore import LayoutError, LinearMap, StateVector
from wfsim.registers import Register, SpaceLayout, basis_state, layout
from wfsim.scenario import R, S
from wfsim.semantics import Measurement, apply_dilation, dilate

from conftest import qudit, rand_state, rand_unitary

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 4)

RS = layout(R, S)
COIN = StateVector(SpaceLayout((R,)), [1 / np.sqrt(3), np.sqrt(2 / 3)])


def test_tensor_basis_product():
    h = basis_state(SpaceLayout((R,)), {"R": "h"})
    down = basis_state(SpaceLayout((S,)), {"S": "-1/2"})
    out = qcore.tensor(h, down)
    assert out.layout.names == ("R", "S")
    assert np.array_equal(out.amps, [1, 0, 0, 0])


def test_tensor_coin_times_down():
    down = basis_state(SpaceLayout((S,)), {"S": "-1/2"})
    out = qcore.tensor(COIN, down)
    np.testing.assert_allclose(out.amps, [1 / np.sqrt(3), 0, np.sqrt(2 / 3), 0], atol=1e-15)


def test_tensor_rejects_duplicate_names():
    with pytest.raises(LayoutError):
        qcore.tensor(COIN, COIN)


@given(seeds, dims, dims)
def test_tensor_norm_is_multiplicative(seed, da, db):
    rng = np.random.default_rng(seed)
    a = StateVector(SpaceLayout((qudit("A", da),)), rng.normal(size=da) + 1j * rng.normal(size=da))
    b = StateVector(SpaceLayout((qudit("B", db),)), rng.normal(size=db))
    assert abs(qcore.tensor(a, b).norm() - a.norm() * b.norm()) <= 1e-12 * a.norm() * b.norm()
    # independent oracle
    np.testing.assert_allclose(qcore.tensor(a, b).amps, np.kron(a.amps, b.amps))


def test_apply_identity():
    s = rand_state(np.random.default_rng(0), RS)
    assert np.array_equal(qcore.apply(qcore.identity(RS), s).amps, s.amps)


def test_apply_fr_dilation_gives_correlated_state():
    coin = Measurement.computational("Fbar", R)
    rec = dilate(coin, SpaceLayout((R,)))
    out = apply_dilation(rec, COIN)
    hh = basis_state(out.layout, {"R": "h", "Fbar": "h"})
    tt = basis_state(out.layout, {"R": "t", "Fbar": "t"})
    assert abs(qcore.inner(hh, out) - 1 / np.sqrt(3)) <= 1e-15
    assert abs(qcore.inner(tt, out) - np.sqrt(2 / 3)) <= 1e-15


@given(seeds, dims)
def test_apply_composition(seed, d):
    rng = np.random.default_rng(seed)
    lay = SpaceLayout((qudit("A", d),))
    a = LinearMap(lay, lay, rng.normal(size=(d, d)))
    b = LinearMap(lay, lay, rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    s = rand_state(rng, lay)
    lhs = qcore.apply(a, qcore.apply(b, s)).amps
    np.testing.assert_allclose(lhs, (a.matrix @ b.matrix) @ s.amps, atol=1e-12)
    np.testing.assert_allclose(lhs, qcore.apply(a @ b, s).amps, atol=1e-12)


def test_apply_dimension_mismatch():
    with pytest.raises(LayoutError):
        qcore.apply(qcore.identity(RS), COIN)


def test_inner_self_and_ok_overlap():
    assert abs(qcore.inner(COIN, COIN) - 1) <= 1e-15
    lab = layout(R, Register("Fbar", ("h", "t")))
    ok = StateVector(lab, np.array([1, 0, 0, -1]) / np.sqrt(2))
    h = basis_state(lab, {"R": "h", "Fbar": "h"})
    assert abs(qcore.inner(ok, h) - 1 / np.sqrt(2)) <= 1e-15


@given(seeds, dims)
def test_inner_conjugate_symmetry(seed, d):
    rng = np.random.default_rng(seed)
    lay = SpaceLayout((qudit("A", d),))
    a, b = rand_state(rng, lay), rand_state(rng, lay)
    assert abs(qcore.inner(a, b) - np.conj(qcore.inner(b, a))) <= 1e-15
    assert abs(qcore.inner(a, b) - np.vdot(a.amps, b.amps)) <= 1e-15


def test_inner_layout_mismatch():
    with pytest.raises(LayoutError):
        qcore.inner(COIN, StateVector(SpaceLayout((S,)), [1, 0]))


def test_projector_fixes_its_vector():
    a = rand_state(np.random.default_rng(3), RS)
    out = qcore.apply(qcore.projector([a]), a)
    np.testing.assert_allclose(out.amps, a.amps, atol=1e-15)


def test_projector_fail_on_down():
    lay = SpaceLayout((S,))
    fail = StateVector(lay, np.array([1, 1]) / np.sqrt(2))
    down = basis_state(lay, {"S": "-1/2"})
    out = qcore.apply(qcore.projector([fail]), down)
    assert abs(out.norm() ** 2 - 0.5) <= 1e-15
    np.testing.assert_allclose(out.amps, fail.amps / np.sqrt(2), atol=1e-15)


@given(seeds, st.integers(2, 6), st.data())
def test_projector_idempotent_selfadjoint(seed, d, data):
    rng = np.random.default_rng(seed)
    k = data.draw(st.integers(1, d))
    lay = SpaceLayout((qudit("A", d),))
    u = rand_unitary(rng, d)
    p = qcore.projector([StateVector(lay, u[:, j]) for j in range(k)])
    assert np.abs(p.matrix @ p.matrix - p.matrix).max() <= 1e-12
    assert np.abs(p.matrix - p.matrix.conj().T).max() <= 1e-12
    assert qcore.is_projector(p)


def test_projector_rejects_non_orthonormal():
    lay = SpaceLayout((S,))
    with pytest.raises(ValueError):
        qcore.projector([basis_state(lay, {"S": "-1/2"}), StateVector(lay, [1, 1])])


def test_embed_identity():
    full = layout(R, S, Register("F", ("a", "b", "c")))
    e = qcore.embed(qcore.identity(SpaceLayout((S,))), ["S"], full)
    assert np.array_equal(e.matrix, np.eye(full.size))


def test_embed_tails_projector_kills_heads_branch():
    coin = Measurement.computational("Fbar", R)
    s = apply_dilation(dilate(coin, SpaceLayout((R,))), COIN)
    pt = qcore.embed(coin.local_projector("t"), ["R"], s.layout)
    out = qcore.apply(pt, s)
    assert abs(qcore.inner(basis_state(s.layout, {"R": "h", "Fbar": "h"}), out)) == 0
    assert abs(out.norm() ** 2 - 2 / 3) <= 1e-15


@given(seeds, dims, dims, dims)
def test_embed_matches_kronecker_oracle(seed, da, db, dc):
    rng = np.random.default_rng(seed)
    a, b, c = qudit("A", da), qudit("B", db), qudit("C", dc)
    full = layout(a, b, c)
    m = rng.normal(size=(db, db)) + 1j * rng.normal(size=(db, db))
    e = qcore.embed(LinearMap(SpaceLayout((b,)), SpaceLayout((b,)), m), ["B"], full)
    oracle = np.kron(np.kron(np.eye(da), m), np.eye(dc))
    np.testing.assert_allclose(e.matrix, oracle, atol=1e-14)
    # two targets, listed out of layout order
    m2 = rng.normal(size=(dc * da, dc * da))
    e2 = qcore.embed(LinearMap(layout(c, a), layout(c, a), m2), ["C", "A"], full)
    t = m2.reshape(dc, da, dc, da)
    oracle2 = np.einsum("cazx,bw->abcxwz", t, np.eye(db)).reshape(full.size, full.size)
    np.testing.assert_allclose(e2.matrix, oracle2, atol=1e-14)


@given(seeds, dims)
def test_embed_commutes_with_fresh_register(seed, d):
    rng = np.random.default_rng(seed)
    a, fresh = qudit("A", d), qudit("Z", 3)
    m = LinearMap(SpaceLayout((a,)), SpaceLayout((a,)), rand_unitary(rng, d))
    s = rand_state(rng, SpaceLayout((a,)))
    z = rand_state(rng, SpaceLayout((fresh,)))
    lhs = qcore.apply(qcore.embed(m, ["A"], layout(a, fresh)), qcore.tensor(s, z))
    rhs = qcore.tensor(qcore.apply(m, s), z)
    np.testing.assert_allclose(lhs.amps, rhs.amps, atol=1e-14)


def test_embed_errors():
    with pytest.raises(LayoutError):
        qcore.embed(qcore.identity(SpaceLayout((S,))), ["Q"], RS)
    with pytest.raises(LayoutError):
        qcore.embed(qcore.identity(SpaceLayout((S,))), ["R"], RS)


def test_is_isometry_cases():
    assert qcore.is_isometry(qcore.identity(RS))
    assert qcore.is_isometry(dilate(Measurement.computational("Fbar", R), SpaceLayout((R,))).isometry)
    p = qcore.projector([basis_state(RS, {"R": "h", "S": "-1/2"})])
    assert not qcore.is_isometry(p)


@given(seeds, dims)
def test_isometry_preserves_norm(seed, d):
    rng = np.random.default_rng(seed)
    lay = SpaceLayout((qudit("A", d),))
    m = Measurement.from_columns("O", lay, [f"o{k}" for k in range(d)], rand_unitary(rng, d))
    rec = dilate(m, lay)
    assert qcore.is_isometry(rec.isometry)
    v = rng.normal(size=d) * 3.0
    s = StateVector(lay, v)
    assert abs(qcore.apply(rec.isometry, s).norm() - s.norm()) <= 1e-12


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        StateVector(SpaceLayout((R,)), [np.nan, 0])
