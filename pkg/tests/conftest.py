import numpy as np
import pytest
from hypothesis import settings
from scipy.stats import unitary_group

from wfsim.qcore import StateVector
from wfsim.registers import Register, SpaceLayout, layout
from wfsim.scenario import Comm, Scenario, Step, build_fr
from wfsim.semantics import Measurement, memory_register

settings.register_profile("ci", deadline=None, max_examples=50)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def fr():
    return build_fr()


def rand_unitary(rng, d):
    if d == 0:
        return np.zeros((0, 0), complex)
    if d == 1:
        return np.array([[np.exp(2j * np.pi * rng.random())]])
    return unitary_group.rvs(d, random_state=rng)


def rand_state(rng, lay):
    v = rng.normal(size=lay.size) + 1j * rng.normal(size=lay.size)
    return StateVector(lay, v / np.linalg.norm(v))


def qudit(name, d, prefix="x"):
    return Register(name, tuple(f"{prefix}{k}" for k in range(d)))


def rand_measurement(rng, agent, lay, labels=None):
    labels = labels or tuple(f"o{k}" for k in range(lay.size))
    return Measurement.from_columns(agent, lay, labels, rand_unitary(rng, lay.size))


def two_observer(rng, d, policy="unitary"):
    """System S measured by A, then by B; neither touches the other's memory."""
    s = qudit("S", d)
    lay = SpaceLayout((s,))
    m1 = rand_measurement(rng, "A", lay, tuple(f"a{k}" for k in range(d)))
    m2 = rand_measurement(rng, "B", lay, tuple(f"b{k}" for k in range(d)))
    sc = Scenario(lay, rand_state(rng, lay), (Step("n:00", m1, policy), Step("n:10", m2, policy)))
    return sc, m1, m2


def pointer_outer(rng, m1, agent="B", mix=False):
    """Measurement of (S, A) whose first outcomes are the pointer states
    |a>|A_a>; the rest of the space gets a random basis. With ``mix`` the
    pointer states are rotated among themselves, which breaks the product
    form."""
    mem = memory_register(m1)
    sys_reg = m1.targets.registers[0]
    lay = SpaceLayout((sys_reg, mem))
    d = sys_reg.dim
    pointers = np.zeros((lay.size, d), complex)
    for k, (lbl, (v,)) in enumerate(m1.outcomes):
        e = np.zeros(d)
        e[mem.index(lbl)] = 1
        pointers[:, k] = np.kron(v.amps, e)
    if mix:
        pointers = pointers @ rand_unitary(rng, d)
    else:
        pointers = pointers * np.exp(2j * np.pi * rng.random(d))
    # complete with a random basis of the orthogonal complement
    q, _ = np.linalg.qr(np.hstack([pointers, rng.normal(size=(lay.size, lay.size - d))]))
    rest = q[:, d:] @ rand_unitary(rng, lay.size - d)
    cols = np.hstack([pointers, rest])
    labels = tuple(f"p{k}" for k in range(d)) + tuple(f"r{k}" for k in range(lay.size - d))
    return Measurement.from_columns(agent, lay, labels, cols)


def rand_scenario(rng, d1, d2):
    """Two registers, a unitary step on A, a collapse step on (B, A), one comm."""
    a, b = qudit("A", d1, "a"), qudit("B", d2, "b")
    lay = layout(a, b)
    m1 = rand_measurement(rng, "X", SpaceLayout((a,)))
    m2 = rand_measurement(rng, "Y", layout(b, a))
    steps = (Step("n:00", m1), Step("n:10", m2, "collapse"))
    return Scenario(lay, rand_state(rng, lay), steps, (Comm("n:11", "Y", "X"),), "rand")
