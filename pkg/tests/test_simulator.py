"""Integrator checks: closed-form orbit, energy drift, reversibility.

Velocity Verlet is symplectic, so total energy must stay inside a narrow
band around its initial value instead of drifting; that band is the
contract the dynamics fixture relies on.
"""

import math

import numpy as np

from sailbench.rng import SplitMix64
from sailbench.simulator import (
    anchors_for,
    forces,
    kinetic_energy,
    potential_energy,
    total_energy,
    velocity_verlet,
)


def jittered_cluster(n: int, seed: int, scale: float = 0.05):
    rng = SplitMix64(seed)
    anchors = anchors_for(n)
    pos = anchors + scale * np.array(
        [[rng.uniform_in(-1, 1) for _ in range(3)] for _ in range(n)]
    )
    vel = 0.02 * np.array([[rng.uniform_in(-1, 1) for _ in range(3)] for _ in range(n)])
    return pos, vel, anchors


def test_anchor_layout():
    a = anchors_for(4)
    assert a.shape == (4, 3)
    assert np.array_equal(a[:, 0], [0.0, 1.0, 2.0, 3.0])
    assert np.all(a[:, 1:] == 0.0)


def test_forces_match_numerical_gradient():
    pos, _, anchors = jittered_cluster(5, seed=3)
    f = forces(pos, anchors)
    eps = 1e-6
    for i in range(5):
        for d in range(3):
            bumped = pos.copy()
            bumped[i, d] += eps
            e_plus = potential_energy(bumped, anchors)
            bumped[i, d] -= 2 * eps
            e_minus = potential_energy(bumped, anchors)
            fd = -(e_plus - e_minus) / (2 * eps)
            assert abs(f[i, d] - fd) < 1e-6


def test_single_particle_closed_form():
    # One particle, no pair terms: x(t) = x0 cos(t) for unit spring and mass.
    anchors = anchors_for(1)
    x0 = 0.3
    pos = np.array([[x0, 0.0, 0.0]])
    vel = np.zeros((1, 3))
    h, steps = 0.001, 1000
    traj = velocity_verlet(pos, vel, lambda p: forces(p, anchors), h, steps)
    got = traj[-1][0][0, 0]
    want = x0 * math.cos(h * steps)
    assert abs(got - want) < 1e-6


def test_energy_drift_is_bounded():
    pos, vel, anchors = jittered_cluster(5, seed=9)
    e0 = total_energy(pos, vel, anchors)
    h, steps = 0.001, 1000
    traj = velocity_verlet(pos, vel, lambda p: forces(p, anchors), h, steps)
    drift = max(abs(total_energy(p, v, anchors) - e0) for p, v in traj)
    assert drift <= 1e-6


def test_time_reversibility():
    pos, vel, anchors = jittered_cluster(4, seed=21)
    fwd = velocity_verlet(pos, vel, lambda p: forces(p, anchors), 0.01, 50)
    p_end, v_end = fwd[-1]
    back = velocity_verlet(p_end, -v_end, lambda p: forces(p, anchors), 0.01, 50)
    p_back, v_back = back[-1]
    assert np.allclose(p_back, pos, atol=1e-10)
    assert np.allclose(-v_back, vel, atol=1e-10)


def test_step_count_and_shapes():
    pos, vel, anchors = jittered_cluster(3, seed=1)
    traj = velocity_verlet(pos, vel, lambda p: forces(p, anchors), 0.01, 7)
    assert len(traj) == 7
    for p, v in traj:
        assert p.shape == (3, 3) and v.shape == (3, 3)


def test_inputs_not_mutated():
    pos, vel, anchors = jittered_cluster(3, seed=2)
    pos_copy, vel_copy = pos.copy(), vel.copy()
    velocity_verlet(pos, vel, lambda p: forces(p, anchors), 0.01, 5)
    assert np.array_equal(pos, pos_copy)
    assert np.array_equal(vel, vel_copy)


def test_kinetic_energy_quadratic():
    v = np.array([[1.0, 2.0, 2.0]])
    assert kinetic_energy(v) == 4.5
