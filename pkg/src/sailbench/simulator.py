"""Harmonic-cluster reference simulator and velocity-Verlet integrator.

The model system is a small cluster of unit-mass particles, each tethered to
an anchor site, with weak pair springs between all particles:

    E(x) = 1/2 * sum_i k * |x_i - c_i|^2
         + 1/2 * sum_{i<j} kappa * (|x_i - x_j| - r0)^2

with k = 1, kappa = 0.1, r0 = 1.  Anchors sit on a unit-spaced line, so
adjacent pairs rest near r0 while longer pairs carry static strain; energies
vary smoothly with small perturbations, which makes the setting learnable
by simple regressors while still exercising gradient-driven dynamics.

Forces are analytic.  The integrator is plain velocity Verlet, which is
symplectic: total energy stays within a bounded band instead of drifting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

K_ANCHOR = 1.0
K_PAIR = 0.1
R0 = 1.0


@dataclass
class Atom:
    """A particle: atomic number plus position and velocity vectors."""

    z: float
    pos: np.ndarray  # shape (3,)
    vel: np.ndarray  # shape (3,)

    def copy(self) -> "Atom":
        return Atom(self.z, self.pos.copy(), self.vel.copy())


def anchors_for(n: int) -> np.ndarray:
    """Anchor sites: n points spaced 1 apart along the x axis."""
    out = np.zeros((n, 3))
    out[:, 0] = np.arange(n, dtype=np.float64)
    return out


def potential_energy(pos: np.ndarray, anchors: np.ndarray) -> float:
    diff = pos - anchors
    e = 0.5 * K_ANCHOR * float(np.sum(diff * diff))
    n = len(pos)
    for i in range(n):
        for j in range(i + 1, n):
            r = float(np.linalg.norm(pos[i] - pos[j]))
            e += 0.5 * K_PAIR * (r - R0) ** 2
    return e


def forces(pos: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Analytic -dE/dx, shape (n, 3)."""
    f = -K_ANCHOR * (pos - anchors)
    n = len(pos)
    for i in range(n):
        for j in range(i + 1, n):
            d = pos[i] - pos[j]
            r = float(np.linalg.norm(d))
            if r == 0.0:
                continue  # coincident particles exert no pair force
            g = K_PAIR * (r - R0) / r
            f[i] -= g * d
            f[j] += g * d
    return f


def kinetic_energy(vel: np.ndarray) -> float:
    return 0.5 * float(np.sum(vel * vel))


def total_energy(pos: np.ndarray, vel: np.ndarray, anchors: np.ndarray) -> float:
    return potential_energy(pos, anchors) + kinetic_energy(vel)


def velocity_verlet(pos: np.ndarray, vel: np.ndarray, force_fn, h: float,
                    steps: int) -> list:
    """Integrate with velocity Verlet; returns [(pos, vel)] after each step.

    force_fn(pos) -> (n, 3) array.  Unit masses.
    """
    pos = pos.copy()
    vel = vel.copy()
    f = force_fn(pos)
    out = []
    for _ in range(steps):
        vel_half = vel + 0.5 * h * f
        pos = pos + h * vel_half
        f = force_fn(pos)
        vel = vel_half + 0.5 * h * f
        out.append((pos.copy(), vel.copy()))
    return out


def atoms_to_arrays(atoms: list) -> tuple:
    pos = np.stack([a.pos for a in atoms])
    vel = np.stack([a.vel for a in atoms])
    return pos, vel
