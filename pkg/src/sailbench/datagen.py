"""Synthetic dataset generators behind the `Data.*` sources.

Each generator has a declared element schema, used twice: during dry runs the
schema gives the symbolic element type without touching any data, and during
full runs it validates the bound records.  Generation is driven entirely by
splitmix64, so a (generator, args, seed) triple produces identical bytes on
every platform and in every implementation of the stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simulator
from .rng import SplitMix64, derive_seed
from .simulator import Atom
from .typesys import (
    AtomT,
    LabelT,
    ListT,
    RecordT,
    ScalarT,
    SemanticType,
    TensorT,
)


class GeneratorError(Exception):
    pass


@dataclass(frozen=True)
class SourceSpec:
    """Static description of one bound source: element type and sizes."""

    name: str
    args: tuple
    elem_type: SemanticType
    n_samples: int
    elems_per_sample: int

    @property
    def total_elements(self) -> int:
        return self.n_samples * self.elems_per_sample


def _int_arg(name: str, args, i: int) -> int:
    try:
        v = args[i]
    except IndexError:
        raise GeneratorError(f"{name} needs at least {i + 1} arguments")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise GeneratorError(f"{name} argument {i} must be a number, got {v!r}")
    return int(v)


def _float_arg(name: str, args, i: int) -> float:
    try:
        return float(args[i])
    except (IndexError, TypeError, ValueError):
        raise GeneratorError(f"{name} argument {i} must be a number")


_ARITY = {
    "TwoGaussians": 3,
    "PolyIntegrals": 3,
    "HarmonicConfigs": 3,
    "HarmonicTrajectory": 4,
    "Patches": 3,
    "PatchLabels": 3,
    "Range": 1,
}


def source_spec(name: str, args: tuple) -> SourceSpec:
    """Schema for a generator invocation.  Raises GeneratorError if unknown."""
    want = _ARITY.get(name)
    if want is not None and len(args) != want:
        raise GeneratorError(f"{name} takes {want} arguments, got {len(args)}")
    if name == "TwoGaussians":
        n, d = _int_arg(name, args, 0), _int_arg(name, args, 1)
        elem = RecordT((("x", TensorT((d,))), ("label", LabelT(2))))
        return SourceSpec(name, tuple(args), elem, n, d)
    if name == "PolyIntegrals":
        n, maxdeg = _int_arg(name, args, 0), _int_arg(name, args, 1)
        elem = RecordT((("coeffs", TensorT((maxdeg + 1,))), ("value", ScalarT())))
        return SourceSpec(name, tuple(args), elem, n, maxdeg + 1)
    if name == "HarmonicConfigs":
        n, atoms = _int_arg(name, args, 0), _int_arg(name, args, 1)
        elem = RecordT((("atoms", ListT(AtomT())), ("energy", ScalarT())))
        return SourceSpec(name, tuple(args), elem, n, atoms * 7)
    if name == "HarmonicTrajectory":
        steps, atoms = _int_arg(name, args, 0), _int_arg(name, args, 1)
        elem = RecordT(
            (("atoms", ListT(AtomT())), ("ref", TensorT((steps * atoms * 3,))))
        )
        return SourceSpec(name, tuple(args), elem, 1, atoms * 7)
    if name == "Patches":
        n, d = _int_arg(name, args, 0), _int_arg(name, args, 1)
        elem = RecordT((("x", TensorT((d,))),))
        return SourceSpec(name, tuple(args), elem, n, d)
    if name == "PatchLabels":
        n, d = _int_arg(name, args, 0), _int_arg(name, args, 1)
        elem = RecordT((("x", TensorT((d,))), ("label", LabelT(2))))
        return SourceSpec(name, tuple(args), elem, n, d)
    if name == "Range":
        n = _int_arg(name, args, 0)
        return SourceSpec(name, tuple(args), ScalarT(), n, 1)
    raise GeneratorError(f"unknown data source {name!r}")


def generate(name: str, args: tuple, seed: int) -> list:
    """Materialize a source.  `seed` is mixed with the source's declared seed
    argument (if any), so two sources with different declared seeds differ
    even within one scenario phase."""
    spec = source_spec(name, args)
    rng = SplitMix64(derive_seed(seed, name, *(int(a) for a in _seed_args(name, args))))
    if name == "TwoGaussians":
        return _two_gaussians(rng, spec)
    if name == "PolyIntegrals":
        return _poly_integrals(rng, spec, maxdeg=_int_arg(name, args, 1))
    if name == "HarmonicConfigs":
        return _harmonic_configs(rng, spec, atoms=_int_arg(name, args, 1))
    if name == "HarmonicTrajectory":
        return _harmonic_trajectory(
            rng,
            steps=_int_arg(name, args, 0),
            atoms=_int_arg(name, args, 1),
            h=_float_arg(name, args, 2),
        )
    if name == "Patches":
        return _patches(rng, spec, labeled=False)
    if name == "PatchLabels":
        return _patches(rng, spec, labeled=True)
    if name == "Range":
        return [float(i) for i in range(spec.n_samples)]
    raise GeneratorError(f"unknown data source {name!r}")


def _seed_args(name: str, args: tuple):
    # Trailing integer arguments contribute to the stream key; float step
    # sizes and similar do not need to (they change the data anyway).
    return [a for a in args if isinstance(a, int) and not isinstance(a, bool)]


# Cluster centers for the two-Gaussian classification task.  Separation is
# ~3.3 sigma, so a linear boundary already gets high-90s accuracy.
_G_CENTERS = (-1.0, 1.0)
_G_SIGMA = 0.6


def _two_gaussians(rng: SplitMix64, spec: SourceSpec) -> list:
    d = spec.elems_per_sample
    out = []
    for _ in range(spec.n_samples):
        label = rng.randint(2)
        center = _G_CENTERS[label]
        x = np.array([center + _G_SIGMA * rng.normal() for _ in range(d)])
        out.append({"x": x, "label": label})
    return out


def _poly_integrals(rng: SplitMix64, spec: SourceSpec, maxdeg: int) -> list:
    # Coefficients of a degree<=maxdeg polynomial; target is its integral
    # over [0, 1]: sum_k c_k / (k + 1).  Linear in the coefficients.
    out = []
    for _ in range(spec.n_samples):
        coeffs = np.array([rng.uniform_in(-1.0, 1.0) for _ in range(maxdeg + 1)])
        value = float(sum(c / (k + 1) for k, c in enumerate(coeffs)))
        out.append({"coeffs": coeffs, "value": value})
    return out


_POS_JITTER = 0.05
_VEL_JITTER = 0.02


def _sample_cluster(rng: SplitMix64, atoms: int) -> list:
    anchors = simulator.anchors_for(atoms)
    cluster = []
    for i in range(atoms):
        pos = anchors[i] + _POS_JITTER * np.array([rng.normal() for _ in range(3)])
        vel = _VEL_JITTER * np.array([rng.normal() for _ in range(3)])
        cluster.append(Atom(float(i % 3 + 1), pos, vel))
    return cluster


def _harmonic_configs(rng: SplitMix64, spec: SourceSpec, atoms: int) -> list:
    anchors = simulator.anchors_for(atoms)
    out = []
    for _ in range(spec.n_samples):
        cluster = _sample_cluster(rng, atoms)
        pos, _ = simulator.atoms_to_arrays(cluster)
        out.append({"atoms": cluster, "energy": simulator.potential_energy(pos, anchors)})
    return out


def _harmonic_trajectory(rng: SplitMix64, steps: int, atoms: int, h: float) -> list:
    anchors = simulator.anchors_for(atoms)
    cluster = _sample_cluster(rng, atoms)
    pos, vel = simulator.atoms_to_arrays(cluster)
    traj = simulator.velocity_verlet(
        pos, vel, lambda p: simulator.forces(p, anchors), h, steps
    )
    ref = np.concatenate([p.reshape(-1) for p, _ in traj])
    return [{"atoms": cluster, "ref": ref}]


def _patch_basis(d: int) -> np.ndarray:
    # Fixed mixing matrix shared by Patches and PatchLabels so that the
    # pretraining distribution matches the labeled one.
    rng = SplitMix64(derive_seed("patch-basis", d))
    return np.array([[rng.normal() for _ in range(3)] for _ in range(d)]) / np.sqrt(3.0)


def _patches(rng: SplitMix64, spec: SourceSpec, labeled: bool) -> list:
    d = spec.elems_per_sample
    basis = _patch_basis(d)
    out = []
    for _ in range(spec.n_samples):
        z = np.array([rng.normal() for _ in range(3)])
        noise = np.array([rng.normal() for _ in range(d)])
        x = basis @ z + 0.05 * noise
        if labeled:
            out.append({"x": x, "label": int(z[0] > 0.0)})
        else:
            out.append({"x": x})
    return out


# ------------------------------------------------------------------ validation


def validate_value(value, expected: SemanticType) -> str | None:
    """None if value conforms to expected, else a description of the clash."""
    if isinstance(expected, RecordT):
        if not isinstance(value, dict):
            return f"expected a record {expected}, got {type(value).__name__}"
        for fname, ftype in expected.fields:
            if fname not in value:
                return f"record missing field {fname!r} (expected {expected})"
            err = validate_value(value[fname], ftype)
            if err:
                return f"field {fname!r}: {err}"
        return None
    if isinstance(expected, ScalarT):
        if isinstance(value, bool) or not isinstance(value, (int, float, np.floating)):
            return f"expected Scalar, got {type(value).__name__}"
        return None
    if isinstance(expected, LabelT):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            return f"expected Label, got {type(value).__name__}"
        if isinstance(expected.k, int) and not 0 <= int(value) < expected.k:
            return f"label {value} out of range for {expected}"
        return None
    if isinstance(expected, TensorT):
        arr = np.asarray(value)
        if arr.ndim != len(expected.dims):
            return f"expected {expected}, got array of rank {arr.ndim}"
        for dim, size in zip(expected.dims, arr.shape):
            if isinstance(dim, int) and dim != size:
                return f"expected {expected}, got shape {arr.shape}"
        return None
    if isinstance(expected, ListT):
        if not isinstance(value, (list, tuple)):
            return f"expected {expected}, got {type(value).__name__}"
        for item in value:
            err = validate_value(item, expected.elem)
            if err:
                return err
        return None
    if isinstance(expected, AtomT):
        if not isinstance(value, Atom):
            return f"expected Atom, got {type(value).__name__}"
        return None
    return None  # remaining types are not produced by generators
