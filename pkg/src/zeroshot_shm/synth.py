"""Surrogate vibration data from linear shear-building models.

Each structure is a chain of lumped masses connected by story springs
(story 0 attaches to the ground). Damage is a stiffness reduction of one
story. Ambient excitation is independent white-noise force at every
degree of freedom, held constant over each sample (zero-order hold), and
the state-space system is discretized exactly with a matrix exponential.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .signals import ChannelRecord, write_records_csv


class SimulationError(RuntimeError):
    """Raised when the time integration produces a non-finite or exploding response."""


@dataclass(frozen=True)
class StructureSpec:
    dof_count: int
    masses: tuple[float, ...]
    story_stiffnesses: tuple[float, ...]
    damping_ratio: float
    sensor_dofs: tuple[int, ...]
    sampling_rate_hz: float
    excitation_std: float = 1.0
    noise_ratio: float = 0.0

    def __post_init__(self):
        if self.dof_count < 1:
            raise ValueError("dof_count must be positive")
        if len(self.masses) != self.dof_count or len(self.story_stiffnesses) != self.dof_count:
            raise ValueError("masses and story_stiffnesses must have dof_count entries")
        if min(self.masses) <= 0 or min(self.story_stiffnesses) <= 0:
            raise ValueError("masses and stiffnesses must be positive")
        if not 0 < self.damping_ratio < 1:
            raise ValueError("damping_ratio must lie in (0, 1)")
        if not self.sensor_dofs or any(not 0 <= d < self.dof_count for d in self.sensor_dofs):
            raise ValueError(f"sensor_dofs must index 0..{self.dof_count - 1}")
        if self.sampling_rate_hz <= 0 or self.excitation_std <= 0:
            raise ValueError("sampling_rate_hz and excitation_std must be positive")
        if self.noise_ratio < 0:
            raise ValueError("noise_ratio must be non-negative")


@dataclass(frozen=True)
class DamageSpec:
    story_index: int
    stiffness_factor: float

    def __post_init__(self):
        if not 0 < self.stiffness_factor <= 1:
            raise ValueError(f"stiffness_factor must lie in (0, 1], got {self.stiffness_factor}")

    @property
    def is_healthy(self) -> bool:
        return self.stiffness_factor == 1.0


def mass_matrix(spec: StructureSpec) -> np.ndarray:
    return np.diag(np.asarray(spec.masses, dtype=float))


def stiffness_matrix(spec: StructureSpec, damage: DamageSpec | None = None) -> np.ndarray:
    """Tridiagonal shear-building stiffness, with the damaged story scaled."""
    k = np.asarray(spec.story_stiffnesses, dtype=float).copy()
    if damage is not None:
        if not 0 <= damage.story_index < spec.dof_count:
            raise ValueError(f"damage story {damage.story_index} outside 0..{spec.dof_count - 1}")
        k[damage.story_index] *= damage.stiffness_factor
    n = spec.dof_count
    K = np.zeros((n, n))
    for i in range(n):
        K[i, i] += k[i]
        if i > 0:
            K[i - 1, i - 1] += k[i]
            K[i - 1, i] -= k[i]
            K[i, i - 1] -= k[i]
    return K


def natural_frequencies(spec: StructureSpec, damage: DamageSpec | None = None) -> np.ndarray:
    """Undamped natural circular frequencies (rad/s), ascending."""
    from scipy.linalg import eigh

    eigvals = eigh(stiffness_matrix(spec, damage), mass_matrix(spec), eigvals_only=True)
    return np.sqrt(np.clip(eigvals, 0.0, None))


def rayleigh_damping(M: np.ndarray, K: np.ndarray, zeta: float) -> np.ndarray:
    from scipy.linalg import eigh

    omega = np.sqrt(np.clip(eigh(K, M, eigvals_only=True), 0.0, None))
    if len(omega) == 1:
        # single mode: stiffness-proportional damping hits zeta exactly
        return (2 * zeta / omega[0]) * K
    w1, w2 = omega[0], omega[1]
    alpha = 2 * zeta * w1 * w2 / (w1 + w2)
    beta = 2 * zeta / (w1 + w2)
    return alpha * M + beta * K


def state_space(spec: StructureSpec, damage: DamageSpec | None = None):
    """Continuous (A, B, C, D) with state [u, v], input force, output acceleration."""
    M = mass_matrix(spec)
    K = stiffness_matrix(spec, damage)
    Cd = rayleigh_damping(M, K, spec.damping_ratio)
    n = spec.dof_count
    Minv = np.linalg.inv(M)
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -Minv @ K
    A[n:, n:] = -Minv @ Cd
    B = np.zeros((2 * n, n))
    B[n:, :] = Minv
    C = np.hstack([-Minv @ K, -Minv @ Cd])
    D = Minv
    return A, B, C, D


def discretize(A: np.ndarray, B: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    n, m = B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = expm(aug * dt)
    return E[:n, :n], E[:n, n:]


def simulate_response(
    spec: StructureSpec,
    forces: np.ndarray,
    dt: float,
    damage: DamageSpec | None = None,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate under a given force history (steps x dof).

    Returns (accelerations, states), both sampled at the start of each step,
    for all degrees of freedom.
    """
    A, B, C, D = state_space(spec, damage)
    Ad, Bd = discretize(A, B, dt)
    n_steps = forces.shape[0]
    x = np.zeros(A.shape[0]) if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.empty((n_steps, A.shape[0]))
    for t in range(n_steps):
        states[t] = x
        x = Ad @ x + Bd @ forces[t]
    acc = states @ C.T + forces @ D.T
    if not np.all(np.isfinite(acc)):
        raise SimulationError("response became non-finite; reduce the time step")
    return acc, states


def simulate(
    spec: StructureSpec,
    damage: DamageSpec | None,
    duration_s: float,
    seed: int,
) -> list[ChannelRecord]:
    """Ambient-vibration acceleration records at the sensor DOFs."""
    dt = 1.0 / spec.sampling_rate_hz
    n_steps = int(round(duration_s * spec.sampling_rate_hz))
    if n_steps < 2:
        raise ValueError("duration too short for the sampling rate")
    rng = np.random.default_rng(seed)
    forces = rng.normal(0.0, spec.excitation_std, size=(n_steps, spec.dof_count))
    acc, _ = simulate_response(spec, forces, dt, damage)
    # blow-up guard: a stable linear system stays within a few hundred input-std multiples
    scale = np.max(np.abs(acc))
    bound = 1e6 * spec.excitation_std / min(spec.masses)
    if scale > bound:
        raise SimulationError(f"response magnitude {scale:.3g} exceeds {bound:.3g}; reduce the time step")
    out = acc[:, list(spec.sensor_dofs)]
    if spec.noise_ratio > 0:
        rms = np.sqrt(np.mean(out**2, axis=0))
        out = out + rng.normal(0.0, 1.0, size=out.shape) * (spec.noise_ratio * rms)
    return [
        ChannelRecord(channel_id=i, samples=out[:, i].copy(), sampling_rate_hz=spec.sampling_rate_hz)
        for i in range(out.shape[1])
    ]


def _chain_stiffness(masses, target_hz: float, profile) -> tuple[float, ...]:
    """Scale a stiffness profile so the fundamental frequency lands on target_hz."""
    n = len(masses)
    probe = StructureSpec(n, tuple(masses), tuple(profile), 0.02, (0,), 1.0)
    f1 = natural_frequencies(probe)[0] / (2 * np.pi)
    factor = (target_hz / f1) ** 2
    return tuple(float(k * factor) for k in profile)


def default_source_spec() -> StructureSpec:
    masses = (1.0, 1.0, 1.0, 1.0)
    return StructureSpec(
        dof_count=4,
        masses=masses,
        story_stiffnesses=_chain_stiffness(masses, 120.0, (0.1, 1.0, 1.0, 1.0)),
        damping_ratio=0.005,
        sensor_dofs=(0, 1, 2, 3),
        sampling_rate_hz=256.0,
        excitation_std=1.0,
        noise_ratio=0.02,
    )


def default_target_spec() -> StructureSpec:
    masses = (2.0, 1.8, 1.6, 1.4, 1.2, 1.0)
    return StructureSpec(
        dof_count=6,
        masses=masses,
        story_stiffnesses=_chain_stiffness(masses, 190.0, (0.1, 1.0, 0.95, 0.85, 0.75, 0.6)),
        damping_ratio=0.008,
        sensor_dofs=(0, 2, 4, 5),
        sampling_rate_hz=512.0,
        excitation_std=3.0,
        noise_ratio=0.02,
    )


@dataclass
class FixtureCase:
    domain: str
    label: str
    damage: DamageSpec | None
    records: list[ChannelRecord]
    duration_s: float


@dataclass
class TLFixture:
    source_spec: StructureSpec
    target_spec: StructureSpec
    cases: list[FixtureCase] = field(default_factory=list)
    seed: int = 0

    def get(self, domain: str, label: str) -> FixtureCase:
        for c in self.cases:
            if c.domain == domain and c.label == label:
                return c
        raise KeyError(f"{domain}/{label}")

    def damage_cases(self, domain: str) -> list[FixtureCase]:
        return [c for c in self.cases if c.domain == domain and c.damage is not None]


DEFAULT_DAMAGE_FACTORS = (0.9, 0.7, 0.5)


def make_tl_fixture(
    seed: int = 0,
    damage_factors=DEFAULT_DAMAGE_FACTORS,
    damage_story: int = 0,
    source_healthy_s: float = 600.0,
    source_damage_s: float = 120.0,
    target_healthy_s: float = 200.0,
    target_damage_s: float = 60.0,
    source_spec: StructureSpec | None = None,
    target_spec: StructureSpec | None = None,
) -> TLFixture:
    """Source/target healthy and damaged records for a transfer scenario.

    Every case draws its excitation from an independent child of ``seed``;
    the modal structure does not depend on the seed.
    """
    src = source_spec or default_source_spec()
    tgt = target_spec or default_target_spec()
    if len(src.sensor_dofs) != len(tgt.sensor_dofs):
        raise ValueError("source and target must expose the same number of sensors")
    for f in damage_factors:
        if not 0 < f < 1:
            raise ValueError(f"damage factor must lie in (0, 1), got {f}")
    plan = [("source", src, None, source_healthy_s), ("target", tgt, None, target_healthy_s)]
    for f in damage_factors:
        plan.append(("source", src, DamageSpec(damage_story, float(f)), source_damage_s))
        plan.append(("target", tgt, DamageSpec(damage_story, float(f)), target_damage_s))
    children = np.random.SeedSequence(seed).spawn(len(plan))
    fixture = TLFixture(source_spec=src, target_spec=tgt, seed=seed)
    for (domain, spec, damage, duration), child in zip(plan, children):
        case_seed = int(child.generate_state(1)[0])
        label = "healthy" if damage is None else f"damage_{damage.stiffness_factor:g}"
        records = simulate(spec, damage, duration, case_seed)
        fixture.cases.append(FixtureCase(domain, label, damage, records, duration))
    return fixture


def write_fixture(fixture: TLFixture, out_dir) -> Path:
    """Write one CSV per case plus manifest.json; returns the manifest path."""
    out = Path(out_dir)
    entries = []
    for case in fixture.cases:
        rel = Path(case.domain) / f"{case.label}.csv"
        (out / case.domain).mkdir(parents=True, exist_ok=True)
        write_records_csv(out / rel, case.records)
        entries.append(
            {
                "domain": case.domain,
                "label": case.label,
                "path": rel.as_posix(),
                "damage": None if case.damage is None else asdict(case.damage),
                "duration_s": case.duration_s,
                "sampling_rate_hz": case.records[0].sampling_rate_hz,
                "n_channels": len(case.records),
            }
        )
    manifest = {
        "seed": fixture.seed,
        "source_structure": asdict(fixture.source_spec),
        "target_structure": asdict(fixture.target_spec),
        "cases": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path

