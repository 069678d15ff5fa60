"""Synthetic lab-test episodes from a class-conditioned linear-Gaussian state-space model.

Each class owns a stationary mean and a rotation speed for a 2-D latent
oscillator; a third latent coordinate is a class-independent AR(1)
nuisance.  Each class also shifts one designated test; an optional per-episode
baseline offset per test (off by default) adds patient-level variation.
Observations are noisy linear read-outs of the latent state in
arbitrary per-test units, with entries removed i.i.d. at ``missing_rate``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import DataError, LabSequence


@dataclass(frozen=True)
class SynthConfig:
    n_episodes: int = 2000
    n_classes: int = 4
    n_tests: int = 10
    t_min: int = 5
    t_max: int = 20
    missing_rate: float = 0.54
    persistence: float = 0.98
    obs_noise: float = 0.7
    class_sep: float = 0.1
    nuisance_scale: float = 0.5
    baseline_noise: float = 0.0
    shift_scale: float = 0.7
    speed_low: float = 0.05
    speed_high: float = 0.4
    n_speeds: int = 4

    def validate(self) -> None:
        if not 0.0 <= self.missing_rate < 1.0:
            raise DataError(f"missing_rate must lie in [0, 1), got {self.missing_rate}")
        if not 0.0 <= self.persistence < 1.0:
            raise DataError(f"persistence must lie in [0, 1), got {self.persistence}")
        if self.n_classes < 2 or self.n_tests < 1:
            raise DataError("need at least 2 classes and 1 test")
        if self.n_speeds < 1:
            raise DataError("n_speeds must be at least 1")
        if not 1 <= self.t_min <= self.t_max:
            raise DataError(f"bad length range [{self.t_min}, {self.t_max}]")

    def to_dict(self) -> dict:
        return asdict(self)


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def synth_generate(config: SynthConfig, seed: int) -> list[LabSequence]:
    config.validate()
    rng = np.random.default_rng(seed)
    C, M, r = config.n_classes, config.n_tests, config.persistence

    # shared read-out and raw units
    loadings = rng.normal(size=(M, 3))
    loadings[:, 2] *= config.nuisance_scale
    offset = rng.uniform(0.0, 100.0, size=M)
    unit = rng.uniform(0.5, 20.0, size=M)

    # class parameters: means on a circle, rotation speeds cycling through the levels
    angles = 2 * np.pi * np.arange(C) / C
    means = config.class_sep * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    # each class also raises one designated test
    shifted = rng.permutation(M)[:C] if C <= M else rng.integers(M, size=C)
    shifts = np.zeros((C, M))
    shifts[np.arange(C), shifted] = config.shift_scale
    levels = np.linspace(config.speed_low, config.speed_high, config.n_speeds) if config.n_speeds > 1 \
        else np.array([config.speed_low])
    speeds = levels[np.arange(C) % len(levels)]
    transitions = [r * _rotation(th) for th in speeds]
    innov = np.sqrt(1.0 - r * r)

    seqs = []
    for n in range(config.n_episodes):
        label = int(rng.integers(C))
        T = int(rng.integers(config.t_min, config.t_max + 1))
        osc = np.empty((T, 2))
        nuis = np.empty(T)
        osc[0] = rng.normal(size=2)
        nuis[0] = rng.normal()
        for t in range(1, T):
            osc[t] = transitions[label] @ osc[t - 1] + innov * rng.normal(size=2)
            nuis[t] = r * nuis[t - 1] + innov * rng.normal()
        state = np.column_stack([osc + means[label], nuis])
        baseline = config.baseline_noise * rng.normal(size=M)
        x = state @ loadings.T + shifts[label] + baseline + config.obs_noise * rng.normal(size=(T, M))
        raw = offset + unit * x
        mask = rng.random((T, M)) >= config.missing_rate
        if not mask.any():
            mask[rng.integers(T), rng.integers(M)] = True
        seqs.append(LabSequence(np.where(mask, raw, 0.0), mask, label, f"syn{seed}-{n:05d}"))
    return seqs
