"""Ground-truth evaluation of the joint design's physical quantities.

Everything the optimizer produces is audited through this module; none of
these functions reuse solver data. Conventions:

* The reflection matrix Phi acts on the signal path for *all* elements
  (passive elements contribute with beta = 1); the mode matrix Q gates
  only active-element noise injection and active output power.
* Equivalent BS->CU channel: h_cu_k = G (phi * h_iu_k) + h_bu_k.
* Cascaded BS->target channel: h_tar_l = G (conj(phi) * a_l).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channels import ChannelSet, RisConfiguration, TWO_PI
from .config import SystemConfig


@dataclass
class BeamformingSolution:
    """BS communication beamformers and sensing covariance."""

    w: np.ndarray    # (K, M) complex; row k serves CU k
    R0: np.ndarray   # (M, M) Hermitian PSD sensing covariance

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=complex))
        self.R0 = np.asarray(self.R0, dtype=complex)

    @property
    def total_covariance(self) -> np.ndarray:
        """R0 plus the sum of the rank-one beamformer outer products."""
        return self.R0 + self.w.T @ self.w.conj() if self.w.size else self.R0

    @property
    def bs_power(self) -> float:
        return float(np.real(np.trace(self.R0)) + np.sum(np.abs(self.w) ** 2))

    def validate(self, tol_psd_factor: float = 1e-8) -> None:
        M = self.R0.shape[0]
        if self.R0.shape != (M, M):
            raise ValueError("R0 must be square")
        if self.w.size and self.w.shape[1] != M:
            raise ValueError("beamformer length must match R0 order")
        herm_err = np.max(np.abs(self.R0 - self.R0.conj().T))
        scale = max(np.real(np.trace(self.R0)), 1e-300)
        if herm_err > 1e-8 * max(scale, 1.0):
            raise ValueError("R0 must be Hermitian")
        min_eig = float(np.linalg.eigvalsh((self.R0 + self.R0.conj().T) / 2)[0])
        if min_eig < -tol_psd_factor * scale:
            raise ValueError(f"R0 must be PSD (min eigenvalue {min_eig:.3e})")


def zero_beamforming(cfg: SystemConfig) -> BeamformingSolution:
    return BeamformingSolution(
        w=np.zeros((cfg.K, cfg.M), dtype=complex),
        R0=np.zeros((cfg.M, cfg.M), dtype=complex),
    )


def cu_channel(ch: ChannelSet, ris: RisConfiguration, k: int) -> np.ndarray:
    """Equivalent BS->CU channel through the RIS plus the direct link."""
    return ch.G @ (ris.phi * ch.h_iu[k]) + ch.h_bu[k]


def target_channel(ch: ChannelSet, ris: RisConfiguration, l: int) -> np.ndarray:
    """Cascaded BS->RIS->target channel for target l."""
    return ch.G @ (np.conj(ris.phi) * ch.a_tar[l])


def target_channel_for_steering(
    ch: ChannelSet, ris: RisConfiguration, a: np.ndarray
) -> np.ndarray:
    """Cascaded channel toward an arbitrary steering vector (for beampattern maps)."""
    return ch.G @ (np.conj(ris.phi) * a)


def beampattern_gain(
    ch: ChannelSet, ris: RisConfiguration, bf: BeamformingSolution, l: int
) -> float:
    """Sensing beampattern gain h_l^H (R0 + sum_k w_k w_k^H) h_l toward target l."""
    h = target_channel(ch, ris, l)
    val = np.real(h.conj() @ bf.R0 @ h) + np.sum(np.abs(bf.w @ h.conj()) ** 2)
    return float(val)


def cu_sinr(
    ch: ChannelSet, ris: RisConfiguration, bf: BeamformingSolution, k: int,
    cfg: SystemConfig,
) -> float:
    """Receive SINR of CU k under the given RIS state and beamformers."""
    h = cu_channel(ch, ris, k)
    gains = np.abs(bf.w @ h.conj()) ** 2 if bf.w.size else np.zeros(0)
    signal = gains[k] if gains.size else 0.0
    interference = float(np.sum(gains) - signal)
    ris_noise = cfg.sigma2_ris * float(
        np.sum(np.abs(ch.h_iu[k]) ** 2 * ris.q * ris.beta**2)
    )
    return float(signal / (interference + ris_noise + cfg.sigma2_cu[k]))


def ris_output_power(
    ch: ChannelSet, ris: RisConfiguration, bf: BeamformingSolution,
    cfg: SystemConfig,
) -> float:
    """Total transmit power of the active RIS elements.

    Sum over elements of q_n beta_n^2 ((G^H R G)_nn + sigma2_ris), i.e. the
    amplified per-element receive power plus the injected noise power.
    """
    R = bf.total_covariance
    per_elem = np.real(np.einsum("mn,mp,pn->n", ch.G.conj(), R, ch.G))
    gains = ris.q * ris.beta**2
    return float(np.sum(gains * per_elem) + cfg.sigma2_ris * np.sum(gains))


def ris_noise_at_target(
    ris: RisConfiguration, ch: ChannelSet, l: int, cfg: SystemConfig
) -> float:
    """Active-element noise power arriving at target l."""
    a = ch.a_tar[l]
    return float(
        cfg.sigma2_ris * np.sum(np.abs(a) ** 2 * ris.q * ris.beta**2)
    )


@dataclass
class ConstraintRecord:
    name: str
    lhs: float
    rhs: float
    satisfied: bool
    slack: float


@dataclass
class ConstraintReport:
    """Per-constraint audit of one candidate solution plus the objective."""

    records: list
    objective: float

    @property
    def feasible(self) -> bool:
        return all(r.satisfied for r in self.records)

    def record(self, name: str) -> ConstraintRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps({
            "objective": self.objective,
            "feasible": self.feasible,
            "constraints": [r.__dict__ for r in self.records],
        }, indent=2)


def _leq(name: str, lhs: float, rhs: float, tol: float) -> ConstraintRecord:
    slack = rhs - lhs
    scale = max(abs(rhs), abs(lhs), 1e-300)
    return ConstraintRecord(name, float(lhs), float(rhs),
                            bool(slack >= -tol * scale), float(slack))


def audit(
    cfg: SystemConfig,
    ch: ChannelSet,
    ris: RisConfiguration,
    bf: BeamformingSolution,
    tol_feas: float | None = None,
) -> ConstraintReport:
    """Evaluate every constraint of the joint design for one candidate.

    Covers BS power, per-CU SINR, RIS output power, per-target RIS noise,
    phase range, amplitude/mode coupling, and mode binariness; the
    objective is the minimum beampattern gain over targets.
    """
    tol = cfg.tol_feas if tol_feas is None else tol_feas
    ch.validate(cfg)
    if ris.q.shape != (cfg.N,):
        raise ValueError("RIS configuration size mismatch")
    if bf.w.shape != (cfg.K, cfg.M) or bf.R0.shape != (cfg.M, cfg.M):
        raise ValueError("beamforming solution size mismatch")

    recs = [_leq("bs_power", bf.bs_power, cfg.P0, tol)]
    for k in range(cfg.K):
        sinr = cu_sinr(ch, ris, bf, k, cfg)
        slack = sinr - cfg.Gamma[k]
        recs.append(ConstraintRecord(
            f"cu_sinr[{k}]", sinr, float(cfg.Gamma[k]),
            bool(slack >= -tol * cfg.Gamma[k]), float(slack)))
    recs.append(_leq("ris_power", ris_output_power(ch, ris, bf, cfg),
                     cfg.P_ris_max, tol))
    for l in range(cfg.L):
        recs.append(_leq(f"ris_noise_target[{l}]",
                         ris_noise_at_target(ris, ch, l, cfg),
                         cfg.xi_ris_max, tol))

    # Phase range (0, 2*pi]: lhs is the worst violation distance.
    phase_viol = float(np.max(np.maximum(-ris.theta + np.finfo(float).tiny,
                                         ris.theta - TWO_PI).clip(min=0.0),
                              initial=0.0))
    recs.append(ConstraintRecord("phase_range", phase_viol, 0.0,
                                 bool(phase_viol <= tol), -phase_viol))

    # Amplitude bounds 1 - q <= beta <= 1 - q + q * beta_max.
    lo = 1.0 - ris.q
    hi = 1.0 - ris.q + ris.q * cfg.beta_max
    amp_viol = float(np.max(np.maximum(lo - ris.beta, ris.beta - hi).clip(min=0.0),
                            initial=0.0))
    recs.append(ConstraintRecord("amplitude_range", amp_viol, 0.0,
                                 bool(amp_viol <= tol * max(cfg.beta_max, 1.0)),
                                 -amp_viol))

    # Mode binariness.
    bin_viol = float(np.max(np.minimum(np.abs(ris.q), np.abs(1.0 - ris.q)),
                            initial=0.0))
    recs.append(ConstraintRecord("mode_binary", bin_viol, 0.0,
                                 bool(bin_viol <= tol), -bin_viol))

    objective = min(beampattern_gain(ch, ris, bf, l) for l in range(cfg.L))
    return ConstraintReport(records=recs, objective=float(objective))
