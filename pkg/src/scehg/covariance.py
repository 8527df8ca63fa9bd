"""Kernel-smoothed spatial covariance for one subject's p x q series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class SubjectSeries:
    subject_id: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise InvalidInputError(f"subject {self.subject_id}: data must be 2-D")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError(f"subject {self.subject_id}: non-finite entries")

    @property
    def p(self):
        return self.data.shape[0]

    @property
    def q(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel over time.

    ``bandwidth=None`` means ``q ** (1/3)`` for the series being smoothed.
    """

    bandwidth: float | None = None
    kernel: str = "gaussian"

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise InvalidInputError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.kernel != "gaussian":
            raise InvalidInputError(f"unsupported kernel {self.kernel!r}")

    def resolve(self, q):
        return float(q) ** (1.0 / 3.0) if self.bandwidth is None else float(self.bandwidth)


def kernel_weights(q, t, cfg: KernelConfig):
    """Weights ``exp(-u^2/2)`` with ``u = |s - t| / h`` for s = 1..q (t is 1-based)."""
    if not 1 <= t <= q:
        raise InvalidInputError(f"time index {t} outside 1..{q}")
    h = cfg.resolve(q)
    u = np.abs(np.arange(1, q + 1) - t) / h
    return np.exp(-0.5 * u * u)


def _weight_matrix(q, cfg):
    h = cfg.resolve(q)
    idx = np.arange(q)
    u = np.abs(idx[:, None] - idx[None, :]) / h
    return np.exp(-0.5 * u * u)


def time_varying_covariance(series: SubjectSeries, cfg: KernelConfig, t):
    """Kernel-weighted covariance of the columns around time ``t`` (1-based)."""
    w = kernel_weights(series.q, t, cfg)
    Z = series.data
    S = (Z * w) @ Z.T / w.sum()
    return 0.5 * (S + S.T)


def subject_covariance(series: SubjectSeries, cfg: KernelConfig | None = None):
    """Average of the time-varying covariances over t = 1..q."""
    cfg = cfg or KernelConfig()
    Z = series.data
    W = _weight_matrix(series.q, cfg)
    # column s of Z enters with total weight sum_t w_st / sum_s' w_s't
    coef = (W / W.sum(axis=0, keepdims=True)).sum(axis=1) / series.q
    S = (Z * coef) @ Z.T
    return 0.5 * (S + S.T)
