"""Comparison samplers: unadjusted / Metropolis-adjusted Langevin chains
and the kernelized Stein particle update, plus a multi-chain harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .targets import UnnormalizedTarget

__all__ = [
    "ChainConfig",
    "ula_step",
    "mala_step",
    "mala_log_accept_ratio",
    "svgd_step",
    "median_bandwidth",
    "run_chains",
    "run_svgd",
]


@dataclass(frozen=True)
class ChainConfig:
    """Multi-chain MCMC settings.

    Each chain contributes ceil(n_samples / n_chains) consecutive
    post-burn-in states; the pooled draw is truncated to n_samples.
    """

    step_size: float
    n_samples: int
    burn_in: int = 1000
    n_chains: int = 1
    init: str | tuple | np.ndarray = "gaussian"
    seed: int = 0
    thin: int = 1

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def per_chain(self) -> int:
        return math.ceil(self.n_samples / self.n_chains)


def _grad(target: UnnormalizedTarget, x: np.ndarray) -> np.ndarray:
    g = np.asarray(target.grad_log_u(x), dtype=float)
    if not np.isfinite(g).all():
        raise FloatingPointError("non-finite gradient of log u")
    return g


def ula_step(target: UnnormalizedTarget, x: np.ndarray, s: float, noise: np.ndarray) -> np.ndarray:
    """x + s * grad log u(x) + sqrt(2 s) * noise; works on rows too."""
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x.shape:
        raise ValueError("noise must match the state shape")
    return x + s * _grad(target, x) + np.sqrt(2.0 * s) * noise


def _mala_accept_terms(
    x: np.ndarray,
    proposal: np.ndarray,
    grad_x: np.ndarray,
    grad_p: np.ndarray,
    lu_x: np.ndarray,
    lu_p: np.ndarray,
    s: float,
) -> np.ndarray:
    # proposal density is N(.; src + s grad(src), 2s I), constants cancel;
    # grouped so a zero-displacement proposal cancels exactly
    fwd = -np.sum((proposal - x - s * grad_x) ** 2, axis=1) / (4.0 * s)
    rev = -np.sum((x - proposal - s * grad_p) ** 2, axis=1) / (4.0 * s)
    return (lu_p - lu_x) + (rev - fwd)


def mala_log_accept_ratio(
    target: UnnormalizedTarget, x: np.ndarray, proposal: np.ndarray, s: float
) -> np.ndarray:
    """log [u(x') q(x|x')] - log [u(x) q(x'|x)] for the Langevin proposal q."""
    xb = np.atleast_2d(np.asarray(x, dtype=float))
    pb = np.atleast_2d(np.asarray(proposal, dtype=float))
    lu_x = np.atleast_1d(np.asarray(target.log_u(xb), dtype=float))
    lu_p = np.atleast_1d(np.asarray(target.log_u(pb), dtype=float))
    return _mala_accept_terms(xb, pb, _grad(target, xb), _grad(target, pb), lu_x, lu_p, s)


def mala_step(
    target: UnnormalizedTarget, x: np.ndarray, s: float, rng: np.random.Generator
) -> tuple[np.ndarray, bool]:
    """One Metropolis-adjusted Langevin step; returns (state, accepted).

    A non-finite acceptance log-ratio counts as a rejection.
    """
    x = np.asarray(x, dtype=float)
    proposal = ula_step(target, x, s, rng.standard_normal(x.shape))
    log_ratio = float(mala_log_accept_ratio(target, x, proposal, s)[0])
    if not np.isfinite(log_ratio):
        return x, False
    if np.log(rng.uniform()) < min(0.0, log_ratio):
        return proposal, True
    return x, False


def median_bandwidth(cloud: np.ndarray) -> float:
    """Squared median pairwise distance over log n (the usual heuristic)."""
    n = cloud.shape[0]
    if n < 2:
        raise ValueError("bandwidth needs at least 2 particles")
    sq = _pairwise_sq_dists(cloud)
    med = float(np.median(np.sqrt(sq[np.triu_indices(n, k=1)])))
    h = med**2 / np.log(n)
    if h <= 0:
        raise ValueError("degenerate particle cloud: median pairwise distance is zero")
    return h


def _pairwise_sq_dists(cloud: np.ndarray) -> np.ndarray:
    norms = np.einsum("nd,nd->n", cloud, cloud)
    sq = norms[:, None] + norms[None, :] - 2.0 * (cloud @ cloud.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def svgd_step(target: UnnormalizedTarget, cloud: np.ndarray, step: float) -> np.ndarray:
    """One kernelized Stein update with the median-heuristic RBF bandwidth.

    update_i = (1/n) sum_j [k(x_j, x_i) grad log u(x_j) + grad_{x_j} k(x_j, x_i)]
    """
    cloud = np.asarray(cloud, dtype=float)
    n = cloud.shape[0]
    grads = np.atleast_2d(_grad(target, cloud))
    if n == 1:
        return cloud + step * grads  # kernel is 1 at zero distance, no repulsion
    h = median_bandwidth(cloud)
    kernel = np.exp(-_pairwise_sq_dists(cloud) / h)
    drive = kernel @ grads
    # sum_j grad_{x_j} k(x_j, x_i) = (2/h) sum_j k_ji (x_i - x_j)
    repulse = (2.0 / h) * (cloud * kernel.sum(axis=1)[:, None] - kernel @ cloud)
    return cloud + step * (drive + repulse) / n


def _init_states(
    cfg: ChainConfig, dimension: int, rng: np.random.Generator
) -> np.ndarray:
    if isinstance(cfg.init, str):
        if cfg.init == "gaussian":
            return rng.standard_normal((cfg.n_chains, dimension))
        if cfg.init == "zeros":
            return np.zeros((cfg.n_chains, dimension))
        raise ValueError(f"unknown init {cfg.init!r}")
    vec = np.asarray(cfg.init, dtype=float)
    if vec.shape != (dimension,):
        raise ValueError(f"init vector has length {vec.shape[0]}, dimension is {dimension}")
    return np.tile(vec, (cfg.n_chains, 1))


def run_chains(
    sampler: str, target: UnnormalizedTarget, cfg: ChainConfig
) -> tuple[np.ndarray, dict]:
    """Run independent ULA or MALA chains and pool their post-burn-in states.

    Returns (samples, stats); stats records the MALA acceptance rate and
    the count of non-finite acceptance ratios (treated as rejections).
    """
    if sampler not in ("ula", "mala"):
        raise ValueError(f"unknown chain sampler {sampler!r}")
    rng = np.random.default_rng(cfg.seed)
    d = target.dimension
    states = _init_states(cfg, d, rng)
    keep = cfg.per_chain
    total_steps = cfg.burn_in + cfg.thin * keep
    collected = np.empty((cfg.n_chains, keep, d))
    accepted = 0
    proposals = 0
    nonfinite = 0

    s = cfg.step_size
    grad_states = _grad(target, states) if sampler == "mala" else None
    lu_states = (
        np.atleast_1d(np.asarray(target.log_u(states), dtype=float)) if sampler == "mala" else None
    )
    for step in range(total_steps):
        noise = rng.standard_normal(states.shape)
        if sampler == "ula":
            try:
                states = ula_step(target, states, s, noise)
            except FloatingPointError as exc:
                raise FloatingPointError(f"{exc} (step {step})") from exc
        else:
            proposal = states + s * grad_states + np.sqrt(2.0 * s) * noise
            grad_prop = _grad(target, proposal)
            lu_prop = np.atleast_1d(np.asarray(target.log_u(proposal), dtype=float))
            log_ratio = _mala_accept_terms(
                states, proposal, grad_states, grad_prop, lu_states, lu_prop, s
            )
            bad = ~np.isfinite(log_ratio)
            nonfinite += int(bad.sum())
            log_ratio = np.where(bad, -np.inf, log_ratio)
            accept = np.log(rng.uniform(size=cfg.n_chains)) < log_ratio
            mask = accept[:, None]
            states = np.where(mask, proposal, states)
            grad_states = np.where(mask, grad_prop, grad_states)
            lu_states = np.where(accept, lu_prop, lu_states)
            accepted += int(accept.sum())
            proposals += cfg.n_chains
        past_burn = step - cfg.burn_in
        if past_burn >= 0 and past_burn % cfg.thin == 0:
            idx = past_burn // cfg.thin
            if idx < keep:
                collected[:, idx, :] = states

    samples = collected.reshape(cfg.n_chains * keep, d)[: cfg.n_samples]
    stats = {"n_chains": cfg.n_chains, "per_chain": keep}
    if sampler == "mala":
        stats["acceptance_rate"] = accepted / proposals if proposals else float("nan")
        stats["nonfinite_log_ratios"] = nonfinite
    return samples, stats


def run_svgd(
    target: UnnormalizedTarget,
    n: int,
    iterations: int,
    step: float,
    seed: int = 0,
    init_mean: float = 0.0,
    init_scale: float = 1.0,
) -> np.ndarray:
    """Iterate the Stein update from a Gaussian initialization."""
    if n < 2:
        raise ValueError("need at least 2 particles")
    rng = np.random.default_rng(seed)
    cloud = init_mean + np.sqrt(init_scale) * rng.standard_normal((n, target.dimension))
    for _ in range(iterations):
        cloud = svgd_step(target, cloud, step)
    return cloud
