"""Bregman-score estimation of the log density ratio log(u/q).

Given particles from an evolving distribution q and reference samples from
a known distribution w, the scalar network D is fit by minimizing the
empirical score

    mean_i exp(D(X_i)) - mean_j (u(Y_j) / w(Y_j)) * D(Y_j),

whose population minimizer is D = log(u/q) up to the (q, u)-null sets.
The gradient of the fitted D is the velocity field used by the particle
flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import nn

__all__ = [
    "RatioBatch",
    "TrainerConfig",
    "GeneralBregmanSpec",
    "RatioTrainingError",
    "bregman_loss_log",
    "bregman_loss_general",
    "loss_grad",
    "train_ratio",
    "velocity_field",
]


class RatioTrainingError(RuntimeError):
    """Raised when the inner optimization diverges.

    Carries the last finite loss observed (or None if the very first
    evaluation was already non-finite) and the step index.
    """

    def __init__(self, message: str, last_finite_loss: float | None, step: int):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss
        self.step = step


@dataclass(frozen=True)
class RatioBatch:
    """One training batch: particle points, reference points, log u/w weights."""

    particle_points: np.ndarray  # (n, d), samples from the evolving q
    reference_points: np.ndarray  # (m, d), samples from w
    importance_log_weights: np.ndarray  # (m,), log u(Y_j) - log w(Y_j)

    def __post_init__(self):
        p = np.asarray(self.particle_points, dtype=float)
        r = np.asarray(self.reference_points, dtype=float)
        lw = np.asarray(self.importance_log_weights, dtype=float)
        object.__setattr__(self, "particle_points", p)
        object.__setattr__(self, "reference_points", r)
        object.__setattr__(self, "importance_log_weights", lw)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("particle_points must be a non-empty (n, d) array")
        if r.ndim != 2 or r.shape[0] < 1:
            raise ValueError("reference_points must be a non-empty (m, d) array")
        if p.shape[1] != r.shape[1]:
            raise ValueError("particle and reference dimensions differ")
        if lw.shape != (r.shape[0],):
            raise ValueError("one log weight per reference point is required")
        if not (np.isfinite(p).all() and np.isfinite(r).all() and np.isfinite(lw).all()):
            raise ValueError("batch entries must all be finite")

    @property
    def n(self) -> int:
        return self.particle_points.shape[0]

    @property
    def m(self) -> int:
        return self.reference_points.shape[0]


@dataclass(frozen=True)
class TrainerConfig:
    """Inner-loop settings for fitting the ratio network.

    ``minibatch_size`` may be a positive int, "full", or "auto" (full batch
    up to 5000 points, else 1024).  ``normalize_log_weights`` recenters the
    importance log weights by their log-mean-exp before training; that only
    shifts the fitted D by a constant (the estimand is defined up to the
    unknown normalizing constant) and keeps the exp terms well scaled, so
    the particle flow enables it by default.
    """

    learning_rate: float = 5e-4
    inner_steps_first: int = 200
    inner_steps_warm: int = 20
    exp_clamp: float = 30.0
    weight_log_clamp: float = 30.0
    minibatch_size: int | str = "auto"
    seed: int = 0
    optimizer: str = "adam"
    normalize_log_weights: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.inner_steps_first < 0 or self.inner_steps_warm < 0:
            raise ValueError("inner step counts must be non-negative")
        if self.exp_clamp < 1 or self.weight_log_clamp < 1:
            raise ValueError("clamps must be >= 1")
        if isinstance(self.minibatch_size, str):
            if self.minibatch_size not in ("full", "auto"):
                raise ValueError("minibatch_size must be a positive int, 'full', or 'auto'")
        elif self.minibatch_size < 1:
            raise ValueError("minibatch_size must be positive")

    def resolve_minibatch(self, n: int) -> int | None:
        """Per-side minibatch size, or None for full batch."""
        if self.minibatch_size == "full":
            return None
        if self.minibatch_size == "auto":
            return None if n <= 5000 else 1024
        return int(self.minibatch_size)


@dataclass(frozen=True)
class GeneralBregmanSpec:
    """Convex generator for the ratio-scale Bregman score.

    kl:        g(x) = x log x - x   (cancels the normalizing constant)
    quadratic: g(x) = x^2 / 2
    """

    g_name: str = "kl"

    def __post_init__(self):
        if self.g_name not in ("kl", "quadratic"):
            raise ValueError(f"unknown Bregman generator {self.g_name!r}")


def _clamp(x: np.ndarray, c: float) -> np.ndarray:
    return np.clip(x, -c, c)


def bregman_loss_log(
    net: nn.RatioNetwork,
    batch: RatioBatch,
    exp_clamp: float = 30.0,
    weight_log_clamp: float = 30.0,
) -> float:
    """Empirical log-scale Bregman score of the network on a batch.

    mean exp(clamp(D(X))) - mean exp(clamp(log u/w)) * D(Y).
    """
    d_part = nn.forward(net, batch.particle_points)
    d_ref = nn.forward(net, batch.reference_points)
    first = float(np.mean(np.exp(_clamp(d_part, exp_clamp))))
    second = float(np.mean(np.exp(_clamp(batch.importance_log_weights, weight_log_clamp)) * d_ref))
    loss = first - second
    if not np.isfinite(loss):
        term = "particle exp term" if not np.isfinite(first) else "weighted reference term"
        raise FloatingPointError(f"Bregman loss overflowed in the {term}")
    return loss


def bregman_loss_general(
    ratio_at_q: np.ndarray,
    ratio_at_w: np.ndarray,
    u_over_w: np.ndarray,
    spec: GeneralBregmanSpec = GeneralBregmanSpec("kl"),
) -> float:
    """Empirical Bregman score on the ratio scale for a generator g.

    mean_q [g'(R)R - g(R)] - mean_w [(u/w) g'(R)].  For the kl generator
    this reduces algebraically to ``bregman_loss_log`` with D = log R.
    """
    rq = np.asarray(ratio_at_q, dtype=float)
    rw = np.asarray(ratio_at_w, dtype=float)
    uw = np.asarray(u_over_w, dtype=float)
    if rw.shape != uw.shape:
        raise ValueError("one u/w weight per reference ratio value is required")
    if spec.g_name == "kl":
        if np.any(rq <= 0) or np.any(rw <= 0):
            raise ValueError("kl generator needs strictly positive ratio values")
        # g'(R)R - g(R) = R;  g'(R) = log R
        return float(np.mean(rq) - np.mean(uw * np.log(rw)))
    # quadratic: g'(R)R - g(R) = R^2/2;  g'(R) = R
    return float(np.mean(rq**2) / 2.0 - np.mean(uw * rw))


def _loss_and_grads(
    net: nn.RatioNetwork,
    particles: np.ndarray,
    references: np.ndarray,
    log_weights: np.ndarray,
    exp_clamp: float,
    weight_log_clamp: float,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Shared forward pass for the loss and its parameter gradient."""
    n, m = particles.shape[0], references.shape[0]
    stacked = np.vstack([particles, references])
    cached = nn._forward_pass(net, stacked)
    d_all = cached[0][-1][:, 0]
    d_part, d_ref = d_all[:n], d_all[n:]

    exp_part = np.exp(_clamp(d_part, exp_clamp))
    weights = np.exp(_clamp(log_weights, weight_log_clamp))
    loss = float(exp_part.mean() - (weights * d_ref).mean())

    # clamped exp terms are flat, so their upstream gradient is zero
    g_part = np.where(np.abs(d_part) <= exp_clamp, exp_part, 0.0) / n
    g_ref = -weights / m
    grads = nn.grad_params(net, np.concatenate([g_part, g_ref]), stacked, _pass=cached)
    return loss, grads


def loss_grad(
    net: nn.RatioNetwork,
    batch: RatioBatch,
    exp_clamp: float = 30.0,
    weight_log_clamp: float = 30.0,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradient of ``bregman_loss_log`` at the current network."""
    loss, grads = _loss_and_grads(
        net,
        batch.particle_points,
        batch.reference_points,
        batch.importance_log_weights,
        exp_clamp,
        weight_log_clamp,
    )
    if not np.isfinite(loss):
        raise FloatingPointError("Bregman loss overflowed while computing gradients")
    return grads


def _log_mean_exp(x: np.ndarray) -> float:
    return float(logsumexp(x) - np.log(x.shape[0]))


def train_ratio(
    net: nn.RatioNetwork,
    batch: RatioBatch,
    cfg: TrainerConfig,
    warm_start: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[nn.RatioNetwork, float]:
    """Fit the ratio network on one batch; returns (best network, its loss).

    Runs ``inner_steps_first`` optimizer steps on a cold start and
    ``inner_steps_warm`` on a warm start, tracking the best loss seen.  The
    selected network never scores worse than the input one on the full
    batch.  Deterministic given ``cfg.seed`` (or an explicit generator).
    """
    steps = cfg.inner_steps_warm if warm_start else cfg.inner_steps_first
    if cfg.normalize_log_weights:
        lw = batch.importance_log_weights
        batch = replace(batch, importance_log_weights=lw - _log_mean_exp(lw))
    if steps == 0:
        return net, bregman_loss_log(net, batch, cfg.exp_clamp, cfg.weight_log_clamp)

    mb = cfg.resolve_minibatch(max(batch.n, batch.m))
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    state = nn.init_optimizer(net, cfg.learning_rate, method=cfg.optimizer)

    best_net, best_loss = net, np.inf
    last_finite: float | None = None
    bad_streak = 0
    current = net
    for step in range(steps):
        if mb is None:
            parts, refs, lws = batch.particle_points, batch.reference_points, batch.importance_log_weights
        else:
            pi = rng.integers(0, batch.n, size=min(mb, batch.n))
            ri = rng.integers(0, batch.m, size=min(mb, batch.m))
            parts = batch.particle_points[pi]
            refs = batch.reference_points[ri]
            lws = batch.importance_log_weights[ri]
        loss, grads = _loss_and_grads(current, parts, refs, lws, cfg.exp_clamp, cfg.weight_log_clamp)
        if not np.isfinite(loss):
            bad_streak += 1
            if bad_streak >= 3:
                raise RatioTrainingError(
                    f"loss non-finite for {bad_streak} consecutive steps (step {step})",
                    last_finite,
                    step,
                )
            continue
        bad_streak = 0
        last_finite = loss
        if loss < best_loss:
            best_loss, best_net = loss, current
        current, state = nn.optimizer_step(current, state, grads)

    if mb is None:
        final_loss = bregman_loss_log(current, batch, cfg.exp_clamp, cfg.weight_log_clamp)
        if final_loss < best_loss:
            best_loss, best_net = final_loss, current
    else:
        # minibatch losses are noisy; re-score the candidates on the full batch
        tracked = best_net
        best_loss, best_net = np.inf, net
        for cand in (net, tracked, current):
            full = bregman_loss_log(cand, batch, cfg.exp_clamp, cfg.weight_log_clamp)
            if full < best_loss:
                best_loss, best_net = full, cand
    return best_net, float(best_loss)


def velocity_field(net: nn.RatioNetwork, points: np.ndarray) -> np.ndarray:
    """Gradient of the fitted log ratio at each point: the particle velocity."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be an (n, d) array")
    if not np.isfinite(pts).all():
        raise ValueError("points must be finite")
    return nn.grad_input_batch(net, pts)
