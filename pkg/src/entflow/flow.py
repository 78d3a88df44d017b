"""Particle flow driven by neural log-density-ratio velocity fields.

Each outer iteration: refresh the reference distribution w, draw reference
samples, compute importance log weights log u(Y) - log w(Y), fit the ratio
network (warm-started after the first iteration), evaluate its input
gradient at the particles, and take one forward-Euler step of size s.
Iterating moves the particle cloud from the Gaussian initialization toward
the target, following the steepest-descent direction of relative entropy.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky

from . import nn
from .ratio import RatioBatch, RatioTrainingError, TrainerConfig, train_ratio, velocity_field
from .targets import LOG_2PI, UnnormalizedTarget

__all__ = [
    "ParticleCloud",
    "FlowConfig",
    "ReferenceDistribution",
    "RunRecord",
    "FlowDivergedError",
    "init_particles",
    "fit_reference",
    "euler_step",
    "run_flow",
    "save_run_record",
    "load_run_record",
]

COV_EIGEN_FLOOR = 1e-6
CSV_FLOAT_FMT = "%.17g"


class FlowDivergedError(RuntimeError):
    """Particle positions or velocities went non-finite; carries the record
    accumulated up to the last good iteration."""

    def __init__(self, message: str, record: "RunRecord"):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class ParticleCloud:
    positions: np.ndarray  # (n, d)
    iteration: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 2:
            raise ValueError("positions must be an (n, d) array")
        if not np.isfinite(pos).all():
            raise ValueError("positions must be finite")
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class FlowConfig:
    """Settings for one flow run; time horizon is step_size * max_iterations."""

    step_size: float = 5e-4
    max_iterations: int = 10000
    particle_count: int = 2000
    init_mean: float | tuple | np.ndarray = 0.0
    init_cov_scale: float = 1.0
    reference_mode: str = "moment_matched"
    reference_inflation: float = 2.0
    trainer: TrainerConfig = field(
        default_factory=lambda: TrainerConfig(normalize_log_weights=True)
    )
    snapshot_every: int = 500
    seed: int = 0
    net_depth: int = 4
    net_width: int = 128
    reference_count: int | None = None  # reference draws per iteration; None -> particle_count
    redraw_reference: bool = True
    dimension: int | None = None  # inferred from init_mean or the target if None

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if self.init_cov_scale < 0:
            raise ValueError("init_cov_scale must be non-negative")
        if self.reference_mode not in ("moment_matched", "fixed_gaussian"):
            raise ValueError(f"unknown reference_mode {self.reference_mode!r}")
        if self.reference_inflation <= 0:
            raise ValueError("reference_inflation must be positive")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")

    def resolved_dimension(self) -> int | None:
        mean = np.asarray(self.init_mean, dtype=float)
        if mean.ndim == 1:
            return mean.shape[0]
        return self.dimension

    def resolved_init_mean(self, d: int) -> np.ndarray:
        mean = np.asarray(self.init_mean, dtype=float)
        if mean.ndim == 0:
            return np.full(d, float(mean))
        if mean.shape != (d,):
            raise ValueError(f"init_mean has length {mean.shape[0]}, dimension is {d}")
        return mean


@dataclass(frozen=True)
class ReferenceDistribution:
    """Gaussian w with cached Cholesky factor; samples and exact log density."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        chol = cholesky(cov, lower=True)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_log_det", 2.0 * np.log(np.diag(chol)).sum())

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x: np.ndarray) -> float | np.ndarray:
        xb = np.asarray(x, dtype=float)
        single = xb.ndim == 1
        xb = np.atleast_2d(xb)
        diff = xb - self.mean
        maha = np.einsum("nd,nd->n", diff, cho_solve((self._chol, True), diff.T).T)
        out = -0.5 * (self.dimension * LOG_2PI + self._log_det + maha)
        return float(out[0]) if single else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dimension)) @ self._chol.T


def _stream_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=stream))


def init_particles(cfg: FlowConfig, dimension: int | None = None) -> ParticleCloud:
    """Draw n particles from N(init_mean, init_cov_scale * I) at iteration 0."""
    d = dimension if dimension is not None else cfg.resolved_dimension()
    if d is None:
        raise ValueError("dimension is undetermined; set init_mean to a vector or pass dimension")
    mean = cfg.resolved_init_mean(d)
    rng = _stream_rng(cfg.seed, 0)
    pos = mean + np.sqrt(cfg.init_cov_scale) * rng.standard_normal((cfg.particle_count, d))
    return ParticleCloud(pos, iteration=0)


def fit_reference(cloud: ParticleCloud | np.ndarray, inflation: float) -> ReferenceDistribution:
    """Moment-matched Gaussian: inflated sample covariance, eigenvalue-floored."""
    pos = cloud.positions if isinstance(cloud, ParticleCloud) else np.asarray(cloud, dtype=float)
    if pos.shape[0] < 2:
        raise ValueError("need at least 2 particles to fit a reference distribution")
    mean = pos.mean(axis=0)
    centered = pos - mean
    cov = centered.T @ centered / (pos.shape[0] - 1)
    cov = inflation * (cov + COV_EIGEN_FLOOR * np.eye(pos.shape[1]))
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, COV_EIGEN_FLOOR)
    cov = (eigvecs * eigvals) @ eigvecs.T
    cov = 0.5 * (cov + cov.T)
    return ReferenceDistribution(mean, cov)


def reference_batch(
    target: UnnormalizedTarget,
    cloud: ParticleCloud,
    reference: ReferenceDistribution,
    count: int,
    rng: np.random.Generator,
) -> RatioBatch:
    """Draw reference points and attach raw log u(Y) - log w(Y) weights.

    Scaling u by a constant shifts every log weight by exactly that
    constant; the weights are left unnormalized here so that property is
    observable (the trainer may recenter them later).
    """
    points = reference.sample(count, rng)
    log_weights = np.asarray(target.log_u(points)) - np.asarray(reference.log_density(points))
    return RatioBatch(cloud.positions, points, log_weights)


def euler_step(cloud: ParticleCloud, velocities: np.ndarray, s: float) -> ParticleCloud:
    """positions += s * velocities, iteration += 1."""
    v = np.asarray(velocities, dtype=float)
    if v.shape != cloud.positions.shape:
        raise ValueError(f"velocities {v.shape} do not match positions {cloud.positions.shape}")
    if s < 0:
        raise ValueError("step size must be non-negative")
    bad = ~np.isfinite(v).all(axis=1)
    if bad.any():
        raise ValueError(f"non-finite velocity for particle {int(np.flatnonzero(bad)[0])}")
    return ParticleCloud(cloud.positions + s * v, cloud.iteration + 1)


@dataclass
class RunRecord:
    """Everything one run produced: config, diagnostics, snapshots, samples."""

    target_name: str
    config: FlowConfig
    seed: int
    losses: np.ndarray
    mean_sq_velocity: np.ndarray
    snapshots: list[tuple[int, np.ndarray]]
    final_positions: np.ndarray
    aborted_at: int | None = None

    @property
    def iterations_run(self) -> int:
        return len(self.losses)


def run_flow(
    target: UnnormalizedTarget,
    cfg: FlowConfig,
    net: nn.RatioNetwork | None = None,
) -> RunRecord:
    """Execute the full flow loop and return its record.

    Raises ``RatioTrainingError`` (annotated with the iteration) if the
    inner optimization diverges, and ``FlowDivergedError`` carrying the
    partial record if velocities or positions go non-finite.
    """
    d = target.dimension
    cfg_d = cfg.resolved_dimension()
    if cfg_d is not None and cfg_d != d:
        raise ValueError(f"config dimension {cfg_d} != target dimension {d}")
    cloud = init_particles(cfg, dimension=d)
    if net is None:
        net = nn.network_init(d, cfg.net_depth, cfg.net_width, seed=cfg.seed)
    ref_rng = _stream_rng(cfg.seed, 1)
    train_rng = _stream_rng(cfg.seed, 2)
    m = cfg.reference_count if cfg.reference_count is not None else cfg.particle_count

    fixed_reference = None
    if cfg.reference_mode == "fixed_gaussian":
        fixed_reference = ReferenceDistribution(
            cfg.resolved_init_mean(d),
            cfg.reference_inflation * max(cfg.init_cov_scale, COV_EIGEN_FLOOR) * np.eye(d),
        )

    losses: list[float] = []
    msv: list[float] = []
    snapshots: list[tuple[int, np.ndarray]] = [(0, cloud.positions.copy())]

    def record(aborted_at: int | None = None) -> RunRecord:
        return RunRecord(
            target_name=target.name,
            config=cfg,
            seed=cfg.seed,
            losses=np.array(losses),
            mean_sq_velocity=np.array(msv),
            snapshots=snapshots,
            final_positions=cloud.positions.copy(),
            aborted_at=aborted_at,
        )

    reference = fixed_reference
    cached = None
    for k in range(cfg.max_iterations):
        if cfg.reference_mode == "moment_matched":
            reference = fit_reference(cloud, cfg.reference_inflation)
        if cfg.redraw_reference or cached is None:
            cached = reference_batch(target, cloud, reference, m, ref_rng)
            batch = cached
        else:
            batch = RatioBatch(
                cloud.positions, cached.reference_points, cached.importance_log_weights
            )
        try:
            net, loss = train_ratio(net, batch, cfg.trainer, warm_start=(k > 0), rng=train_rng)
        except RatioTrainingError as exc:
            raise RatioTrainingError(
                f"inner training diverged at flow iteration {k}: {exc}",
                exc.last_finite_loss,
                exc.step,
            ) from exc
        velocities = velocity_field(net, cloud.positions)
        if not np.isfinite(velocities).all():
            raise FlowDivergedError(f"non-finite velocities at iteration {k}", record(k))
        losses.append(loss)
        msv.append(float(np.mean(np.einsum("nd,nd->n", velocities, velocities))))
        cloud = euler_step(cloud, velocities, cfg.step_size)
        if not np.isfinite(cloud.positions).all():
            raise FlowDivergedError(f"non-finite positions after iteration {k}", record(k))
        if cloud.iteration % cfg.snapshot_every == 0 or cloud.iteration == cfg.max_iterations:
            snapshots.append((cloud.iteration, cloud.positions.copy()))

    return record()


def _config_to_jsonable(cfg: FlowConfig) -> dict:
    blob = asdict(cfg)
    mean = np.asarray(cfg.init_mean)
    blob["init_mean"] = mean.tolist() if mean.ndim else float(mean)
    return blob


def save_run_record(rec: RunRecord, out_dir: str | os.PathLike) -> None:
    """Serialize to a directory: config.json, diagnostics.csv, snapshot CSVs."""
    out = os.fspath(out_dir)
    os.makedirs(out, exist_ok=True)
    snap_dir = os.path.join(out, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)

    meta = {
        "target": rec.target_name,
        "seed": rec.seed,
        "aborted_at": rec.aborted_at,
        "config": _config_to_jsonable(rec.config),
    }
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(out, "diagnostics.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "mean_sq_velocity"])
        for i, (loss, v) in enumerate(zip(rec.losses, rec.mean_sq_velocity)):
            writer.writerow([i, CSV_FLOAT_FMT % loss, CSV_FLOAT_FMT % v])

    for iteration, pos in rec.snapshots:
        path = os.path.join(snap_dir, f"snapshot_{iteration:07d}.csv")
        np.savetxt(path, pos, fmt=CSV_FLOAT_FMT, delimiter=",")
    np.savetxt(os.path.join(out, "samples.csv"), rec.final_positions, fmt=CSV_FLOAT_FMT, delimiter=",")


def load_run_record(out_dir: str | os.PathLike) -> RunRecord:
    out = os.fspath(out_dir)
    with open(os.path.join(out, "config.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    blob = meta["config"]
    blob["trainer"] = TrainerConfig(**blob["trainer"])
    init_mean = blob["init_mean"]
    blob["init_mean"] = tuple(init_mean) if isinstance(init_mean, list) else init_mean
    cfg = FlowConfig(**blob)

    iterations, losses, msv = [], [], []
    with open(os.path.join(out, "diagnostics.csv"), "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            iterations.append(int(row["iteration"]))
            losses.append(float(row["loss"]))
            msv.append(float(row["mean_sq_velocity"]))

    snap_dir = os.path.join(out, "snapshots")
    snapshots = []
    for name in sorted(os.listdir(snap_dir)):
        it = int(name.removesuffix(".csv").removeprefix("snapshot_"))
        snapshots.append((it, np.loadtxt(os.path.join(snap_dir, name), delimiter=",", ndmin=2)))
    final = np.loadtxt(os.path.join(out, "samples.csv"), delimiter=",", ndmin=2)
    return RunRecord(
        target_name=meta["target"],
        config=cfg,
        seed=meta["seed"],
        losses=np.array(losses),
        mean_sq_velocity=np.array(msv),
        snapshots=snapshots,
        final_positions=final,
        aborted_at=meta["aborted_at"],
    )
