"""Experiment driver: runs each configured sampler on the target, scores
the draws against closed forms (or exact target samples), and writes all
artifacts under the output directory.

Layout per run:
    <out>/config.json             the fully defaulted configuration
    <out>/metrics.csv             one row per (sampler, test function)
    <out>/<sampler>/...           per-sampler record (samples, diagnostics)
    <out>/figures/<sampler>.svg   2D scatter with mode markers

Independent sampler cells can run in parallel worker processes
(ENTFLOW_WORKERS); the coordinator alone writes the combined CSV.
"""

from __future__ import annotations

import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import baselines, data as data_mod, figures, flow, metrics as metrics_mod, targets as targets_mod
from .config import ExperimentConfig, SamplerSpec, TARGET_REGISTRY, build_target
from .metrics import TestFunction, unit_direction
from .ratio import TrainerConfig

__all__ = ["run_experiment", "WORKERS_ENV"]

WORKERS_ENV = "ENTFLOW_WORKERS"
CSV_FMT = flow.CSV_FLOAT_FMT


def _metric_direction(cfg: ExperimentConfig, dimension: int) -> np.ndarray:
    if cfg.direction == "ones":
        return unit_direction(dimension)
    raw = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(9,))).standard_normal(dimension)
    return raw / np.linalg.norm(raw)


def _flow_config(cfg: ExperimentConfig, spec: SamplerSpec, seed: int) -> flow.FlowConfig:
    return flow.FlowConfig(
        step_size=spec.step_size,
        max_iterations=spec.iterations,
        particle_count=cfg.particles,
        trainer=TrainerConfig(
            inner_steps_first=spec.inner_steps_first,
            inner_steps_warm=spec.inner_steps_warm,
            normalize_log_weights=True,
        ),
        seed=seed,
        net_depth=spec.net_depth,
        net_width=spec.net_width,
    )


def _draw_samples(
    target: targets_mod.UnnormalizedTarget,
    cfg: ExperimentConfig,
    spec: SamplerSpec,
    seed: int,
    out_dir: str,
) -> np.ndarray:
    """Run one sampler cell, persist its record, and return the draws."""
    os.makedirs(out_dir, exist_ok=True)
    if spec.step_size is None:
        raise RuntimeError(
            f"sampler {spec.name!r} has no step size for this target "
            "(documented non-convergence); set step_size explicitly to override"
        )
    if spec.kind == "regs":
        record = flow.run_flow(target, _flow_config(cfg, spec, seed))
        flow.save_run_record(record, out_dir)
        return record.final_positions
    if spec.kind == "svgd":
        samples = baselines.run_svgd(
            target, cfg.particles, spec.iterations, spec.step_size, seed=seed
        )
        stats = {"sampler": spec.name, "iterations": spec.iterations, "step_size": spec.step_size}
    else:
        chain_cfg = baselines.ChainConfig(
            step_size=spec.step_size,
            n_samples=cfg.particles,
            burn_in=spec.burn_in,
            n_chains=spec.chains,
            seed=seed,
            thin=spec.thin,
        )
        samples, stats = baselines.run_chains(spec.kind, target, chain_cfg)
        stats = {"sampler": spec.name, "step_size": spec.step_size, **stats}
    np.savetxt(os.path.join(out_dir, "samples.csv"), samples, fmt=CSV_FMT, delimiter=",")
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return samples


def _moment_rows(
    cfg: ExperimentConfig,
    target: targets_mod.UnnormalizedTarget,
    sampler_name: str,
    samples: np.ndarray,
    alpha: np.ndarray,
) -> list[dict]:
    rows = []
    for kind in cfg.metrics:
        h = TestFunction(kind, alpha)
        estimate = metrics_mod.mc_estimate(samples, h)
        row = {
            "target": cfg.target_name,
            "sampler": sampler_name,
            "h_kind": kind,
            "estimate": CSV_FMT % estimate,
            "analytic": "",
            "abs_error": "",
        }
        if target.mixture_spec is not None:
            analytic = metrics_mod.analytic_mixture_expectation(target.mixture_spec, h)
            row["analytic"] = CSV_FMT % analytic
            row["abs_error"] = CSV_FMT % abs(estimate - analytic)
        rows.append(row)
    return rows


def _run_density_cell(cfg_dict: dict, spec_dict: dict, cell_seed: int) -> list[dict]:
    """Worker entry point; rebuilds everything from plain dicts."""
    from .config import parse_config_dict

    cfg = parse_config_dict(cfg_dict)
    spec = next(s for s in cfg.samplers if s.name == spec_dict["name"])
    target = build_target(cfg.target_name, cfg.target_params)
    out_dir = os.path.join(cfg.output_dir, spec.name)
    samples = _draw_samples(target, cfg, spec, cell_seed, out_dir)
    alpha = _metric_direction(cfg, target.dimension)
    rows = _moment_rows(cfg, target, spec.name, samples, alpha)
    if cfg.figures and target.dimension == 2:
        fig_dir = os.path.join(cfg.output_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        figures.emit_scatter_figure(
            samples, target.mode_list, os.path.join(fig_dir, f"{spec.name}.svg")
        )
    if target.mode_list is not None and len(target.mode_list) > 1:
        hist = metrics_mod.nearest_mode_histogram(samples, target.mode_list)
        counts_path = os.path.join(cfg.output_dir, spec.name, "mode_counts.csv")
        np.savetxt(counts_path, hist.counts[None, :], fmt="%d", delimiter=",")
    return rows


def _blr_dataset(cfg: ExperimentConfig) -> tuple[data_mod.SparseDataset | None, dict]:
    params = cfg.target_params
    if cfg.target_name == "blr_synthetic":
        return None, params
    path = params.get("path")
    if not path:
        raise RuntimeError("blr target requires params.path pointing at a sparse dataset")
    ds = data_mod.load_sparse_dataset(path)
    if params.get("covertype"):
        ds = data_mod.subsample(ds, int(params.get("subsample", 20000)), cfg.seed)
    elif params.get("subsample"):
        ds = data_mod.subsample(ds, int(params["subsample"]), cfg.seed)
    return ds, params


def _run_blr_cell(cfg_dict: dict, spec_dict: dict, cell_seed: int) -> list[dict]:
    from .config import parse_config_dict

    cfg = parse_config_dict(cfg_dict)
    spec = next(s for s in cfg.samplers if s.name == spec_dict["name"])
    ds, params = _blr_dataset(cfg)
    gamma_rate = float(params.get("gamma_rate", 0.01))
    out_dir = os.path.join(cfg.output_dir, spec.name)
    os.makedirs(out_dir, exist_ok=True)

    accuracies = []
    if ds is None:
        splits = 1
        full, _ = data_mod.synthetic_logistic_data(
            int(params.get("n", 2000)), int(params.get("d_x", 5)), int(params.get("data_seed", 0))
        )
        cut = int(0.8 * full.n_rows)  # rows are i.i.d. by construction, no shuffle needed
        train = targets_mod.LogisticRegressionData(full.features[:cut], full.labels[:cut])
        test = targets_mod.LogisticRegressionData(full.features[cut:], full.labels[cut:])
        halves = [(train, test)]
    else:
        splits = int(params.get("splits", 10))
        fraction = float(params.get("train_fraction", 0.8))
        halves = []
        for rep in range(splits):
            tr, te = data_mod.split_train_test(ds, fraction, rep, cfg.seed)
            halves.append((data_mod.to_dense(tr), data_mod.to_dense(te)))

    for rep, (train, test) in enumerate(halves):
        posterior = targets_mod.make_blr_posterior(train, gamma_rate=gamma_rate)
        rep_seed = cell_seed + rep
        if spec.kind == "regs":
            record = flow.run_flow(posterior, _flow_config(cfg, spec, rep_seed))
            particles = record.final_positions
            if rep == 0:
                flow.save_run_record(record, out_dir)
        elif spec.kind == "svgd":
            particles = baselines.run_svgd(
                posterior, cfg.particles, spec.iterations, spec.step_size, seed=rep_seed
            )
        else:
            chain_cfg = baselines.ChainConfig(
                step_size=spec.step_size,
                n_samples=cfg.particles,
                burn_in=spec.burn_in,
                n_chains=spec.chains,
                seed=rep_seed,
                thin=spec.thin,
            )
            particles, _ = baselines.run_chains(spec.kind, posterior, chain_cfg)
        accuracies.append(metrics_mod.classification_accuracy(particles, test))

    acc = float(np.mean(accuracies))
    spread = float(np.std(accuracies, ddof=1)) if len(accuracies) > 1 else 0.0
    with open(os.path.join(out_dir, "accuracy.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"mean_accuracy": acc, "std_error": spread / np.sqrt(max(len(accuracies), 1)),
             "per_split": accuracies, "splits": splits},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    return [
        {
            "target": cfg.target_name,
            "sampler": spec.name,
            "h_kind": "accuracy",
            "estimate": CSV_FMT % acc,
            "analytic": "",
            "abs_error": "",
        }
    ]


def run_experiment(cfg: ExperimentConfig) -> int:
    """Execute all sampler cells; returns the process exit code (0/1).

    Individual sampler failures are recorded in failures.json and do not
    stop the remaining cells.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    from .config import serialize_config

    with open(os.path.join(cfg.output_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))

    info = TARGET_REGISTRY[cfg.target_name]
    cell = _run_blr_cell if info.kind == "blr" else _run_density_cell
    cfg_dict = cfg.to_dict()
    jobs = [
        (spec, np.random.SeedSequence(cfg.seed, spawn_key=(i,)).generate_state(1)[0] % (2**31))
        for i, spec in enumerate(cfg.samplers)
    ]

    rows: list[dict] = []
    failures: dict[str, str] = {}
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                spec.name: pool.submit(cell, cfg_dict, spec.to_dict(), int(seed))
                for spec, seed in jobs
            }
            for name, fut in futures.items():
                try:
                    rows.extend(fut.result())
                except Exception as exc:  # noqa: BLE001 - per-cell isolation is the contract
                    failures[name] = f"{type(exc).__name__}: {exc}"
    else:
        for spec, seed in jobs:
            try:
                rows.extend(cell(cfg_dict, spec.to_dict(), int(seed)))
            except Exception as exc:  # noqa: BLE001
                failures[spec.name] = f"{type(exc).__name__}: {exc}"
                traceback.print_exc()

    # reference rows from exact target samples, when the target admits them
    if info.kind != "blr":
        target = build_target(cfg.target_name, cfg.target_params)
        if target.exact_sampler is not None and "accuracy" not in cfg.metrics:
            exact = targets_mod.sample_exact(target, cfg.particles, cfg.seed)
            alpha = _metric_direction(cfg, target.dimension)
            rows.extend(_moment_rows(cfg, target, "target", exact, alpha))
            if cfg.figures and target.dimension == 2:
                fig_dir = os.path.join(cfg.output_dir, "figures")
                os.makedirs(fig_dir, exist_ok=True)
                figures.emit_scatter_figure(
                    exact, target.mode_list, os.path.join(fig_dir, "target.svg")
                )

    order = {name: i for i, name in enumerate([s.name for s in cfg.samplers] + ["target"])}
    rows.sort(key=lambda r: (order.get(r["sampler"], 99), r["h_kind"]))
    metrics_mod.write_metric_table(rows, os.path.join(cfg.output_dir, "metrics.csv"))
    if failures:
        with open(os.path.join(cfg.output_dir, "failures.json"), "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return 1
    return 0
