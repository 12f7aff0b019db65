"""Campaign orchestration: run all enabled stages and persist artifacts.

Artifacts written into the output directory:

* ``trials.csv``      one row per (family, size, trial, arm)
* ``free_energy_paths.csv``  interpolation traces, when enabled
* ``free_energy_checks.json`` sandwich/monotonicity diagnostics, when enabled
* ``perturbed.csv``   perturbed-risk sweeps D(s), when enabled
* ``manifest.json``   config hash, code version, wall time, quarantine count

Files are written to a temporary name and renamed on completion, so a run
never leaves a partial file behind.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ermu import __version__
from ermu.config import ExperimentConfig
from ermu.erm import labels_from_noise, solve_erm
from ermu.features import draw_features
from ermu.free_energy import (
    InterpolationPath,
    entropy_sandwich_check,
    free_energy_path,
    random_net,
    solution_cloud,
)
from ermu.gaussian import empirical_equivalent, sample_gaussian
from ermu.seeds import derive_seed
from ermu.universality import (
    FamilyInstance,
    TrialRow,
    build_instance,
    perturbed_sweep,
    run_trials,
    trial_row_to_csv,
)

_FMT = "{:.17g}"


def _fmt(x: float) -> str:
    return _FMT.format(x)


def _atomic_write(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


@dataclass
class CampaignSummary:
    out_dir: Path
    n_rows: int
    quarantined: int
    wall_time_s: float
    instances: list[FamilyInstance] = field(default_factory=list)


def build_instances(config: ExperimentConfig) -> list[FamilyInstance]:
    instances = []
    for spec in config.families:
        ladder = config.ladder
        if spec.kind == "neural-tangent" and spec.sizes:
            ladder = tuple(int(s["d"]) for s in spec.sizes)
        for base in ladder:
            instances.append(build_instance(spec, config.problem, base, config.master_seed))
    return instances


def run_campaign(config: ExperimentConfig, out_dir: str | Path, threads: int = 0) -> CampaignSummary:
    t0 = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or config.threads

    instances = build_instances(config)
    rows = run_trials(
        instances,
        trials=config.trials,
        master_seed=config.master_seed,
        solver_cfg=config.solver,
        n_test=config.n_test,
        threads=threads,
    )
    quarantined = sum(1 for r in rows if r.quarantined)

    def write_trials(fh):
        w = csv.writer(fh)
        w.writerow(TrialRow.CSV_HEADER.split(","))
        for row in rows:
            w.writerow(trial_row_to_csv(row))

    _atomic_write(out / "trials.csv", write_trials)

    if config.save_matrices:
        _save_matrices(instances, out)
    if config.free_energy.enabled:
        _run_free_energy_stage(config, instances, out)
    if config.perturbed.enabled:
        _run_perturbed_stage(config, instances, out)

    wall = time.monotonic() - t0
    manifest = {
        "config_hash": config.canonical_hash(),
        "version": __version__,
        "wall_time_s": wall,
        "created_unix": time.time(),
        "trials": config.trials,
        "threads": threads,
        "quarantined": quarantined,
        "families": {
            spec.id: {
                "kind": spec.kind,
                "sizes": [[inst.n, inst.p] for inst in instances if inst.spec.id == spec.id],
            }
            for spec in config.families
        },
        "config": config.normalized(),
    }
    _atomic_write(out / "manifest.json", lambda fh: json.dump(manifest, fh, indent=2, sort_keys=True))
    return CampaignSummary(
        out_dir=out,
        n_rows=len(rows),
        quarantined=quarantined,
        wall_time_s=wall,
        instances=instances,
    )


def _save_matrices(instances, out: Path) -> None:
    """Dump frozen weights and twin factors in the flat binary container."""
    from ermu.matio import save_matrix

    mat_dir = out / "matrices"
    mat_dir.mkdir(exist_ok=True)
    for inst in instances:
        stem = f"{inst.spec.id}_n{inst.n}"
        if inst.model.W is not None:
            save_matrix(mat_dir / f"{stem}_weights.ermumat", inst.model.W)
        if inst.model.sigma_half is not None:
            save_matrix(mat_dir / f"{stem}_sigma_half.ermumat", inst.model.sigma_half)
        if inst.equiv is not None:
            save_matrix(mat_dir / f"{stem}_factor.ermumat", inst.equiv.factor)


def _free_energy_data(instance: FamilyInstance, master_seed: int):
    """One coupled (X, G, eps) draw dedicated to free-energy diagnostics."""
    seed = derive_seed(master_seed, instance.spec.id, instance.n, "free-energy")
    problem = instance.problem
    X = draw_features(instance.model, instance.n, derive_seed(seed, "covariates"))
    equiv = instance.equiv if instance.equiv is not None else empirical_equivalent(X)
    G = sample_gaussian(equiv, instance.n, derive_seed(seed, "gaussian-arm"))
    eps = problem.labeler.draw_noise(instance.n, derive_seed(seed, "eps"))
    return seed, X, G, eps, equiv


def _run_free_energy_stage(config: ExperimentConfig, instances, out: Path) -> None:
    settings = config.free_energy
    trace_rows = []
    checks = []
    for instance in instances:
        seed, X, G, eps, _ = _free_energy_data(instance, config.master_seed)
        problem = instance.problem
        y = labels_from_noise(problem, X, eps)
        if settings.candidates == "solution-cloud":
            sol = solve_erm(problem, X, y, config.solver, seed=derive_seed(seed, "solve"))
            candidates = solution_cloud(
                problem, sol.theta_hat, settings.M, settings.alpha, derive_seed(seed, "cloud")
            )
        else:
            candidates = random_net(problem, settings.M, derive_seed(seed, "net"))
        grid = tuple(np.linspace(0.0, math.pi / 2.0, settings.path_points))
        path = InterpolationPath(X=X, G=G, grid=grid, eps=eps)
        beta_ref = settings.beta_grid[-1]
        for t, f in free_energy_path(path, candidates, problem, beta_ref):
            trace_rows.append(
                (t, f, instance.n, beta_ref, instance.spec.id, seed)
            )
        report = entropy_sandwich_check(candidates, problem, X, y, settings.beta_grid)
        checks.append(
            {
                "family": instance.spec.id,
                "n": instance.n,
                "betas": report.betas,
                "free_energies": report.values,
                "minimum": report.minimum,
                "sandwich_ok": report.sandwich_ok,
                "monotone_ok": report.monotone_ok,
                "offending_betas": report.offending_betas,
            }
        )

    def write_traces(fh):
        w = csv.writer(fh)
        w.writerow(["t", "f", "n", "beta", "family", "seed"])
        for t, f, n, beta, fam, seed in trace_rows:
            w.writerow([_fmt(t), _fmt(f), n, _fmt(beta), fam, seed])

    _atomic_write(out / "free_energy_paths.csv", write_traces)
    _atomic_write(
        out / "free_energy_checks.json", lambda fh: json.dump(checks, fh, indent=2, sort_keys=True)
    )


def _run_perturbed_stage(config: ExperimentConfig, instances, out: Path) -> None:
    settings = config.perturbed
    rows = []
    for instance in instances:
        seed = derive_seed(config.master_seed, instance.spec.id, instance.n, "perturbed")
        problem = instance.problem
        X = draw_features(instance.model, instance.n, derive_seed(seed, "covariates"))
        equiv = instance.equiv if instance.equiv is not None else empirical_equivalent(X)
        eps = problem.labeler.draw_noise(instance.n, derive_seed(seed, "eps"))
        y = labels_from_noise(problem, X, eps)
        sweep = perturbed_sweep(
            problem,
            X,
            y,
            equiv,
            settings.s_values + tuple(-s for s in settings.s_values),
            cfg=config.solver,
            n_test=settings.n_test,
            seed=seed,
        )
        for s in sweep.s_values:
            if s in sweep.opt_values:
                rows.append(
                    [
                        instance.spec.id,
                        instance.n,
                        instance.p,
                        seed,
                        _fmt(s),
                        _fmt(sweep.opt_values[s]),
                        _fmt(sweep.D[s]),
                        _fmt(sweep.test_at_theta0),
                        _fmt(sweep.solver_gap),
                        "",
                    ]
                )
            else:
                rows.append(
                    [instance.spec.id, instance.n, instance.p, seed, _fmt(s), "nan", "nan",
                     _fmt(sweep.test_at_theta0), _fmt(sweep.solver_gap), "quarantined"]
                )

    def write_perturbed(fh):
        w = csv.writer(fh)
        w.writerow(
            ["family", "n", "p", "seed", "s", "opt_s", "D_s", "test_at_theta0", "solver_gap", "flags"]
        )
        for row in rows:
            w.writerow(row)

    _atomic_write(out / "perturbed.csv", write_perturbed)
