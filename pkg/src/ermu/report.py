"""Turn trial CSVs into a universality report plus plot-ready CSVs.

Per family and size the report carries the signed mean train gap with a
bootstrap CI, the bounded-Lipschitz gap over the test-function dictionary,
the two-sample KS statistic against its simulated null quantile, and the
test-risk gap with a combined standard error. The campaign-level verdict is
the operational criterion: the CI covers zero at the largest size and the
absolute mean gap does not increase along the ladder (one inversion within
one standard error is tolerated).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ermu.errors import InvalidArgumentError
from ermu.seeds import derive_seed
from ermu.stats import bl_gap, bootstrap_mean_ci, ks_null_quantile, ks_statistic
from ermu.universality import TrialRow, trial_row_from_csv

_REPORT_SEED = 0x52505254  # fixed; reports must be reproducible from CSVs alone


def read_trials_csv(path: str | Path) -> list[TrialRow]:
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TrialRow.CSV_HEADER.split(","):
            raise InvalidArgumentError(f"{path}: unexpected header {header}")
        rows = []
        for i, fields in enumerate(reader, start=2):
            if len(fields) != 12:
                raise InvalidArgumentError(f"{path}: line {i}: expected 12 fields, got {len(fields)}")
            try:
                rows.append(trial_row_from_csv(fields))
            except ValueError as exc:
                raise InvalidArgumentError(f"{path}: line {i}: {exc}") from exc
    return rows


@dataclass
class PairedSize:
    n: int
    p: int
    train_x: np.ndarray
    train_g: np.ndarray
    test_x_at_x: np.ndarray
    test_x_se: np.ndarray
    test_g_at_g: np.ndarray
    test_g_se: np.ndarray
    quarantined: int


def _pair_rows(rows: list[TrialRow]) -> dict[str, list[PairedSize]]:
    by_family: dict[str, dict[int, dict[int, dict[str, TrialRow]]]] = {}
    family_order: list[str] = []
    for row in rows:
        if row.family not in by_family:
            by_family[row.family] = {}
            family_order.append(row.family)
        by_family[row.family].setdefault(row.n, {}).setdefault(row.trial, {})[row.arm] = row
    out: dict[str, list[PairedSize]] = {}
    for family in family_order:
        sizes = []
        for n in sorted(by_family[family]):
            trials = by_family[family][n]
            tx, tg, xx, xs, gg, gs = [], [], [], [], [], []
            quarantined = 0
            p = 0
            for t in sorted(trials):
                pair = trials[t]
                if "x" not in pair or "g" not in pair:
                    quarantined += 1
                    continue
                if pair["x"].quarantined or pair["g"].quarantined:
                    quarantined += 1
                    continue
                p = pair["x"].p
                tx.append(pair["x"].train_opt)
                tg.append(pair["g"].train_opt)
                xx.append(pair["x"].test_x)
                xs.append(pair["x"].test_x_se)
                gg.append(pair["g"].test_g)
                gs.append(pair["g"].test_g_se)
            sizes.append(
                PairedSize(
                    n=n,
                    p=p,
                    train_x=np.array(tx),
                    train_g=np.array(tg),
                    test_x_at_x=np.array(xx),
                    test_x_se=np.array(xs),
                    test_g_at_g=np.array(gg),
                    test_g_se=np.array(gs),
                    quarantined=quarantined,
                )
            )
        out[family] = sizes
    return out


def _trend_verdict(abs_gaps: list[float], ses: list[float]) -> dict:
    inversions = []
    for i in range(len(abs_gaps) - 1):
        excess = abs_gaps[i + 1] - abs_gaps[i]
        if excess > 0:
            inversions.append({"index": i + 1, "excess": excess, "se": ses[i + 1]})
    ok = len(inversions) == 0 or (
        len(inversions) == 1 and inversions[0]["excess"] <= inversions[0]["se"]
    )
    return {"non_increasing_ok": ok, "inversions": inversions}


def build_report(
    rows: list[TrialRow],
    n_boot: int = 2000,
    level: float = 0.95,
    family_kinds: dict[str, str] | None = None,
) -> dict:
    """Aggregate trial rows into the universality report structure."""
    paired = _pair_rows(rows)
    family_kinds = family_kinds or {}
    report: dict = {"families": {}, "family_order": list(paired)}
    null_quantiles: dict[tuple[int, int], float] = {}
    for family, sizes in paired.items():
        fam_entry: dict = {"kind": family_kinds.get(family, ""), "sizes": []}
        abs_gaps, gap_ses = [], []
        for ps in sizes:
            T = ps.train_x.size
            entry: dict = {"n": ps.n, "p": ps.p, "trials": T, "quarantined": ps.quarantined}
            if T == 0:
                entry["empty"] = True
                fam_entry["sizes"].append(entry)
                continue
            gaps = ps.train_x - ps.train_g
            seed = derive_seed(_REPORT_SEED, family, ps.n)
            mean, lo, hi, se = bootstrap_mean_ci(gaps, n_boot=n_boot, seed=seed, level=level)
            entry["train_gap"] = {
                "mean": mean,
                "ci_lo": lo,
                "ci_hi": hi,
                "se": se,
                "covers_zero": lo <= 0.0 <= hi,
                "degenerate_ci": T < 2 or hi == lo,
            }
            if T >= 2:
                bl = bl_gap(ps.train_x, ps.train_g, n_boot=n_boot, seed=derive_seed(seed, "bl"))
                entry["bl_gap"] = {
                    "max": bl.max_gap,
                    "argmax": bl.argmax,
                    "ci_lo": bl.ci_lo,
                    "ci_hi": bl.ci_hi,
                    "per_psi": bl.per_psi,
                }
                key = (T, T)
                if key not in null_quantiles:
                    null_quantiles[key] = ks_null_quantile(
                        T, T, level=0.99, seed=derive_seed(_REPORT_SEED, "ks-null")
                    )
                ks = ks_statistic(ps.train_x, ps.train_g)
                entry["ks"] = {
                    "statistic": ks,
                    "null_q99": null_quantiles[key],
                    "below_null": ks < null_quantiles[key],
                }
            test_gaps = ps.test_x_at_x - ps.test_g_at_g
            if np.all(np.isfinite(test_gaps)) and T >= 1:
                tmean, tlo, thi, tse = bootstrap_mean_ci(
                    test_gaps, n_boot=n_boot, seed=derive_seed(seed, "test"), level=level
                )
                mc_var = float(np.sum(ps.test_x_se**2) + np.sum(ps.test_g_se**2)) / max(T, 1) ** 2
                entry["test_gap"] = {
                    "mean": tmean,
                    "ci_lo": tlo,
                    "ci_hi": thi,
                    "se": tse,
                    "combined_se": math.sqrt(tse**2 + mc_var),
                    "covers_zero": tlo <= 0.0 <= thi,
                    "degenerate_ci": T < 2 or thi == tlo,
                }
            fam_entry["sizes"].append(entry)
            abs_gaps.append(abs(mean))
            gap_ses.append(se)
        fam_entry["trend"] = _trend_verdict(abs_gaps, gap_ses)
        if fam_entry["sizes"] and "train_gap" in fam_entry["sizes"][-1]:
            last = fam_entry["sizes"][-1]["train_gap"]
            fam_entry["universality_pass"] = bool(
                last["covers_zero"] and fam_entry["trend"]["non_increasing_ok"]
            )
            fam_entry["largest_n_covers_zero"] = bool(last["covers_zero"])
        kind = fam_entry["kind"] or ("control-gaussian" if family.startswith("control") else "")
        if kind == "control-gaussian" and fam_entry["sizes"]:
            covered = [
                s["train_gap"]["covers_zero"] for s in fam_entry["sizes"] if "train_gap" in s
            ]
            fam_entry["null_calibration"] = {
                "covers_zero_per_size": covered,
                "pass": bool(covered and covered[-1]),
            }
        report["families"][family] = fam_entry
    return report


def write_report(
    results_dir: str | Path,
    out_dir: str | Path | None = None,
    n_boot: int = 2000,
    level: float = 0.95,
) -> Path:
    """Build report.json and plot-ready CSVs from a results directory."""
    results = Path(results_dir)
    out = Path(out_dir) if out_dir is not None else results
    out.mkdir(parents=True, exist_ok=True)
    trials_path = results / "trials.csv"
    rows = read_trials_csv(trials_path)
    if not rows:
        raise InvalidArgumentError(f"{trials_path}: contains no trial rows")

    family_kinds = {}
    warnings_list = []
    manifest_path = results / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        family_kinds = {k: v.get("kind", "") for k, v in manifest.get("families", {}).items()}
        n_boot = manifest.get("config", {}).get("bootstrap", {}).get("resamples", n_boot)
        level = manifest.get("config", {}).get("bootstrap", {}).get("level", level)
        if manifest.get("config", {}).get("problem", {}).get("loss") == "squared":
            warnings_list.append(
                "squared loss is not globally Lipschitz; results use the ridge baseline regime"
            )

    report = build_report(rows, n_boot=n_boot, level=level, family_kinds=family_kinds)
    if warnings_list:
        report["warnings"] = warnings_list

    report_path = out / "report.json"
    tmp = report_path.with_name(report_path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    os.replace(tmp, report_path)

    gap_path = out / "gap_vs_n.csv"
    tmp = gap_path.with_name(gap_path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "n", "p", "trials", "mean_gap", "ci_lo", "ci_hi", "se"])
        for family in report["family_order"]:
            for s in report["families"][family]["sizes"]:
                if "train_gap" in s:
                    tg = s["train_gap"]
                    w.writerow(
                        [family, s["n"], s["p"], s["trials"]]
                        + [f"{v:.17g}" for v in (tg["mean"], tg["ci_lo"], tg["ci_hi"], tg["se"])]
                    )
    os.replace(tmp, gap_path)

    # Pass through plot-ready stage outputs when the run produced them.
    for name in ("free_energy_paths.csv", "perturbed.csv"):
        src = results / name
        if src.exists() and out != results:
            (out / name).write_bytes(src.read_bytes())
    return report_path
