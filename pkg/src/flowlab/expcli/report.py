"""Collect pipeline artifacts into one JSON + CSV bundle under ``report/``.

The bundle holds no timestamps or absolute paths, so it is a pure function
of the artifacts (and through them of the config and master seed).
"""

from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

from .pipeline import write_csv, write_json


class ReportIncomplete(RuntimeError):
    """Artifacts are missing; a partial bundle was still written."""

    def __init__(self, missing: list[str]):
        super().__init__("missing artifacts:\n  " + "\n  ".join(missing))
        self.missing = missing


# bundle name -> artifact path relative to the run directory
COPIED = {
    "adversarial.csv": "eval/adversarial/adversarial.csv",
    "adversarial_seeds.csv": "eval/adversarial/adversarial_seeds.csv",
    "ood.csv": "eval/ood/ood.csv",
    "ood_seeds.csv": "eval/ood/ood_seeds.csv",
    "histogram.csv": "eval/ood/histogram.csv",
    "image_spectra.csv": "analysis/spectra/image_spectra.csv",
    "energy_spectra.csv": "analysis/spectra/energy_spectra.csv",
    "spectral_slopes.csv": "analysis/spectra/slopes.csv",
}


def expected_artifacts(cfg: dict | None) -> list[str]:
    paths = ["config.json"] + sorted(COPIED.values()) + ["eval/ood/confidence.json"]
    if cfg is None:
        return paths
    for task in sorted(cfg["tasks"]):
        paths += [f"effdim/{task}/trained.json", f"effdim/{task}/random_init.json"]
        paths += [f"train/{task}/seed_{s}/result.json" for s in cfg["seeds"]]
    paths += [f"datasets/{n}/manifest.csv" for n in sorted(cfg["settings"])]
    return paths


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _dataset_counts(path: Path) -> dict:
    counts: dict[str, int] = {}
    for r in _read_csv(path):
        key = f"{r['split']}/{r['label']}"
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


def build_report(out) -> dict:
    """Write ``out/report`` and return the summary dict.

    Raises :class:`ReportIncomplete` (after writing what is available) when
    artifacts are missing.
    """
    out = Path(out)
    cfg_path = out / "config.json"
    cfg = json.loads(cfg_path.read_text()) if cfg_path.is_file() else None
    missing = [p for p in expected_artifacts(cfg) if not (out / p).is_file()]
    if cfg is None and not (out / "eval").exists():
        raise ReportIncomplete(missing)

    dest = out / "report"
    if dest.exists():
        shutil.rmtree(dest)
    dest.mkdir(parents=True)

    summary: dict = {"profile": None if cfg is None else cfg.get("profile"), "seed": None if cfg is None else cfg.get("seed")}
    for name, rel in COPIED.items():
        if (out / rel).is_file():
            shutil.copyfile(out / rel, dest / name)

    if cfg is not None:
        effdim_rows = []
        effdim = {}
        training = {}
        for task in sorted(cfg["tasks"]):
            for variant in ("trained", "random_init"):
                p = out / f"effdim/{task}/{variant}.json"
                if not p.is_file():
                    continue
                d = json.loads(p.read_text())
                effdim.setdefault(task, {})[variant] = d["stages"]
                for st in d["stages"]:
                    effdim_rows.append([task, variant, st["stage"], f"{st['mean']:.6f}", f"{st['std']:.6f}"])
            runs = []
            for s in cfg["seeds"]:
                p = out / f"train/{task}/seed_{s}/result.json"
                if p.is_file():
                    r = json.loads(p.read_text())
                    runs.append({k: r[k] for k in ("seed", "epochs", "test_accuracy", "reached_target")})
            training[task] = runs
        write_csv(dest / "effdim.csv", ["task", "variant", "stage", "mean", "std"], effdim_rows)
        summary["effdim"] = effdim
        summary["training"] = training
        summary["datasets"] = {
            n: _dataset_counts(out / f"datasets/{n}/manifest.csv")
            for n in sorted(cfg["settings"])
            if (out / f"datasets/{n}/manifest.csv").is_file()
        }
        summary["channels"] = list(cfg["net"]["channels"])

    if (out / COPIED["adversarial.csv"]).is_file():
        summary["adversarial"] = _read_csv(out / COPIED["adversarial.csv"])
    if (out / COPIED["ood.csv"]).is_file():
        summary["ood"] = _read_csv(out / COPIED["ood.csv"])
    conf = out / "eval/ood/confidence.json"
    if conf.is_file():
        summary["confidence"] = json.loads(conf.read_text())
    summary["missing"] = missing
    write_json(dest / "report.json", summary)
    if missing:
        raise ReportIncomplete(missing)
    return summary


def bundle_files(out) -> dict[str, bytes]:
    """Report bundle contents keyed by file name, for byte comparisons."""
    dest = Path(out) / "report"
    return {p.name: p.read_bytes() for p in sorted(dest.iterdir()) if p.is_file()}
