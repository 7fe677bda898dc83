"""End-to-end experiment pipeline with per-unit artifact caching.

Every unit of work (one simulation, one training seed, one table) owns a
directory.  A ``.stage.json`` marker holding the unit's cache key is written
last; a unit whose marker matches the current key is skipped.  Keys hash the
relevant slice of the config, the keys of upstream units and the source of
the modules the unit runs, so editing one setting recomputes only the units
downstream of it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
from decimal import Decimal
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from ..compressible import CompressibleConfig
from ..compressible import run_simulation as run_compressible
from ..datasets import (
    DatasetError,
    DatasetManifest,
    FourierNoiseStats,
    ImageSample,
    ManifestRow,
    RenderSpec,
    SplitConfig,
    build_dataset,
    fit_fourier_stats,
    gen_noise_annulus,
    gen_noise_fourier,
    sample_from_field,
    subsample_evenly,
    write_dataset,
)
from ..effdim import effdim_report
from ..fieldcore import FieldError, Grid2D, load_field
from ..forcing import ForcingSpec
from ..incompressible import IncompressibleConfig
from ..incompressible import run_simulation as run_incompressible
from ..nnet import (
    Checkpoint,
    NetConfig,
    StageNet,
    TrainConfig,
    binary_labels,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from ..spectra import (
    CHAOTIC,
    TURBULENT,
    EnergySpectrum,
    RegimeConfig,
    classify_regime,
    fit_power_law,
    image_power_spectrum,
    read_spectra_csv,
)
from .config import digest

log = logging.getLogger(__name__)

MARKER = ".stage.json"
STAGES = ("simulate", "label", "render", "spectra", "noise", "train", "effdim", "adversarial", "ood", "report")
PIPELINE_STAGES = STAGES[:-1]
REGIME_CLASS = {CHAOTIC: "chaos", TURBULENT: "turbulence"}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def module_digest(*names: str) -> str:
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for name in sorted(names):
        path = root / (name.replace(".", "/") + ".py")
        h.update(name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


SIM_MODULES = ("rng", "fieldcore", "forcing", "incompressible", "compressible", "spectra")
DATA_MODULES = ("datasets", "spectra")
NET_MODULES = ("rng", "nnet")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def fmt(x: float) -> str:
    return f"{x:.6f}"


@dataclass
class UnitResult:
    key: str
    path: Path
    hit: bool


class Pipeline:
    """Runs the stages of one experiment config under ``out``."""

    def __init__(self, config: dict, out):
        self.cfg = config
        self.out = Path(out)
        self.seed = int(config["seed"])
        self.render_spec = RenderSpec(**config["render"])
        self.keys: dict[str, str] = {}
        self.hits: set[str] = set()
        self.built: set[str] = set()

    # --- caching --------------------------------------------------------------

    def unit(self, stage: str, rel: str, key_payload: dict, build) -> UnitResult:
        path = self.out / rel
        key = digest(key_payload)
        marker = path / MARKER
        if marker.is_file():
            try:
                if json.loads(marker.read_text()).get("key") == key:
                    if rel not in self.built:
                        self.hits.add(rel)
                    self.keys[rel] = key
                    return UnitResult(key, path, True)
            except json.JSONDecodeError:
                pass
        if path.exists():
            shutil.rmtree(path)
        path.mkdir(parents=True)
        log.info("%s: building %s", stage, rel)
        try:
            build(path)
        except StageError:
            raise
        except Exception as exc:  # any failure is reported against its stage
            raise StageError(stage, f"{rel}: {type(exc).__name__}: {exc}") from exc
        write_json(marker, {"key": key, "stage": stage})
        self.built.add(rel)
        self.keys[rel] = key
        return UnitResult(key, path, False)

    # --- simulate ---------------------------------------------------------------

    def setting(self, name: str) -> dict:
        return self.cfg["settings"][name]

    def sim_ids(self, name: str) -> list[str]:
        return [f"{name}-{i:03d}" for i in range(int(self.setting(name)["n_sims"]))]

    def field_stem(self, name: str) -> str:
        stem = self.render_spec.file_stem
        if stem == "rho" and self.setting(name)["dynamics"] == "incompressible":
            raise StageError("render", f"setting {name}: incompressible runs have no density field")
        return stem

    def simulate(self, name: str) -> list[UnitResult]:
        s = self.setting(name)
        stem = self.field_stem(name)
        out = []
        for sim_id in self.sim_ids(name):
            solver = dict(s["solver"], seed=self.seed, sim_id=sim_id)

            def build(path, solver=solver):
                if s["dynamics"] == "incompressible":
                    result = run_incompressible(IncompressibleConfig(**solver), path, fields=(stem,))
                else:
                    result = run_compressible(CompressibleConfig(**solver), path, fields=(stem,))
                write_csv(
                    path / "snapshots.csv",
                    ["step", "t", "file"],
                    [[sn.step, repr(sn.t), f"{stem}_{sn.step:07d}.flow"] for sn in result.snapshots],
                )
                write_json(path / "sim.json", result.config)

            payload = {"dynamics": s["dynamics"], "solver": solver, "field": stem, "src": module_digest(*SIM_MODULES)}
            out.append(self.unit("simulate", f"sims/{name}/{sim_id}", payload, build))
        return out

    # --- label ------------------------------------------------------------------

    def label(self, name: str) -> UnitResult:
        sims = self.simulate(name)
        regime = RegimeConfig(**self.setting(name)["regime"])

        def build(path):
            rows = []
            counts = {}
            for sim_id, u in zip(self.sim_ids(name), sims):
                times, spectra = read_spectra_csv(u.path / "spectra.csv")
                labels = classify_regime(times, spectra, regime)
                snaps = _read_snapshots(u.path)
                if len(snaps) != len(labels):
                    raise StageError("label", f"{sim_id}: {len(snaps)} snapshots but {len(labels)} spectra")
                for (step, t, _), lab in zip(snaps, labels):
                    rows.append([sim_id, step, repr(t), lab])
                    counts.setdefault(sim_id, {}).setdefault(lab, 0)
                    counts[sim_id][lab] += 1
            write_csv(path / "labels.csv", ["sim_id", "step", "t", "regime"], rows)
            write_json(path / "counts.json", counts)

        payload = {"regime": self.setting(name)["regime"], "sims": [u.key for u in sims], "src": module_digest("spectra")}
        return self.unit("label", f"labels/{name}", payload, build)

    # --- render -----------------------------------------------------------------

    def render(self, name: str) -> UnitResult:
        lab = self.label(name)
        is_train = name == self.cfg["train_setting"]
        ds = self.cfg["dataset"]

        def build(path):
            samples = self._render_samples(name, lab.path)
            if not samples:
                raise StageError("render", f"{name}: no chaotic or turbulent snapshots")
            if is_train:
                present = {s.label for s in samples}
                if present != {"chaos", "turbulence"}:
                    raise StageError("render", f"training setting {name} has only {sorted(present)} snapshots")
                split = SplitConfig(
                    test_fraction=None,
                    test_per_class=int(ds["test_per_class"]),
                    train_per_class=int(ds["train_per_class"]),
                    seed=self.seed,
                )
                try:
                    build_dataset(samples, path, split)
                except DatasetError as exc:
                    raise StageError("render", f"{name}: {exc}") from exc
            else:
                k = int(self.cfg["eval_per_class"])
                assigned = []
                for cls in sorted({s.label for s in samples}):
                    rows = [s for s in samples if s.label == cls]
                    assigned += [(s, "test") for s in subsample_evenly(rows, k, self.seed, cls)]
                write_dataset(assigned, path)

        payload = {
            "render": self.cfg["render"],
            "role": "train" if is_train else "eval",
            "dataset": ds if is_train else {"eval_per_class": self.cfg["eval_per_class"]},
            "seed": self.seed,
            "labels": lab.key,
            "sims": [self.keys[f"sims/{name}/{i}"] for i in self.sim_ids(name)],
            "src": module_digest(*DATA_MODULES),
        }
        return self.unit("render", f"datasets/{name}", payload, build)

    def _render_samples(self, name: str, label_dir: Path) -> list[ImageSample]:
        samples = []
        with open(label_dir / "labels.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        for r in rows:
            cls = REGIME_CLASS.get(r["regime"])
            if cls is None:
                continue
            f = load_field(self.out / f"sims/{name}/{r['sim_id']}" / f"{self.render_spec.file_stem}_{int(r['step']):07d}.flow")
            samples.append(sample_from_field(f, self.render_spec, cls, r["sim_id"], float(r["t"]), r["regime"]))
        return samples

    def manifest(self, name: str) -> DatasetManifest:
        return DatasetManifest.read(self.out / f"datasets/{name}/manifest.csv")

    # --- spectra summaries ------------------------------------------------------------

    def spectra(self) -> UnitResult:
        names = sorted(self.cfg["settings"])
        labs = {n: self.label(n) for n in names}
        train_name = self.cfg["train_setting"]
        ds = self.render(train_name)

        def build(path):
            rows = []
            slopes = []
            for n in names:
                regime = RegimeConfig(**self.setting(n)["regime"])
                band = regime.resolved_band()
                lab = _read_labels(labs[n].path)
                for sim_id in self.sim_ids(n):
                    times, spectra = read_spectra_csv(self.out / f"sims/{n}/{sim_id}/spectra.csv")
                    for reg in (CHAOTIC, TURBULENT):
                        picked = [s.E for t, s in zip(times, spectra) if lab.get((sim_id, repr(t))) == reg]
                        if not picked:
                            continue
                        mean = np.mean(picked, axis=0)
                        for k in range(1, len(mean)):
                            rows.append([n, sim_id, REGIME_CLASS[reg], k, repr(float(mean[k]))])
                        try:
                            fit = fit_power_law(EnergySpectrum(np.arange(len(mean)), mean), band)
                            slopes.append([n, sim_id, REGIME_CLASS[reg], len(picked), fmt(fit.slope), fmt(fit.r2)])
                        except FieldError:
                            slopes.append([n, sim_id, REGIME_CLASS[reg], len(picked), "", ""])
            write_csv(path / "energy_spectra.csv", ["setting", "sim_id", "class", "k", "E"], rows)
            write_csv(path / "slopes.csv", ["setting", "sim_id", "class", "n_snapshots", "slope", "r2"], slopes)
            write_image_spectra(self.manifest(train_name).select("test"), path / "image_spectra.csv", float(self.setting(train_name)["regime"]["k_forcing"]))

        payload = {"labels": {n: labs[n].key for n in names}, "dataset": ds.key, "src": module_digest("spectra")}
        return self.unit("spectra", "analysis/spectra", payload, build)

    # --- noise --------------------------------------------------------------------

    def noise_annulus(self) -> UnitResult:
        train_name = self.cfg["train_setting"]
        s = self.setting(train_name)
        ds = self.cfg["dataset"]
        size = self.render_spec.out_size

        def build(path):
            spec = ForcingSpec(**s["solver"]["forcing"])
            # annulus modes are in mode-number units, so the box length is irrelevant
            grid = Grid2D(int(s["solver"]["n"]))
            assigned = []
            for split, count in (("train", ds["train_per_class"]), ("test", ds["test_per_class"])):
                gen = rngmod.stream(self.seed, "noise-annulus", split)
                imgs = gen_noise_annulus(int(count), spec, grid, gen, size)
                for i, img in enumerate(imgs):
                    assigned.append((ImageSample(img, "noise", f"annulus-{split}", float(i), "", "noise_annulus", _gen_hash("annulus", size)), split))
            write_dataset(assigned, path)

        payload = {"forcing": s["solver"]["forcing"], "n": s["solver"]["n"], "size": size, "dataset": ds, "seed": self.seed, "src": module_digest("datasets", "forcing", "fieldcore", "rng")}
        return self.unit("noise", "noise/annulus", payload, build)

    def fourier_sources(self) -> list[tuple[str, str]]:
        train_name = self.cfg["train_setting"]
        cross = self.cfg["adversarial"]["cross_setting"]
        out = []
        for n in (cross, train_name):
            for cls in ("turbulence", "chaos"):
                if (n, cls) not in out:
                    out.append((n, cls))
        return out

    def noise_fourier(self, name: str, cls: str) -> UnitResult | None:
        ds = self.render(name)
        is_train = name == self.cfg["train_setting"]
        noise = self.cfg["noise"]
        manifest = self.manifest(name).select("train" if is_train else "test", [cls])
        if len(manifest) < 2:
            log.warning("no %s images in %s; skipping its Fourier noise", cls, name)
            return None

        def build(path):
            stats = fit_fourier_stats(manifest.load_images(), int(noise["fourier_M"]), f"{name}:{cls}")
            stats.save(path / "stats.npz")
            gen = rngmod.stream(self.seed, "noise-fourier", name, cls)
            imgs = gen_noise_fourier(stats, int(noise["fourier_count"]), gen)
            label = f"noise_fourier:{cls}"
            assigned = [
                (ImageSample(img, label, f"fourier-{name}-{cls}", float(i), "", "noise_fourier", _gen_hash("fourier", stats.size)), "test")
                for i, img in enumerate(imgs)
            ]
            write_dataset(assigned, path)
            write_json(path / "source.json", {"setting": name, "class": cls, "M": stats.count})

        payload = {"noise": noise, "dataset": ds.key, "setting": name, "class": cls, "seed": self.seed, "src": module_digest("datasets", "rng")}
        return self.unit("noise", f"noise/fourier_{name}_{cls}", payload, build)

    def noise(self) -> dict:
        out = {"annulus": self.noise_annulus()}
        for name, cls in self.fourier_sources():
            out[(name, cls)] = self.noise_fourier(name, cls)
        return out

    # --- tasks and training ---------------------------------------------------------

    def task_dataset(self, task: str) -> UnitResult:
        negative = self.cfg["tasks"][task]["negative"]
        train_name = self.cfg["train_setting"]
        ds = self.render(train_name)
        upstream = [ds.key]
        if negative == "noise":
            upstream.append(self.noise_annulus().key)

        def build(path):
            base = self.manifest(train_name)
            rows = [_rebase(r, base.root, path) for r in base.rows if r.label in ("turbulence", negative)]
            if negative == "noise":
                noise = DatasetManifest.read(self.out / "noise/annulus/manifest.csv")
                rows += [_rebase(r, noise.root, path) for r in noise.rows]
            m = DatasetManifest(rows, path)
            paths = {}
            for r in rows:
                if paths.setdefault(r.path, r.label) != r.label:
                    raise StageError("train", f"{task}: {r.path} appears under two labels")
            for split in ("train", "test"):
                for cls in ("turbulence", negative):
                    if not m.select(split, [cls]).rows:
                        raise StageError("train", f"{task}: no {cls} rows in the {split} split")
            m.write(path / "manifest.csv")

        payload = {"task": task, "negative": negative, "upstream": upstream}
        return self.unit("train", f"tasks/{task}", payload, build)

    def train_config(self, seed: int) -> TrainConfig:
        t = dict(self.cfg["train"])
        return TrainConfig(seed=rngmod.derive_seed(self.seed, "train", seed), **t)

    def net_config(self) -> NetConfig:
        return NetConfig(**self.cfg["net"])

    def train_seed(self, task: str, seed: int) -> UnitResult:
        tds = self.task_dataset(task)
        negative = self.cfg["tasks"][task]["negative"]

        def build(path):
            m = DatasetManifest.read(tds.path / "manifest.csv")
            tr, te = m.select("train"), m.select("test")
            x_tr, x_te = tr.load_images(), te.load_images()
            y_tr = binary_labels([r.label for r in tr.rows], "turbulence", negative)
            y_te = binary_labels([r.label for r in te.rows], "turbulence", negative)
            cfg = self.train_config(seed)
            result = train(
                x_tr, y_tr, x_te, y_te, self.net_config(), cfg, (negative, "turbulence"),
                progress=lambda e: log.info("%s seed %d epoch %d loss %.4f acc %.4f", task, seed, e.epoch, e.train_loss, e.test_acc),
            )
            save_checkpoint(result.checkpoint, path / "checkpoint.bin")
            result.write_log(path / "log.csv")
            final = result.log[-1]
            write_json(path / "result.json", {
                "task": task, "seed": seed, "train_seed": cfg.seed, "epochs": final.epoch,
                "test_accuracy": final.test_acc, "reached_target": final.test_acc >= cfg.target_accuracy,
                "config_hash": result.checkpoint.config_hash,
            })

        payload = {"net": self.cfg["net"], "train": self.cfg["train"], "seed": seed, "master": self.seed, "data": tds.key, "src": module_digest(*NET_MODULES)}
        return self.unit("train", f"train/{task}/seed_{seed}", payload, build)

    def train_all(self) -> dict:
        return {(task, s): self.train_seed(task, s) for task in sorted(self.cfg["tasks"]) for s in self.cfg["seeds"]}

    def checkpoint(self, task: str, seed: int) -> Checkpoint:
        return load_checkpoint(self.out / f"train/{task}/seed_{seed}/checkpoint.bin")

    # --- effective dimension ----------------------------------------------------------

    def effdim(self, task: str) -> UnitResult:
        units = [self.train_seed(task, s) for s in self.cfg["seeds"]]
        tds = self.task_dataset(task)
        e = self.cfg["effdim"]

        def build(path):
            images = DatasetManifest.read(tds.path / "manifest.csv").select("test").load_images()
            seeds = list(self.cfg["seeds"])
            cks = [self.checkpoint(task, s) for s in seeds]
            trained = effdim_report(task, cks, images, seeds, int(e["row_cap"]), "trained", int(e["sample_seed"]))
            trained.write(path / "trained.json", path / "trained.csv")
            randoms = [StageNet.initialize(self.net_config(), self.train_config(s).seed) for s in seeds]
            rand = effdim_report(task, randoms, images, seeds, int(e["row_cap"]), "random_init", int(e["sample_seed"]))
            rand.write(path / "random_init.json", path / "random_init.csv")

        payload = {"effdim": e, "ckpts": [u.key for u in units], "data": tds.key, "src": module_digest("effdim", "nnet", "rng")}
        return self.unit("effdim", f"effdim/{task}", payload, build)

    # --- evaluation tables ----------------------------------------------------------------

    def chaos_task(self) -> str:
        for task, t in sorted(self.cfg["tasks"].items()):
            if t["negative"] == "chaos":
                return task
        raise StageError("adversarial", "no turbulence-vs-chaos task configured")

    def adversarial(self) -> UnitResult:
        task = self.chaos_task()
        seeds = list(self.cfg["seeds"])
        units = [self.train_seed(task, s) for s in seeds]
        adv = self.cfg["adversarial"]
        sources = []
        for role, cls in (("cross_setting", "chaos"), ("cross_setting", "turbulence"), ("kf_setting", "turbulence")):
            name = adv[role]
            sources.append((f"{name} {cls}", self.render(name), name, cls, "sim"))
        noise = self.noise()
        for name, cls in sorted(self.fourier_sources(), key=lambda p: (p[1] != "turbulence", p[0] != adv["cross_setting"])):
            u = noise.get((name, cls))
            sources.append((f"noise_fourier {name} {cls}", u, name, cls, "fourier"))

        def build(path):
            per_seed = []
            table = []
            for row_name, u, name, cls, kind in sources:
                if u is None:
                    log.warning("adversarial row %r skipped: dataset missing", row_name)
                    continue
                m = DatasetManifest.read(u.path / "manifest.csv")
                if kind == "sim":
                    m = m.select("test", [cls])
                if not m.rows:
                    log.warning("adversarial row %r skipped: no images", row_name)
                    continue
                images = m.load_images()
                for s in seeds:
                    ck = self.checkpoint(task, s)
                    prob = evaluate(ck, images, np.ones(len(images), dtype=np.int64)).probabilities
                    n_turb = int(np.sum(prob > 0.5))
                    rec = [row_name, self.setting(name)["dynamics"], self.setting(name)["regime"]["k_forcing"], cls, kind, len(images), len(images) - n_turb, n_turb]
                    per_seed.append([s] + rec)
                    if s == seeds[0]:
                        table.append(rec)
            header = ["dataset", "dynamics", "k_forcing", "source_class", "kind", "n", "n_chaos", "n_turbulence"]
            write_csv(path / "adversarial_seeds.csv", ["seed"] + header + ["frac_chaos", "frac_turbulence"], [r + _fracs(r[-2], r[-1]) for r in per_seed])
            write_csv(path / "adversarial.csv", header + ["frac_chaos", "frac_turbulence"], [r + _fracs(r[-2], r[-1]) for r in table])

        payload = {"adv": adv, "ckpts": [u.key for u in units], "data": [None if u is None else u.key for _, u, *_ in sources], "src": module_digest("nnet")}
        return self.unit("adversarial", "eval/adversarial", payload, build)

    def ood(self) -> UnitResult:
        task = self.chaos_task()
        seeds = list(self.cfg["seeds"])
        units = [self.train_seed(task, s) for s in seeds]
        names = [self.cfg["train_setting"]] + [n for n in self.cfg["ood"] if n != self.cfg["train_setting"]]
        dsets = {n: self.render(n) for n in names}
        bins = int(self.cfg["histogram_bins"])

        def build(path):
            rows = []
            per_seed = []
            hist_rows = []
            for n in names:
                m = self.manifest(n).select("test", ["chaos", "turbulence"])
                if not m.rows:
                    log.warning("ood row %s skipped: no labeled test images", n)
                    continue
                images = m.load_images()
                labels = [r.label for r in m.rows]
                s_ = self.setting(n)
                for s in seeds:
                    ev = evaluate(self.checkpoint(task, s), images, labels)
                    per_seed.append([s, n, len(labels), fmt(ev.accuracy)])
                    if s == seeds[0]:
                        counts = {c: labels.count(c) for c in ("chaos", "turbulence")}
                        rows.append([n, s_["dynamics"], s_["regime"]["k_forcing"], repr(float(s_["solver"]["nu"])), "train" if n == names[0] else "ood", counts["chaos"], counts["turbulence"], fmt(ev.accuracy)])
                        if n == names[0]:
                            edges = np.linspace(0.0, 1.0, bins + 1)
                            for cls in ("chaos", "turbulence"):
                                p = ev.probabilities[np.array(labels) == cls]
                                h, _ = np.histogram(p, bins=edges)
                                hist_rows += [[cls, fmt(edges[i]), fmt(edges[i + 1]), int(h[i])] for i in range(bins)]
                            confident = float(np.mean((ev.probabilities <= 0.05) | (ev.probabilities >= 0.95)))
                            write_json(path / "confidence.json", {"fraction_outside_0.05_0.95": confident, "n": len(labels), "seed": s})
            write_csv(path / "ood.csv", ["setting", "dynamics", "k_forcing", "nu", "role", "n_chaos", "n_turbulence", "accuracy"], rows)
            write_csv(path / "ood_seeds.csv", ["seed", "setting", "n", "accuracy"], per_seed)
            write_csv(path / "histogram.csv", ["true_class", "p_lo", "p_hi", "count"], hist_rows)

        payload = {"names": names, "bins": bins, "ckpts": [u.key for u in units], "data": [dsets[n].key for n in names], "src": module_digest("nnet")}
        return self.unit("ood", "eval/ood", payload, build)

    # --- orchestration ----------------------------------------------------------------------

    def run(self, until: str = "ood") -> None:
        """Run every stage up to and including ``until``."""
        if until not in STAGES:
            raise StageError("pipeline", f"unknown stage {until!r}")
        stop = STAGES.index(until)
        names = sorted(self.cfg["settings"])

        def want(stage):
            return STAGES.index(stage) <= stop

        for n in names:
            self.simulate(n)
        if want("label"):
            for n in names:
                self.label(n)
        if want("render"):
            for n in names:
                self.render(n)
        if want("spectra"):
            self.spectra()
        if want("noise"):
            self.noise()
        if want("train"):
            self.train_all()
        if want("effdim"):
            for task in sorted(self.cfg["tasks"]):
                self.effdim(task)
        if want("adversarial"):
            self.adversarial()
        if want("ood"):
            self.ood()
        write_json(self.out / "config.json", self.cfg)
        log.info("cache: %d hits, %d built", len(self.hits), len(self.built))


def _fracs(n_chaos: int, n_turb: int) -> list[str]:
    """Six-decimal fractions that add up to exactly 1 as decimals."""
    n = n_chaos + n_turb
    if not n:
        return ["", ""]
    turb = Decimal(n_turb) / Decimal(n)
    turb = turb.quantize(Decimal("0.000001"))
    return [str(Decimal(1) - turb), str(turb)]


def _gen_hash(kind: str, size: int) -> str:
    return hashlib.sha256(json.dumps({"kind": kind, "out_size": size}, sort_keys=True).encode()).hexdigest()[:16]


def _rebase(r: ManifestRow, src_root: Path, dst_root: Path) -> ManifestRow:
    rel = Path(os.path.relpath(Path(src_root) / r.path, dst_root))
    return ManifestRow(rel.as_posix(), r.label, r.sim_id, r.t, r.regime, r.generator, r.render_hash, r.split)


def _read_snapshots(sim_dir: Path) -> list[tuple[int, float, str]]:
    with open(sim_dir / "snapshots.csv", newline="") as fh:
        return [(int(r["step"]), float(r["t"]), r["file"]) for r in csv.DictReader(fh)]


def _read_labels(label_dir: Path) -> dict:
    with open(label_dir / "labels.csv", newline="") as fh:
        return {(r["sim_id"], r["t"]): r["regime"] for r in csv.DictReader(fh)}


def write_image_spectra(m: DatasetManifest, path, k_forcing: float) -> None:
    """Ensemble mean and standard error of normalized-image spectra per class."""
    rows = []
    for cls in ("chaos", "turbulence"):
        sel = m.select(None, [cls])
        if not sel.rows:
            continue
        E = np.array([image_power_spectrum(img).E for img in sel.load_images()])
        mean = E.mean(axis=0)
        sem = E.std(axis=0, ddof=1) / np.sqrt(len(E)) if len(E) > 1 else np.zeros_like(mean)
        for k in range(1, E.shape[1]):
            rows.append([cls, k, len(E), repr(float(mean[k])), repr(float(sem[k])), int(k < k_forcing)])
    write_csv(path, ["class", "k", "n_images", "mean", "sem", "below_k_forcing"], rows)
