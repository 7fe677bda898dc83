"""Experiment configuration: built-in profiles plus JSON overrides.

A configuration is a plain JSON-compatible dict.  ``load_config`` starts
from a profile and deep-merges a user file over it, so a config file only
needs the keys it changes.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path


def _inc(k_f, amp, nu=3e-6, t_end=70.0, n=128, dt=0.005, stride=20, half_width=1.5):
    return {
        "dynamics": "incompressible",
        "solver": {
            "n": n,
            "nu": nu,
            "dt": dt,
            "forcing": {"k_center": k_f, "half_width": half_width, "amplitude": amp},
            "t_end": t_end,
            "snapshot_stride": stride,
        },
    }


DESK = {
    "profile": "desk",
    "seed": 0,
    "render": {"field_select": "vorticity", "out_size": 128},
    "train_setting": "inc_k20",
    "settings": {
        # training distribution; chaos ends near t = 20, the -5/3 range holds to t ~ 70
        "inc_k20": {
            **_inc(20.0, 56.6),
            "n_sims": 24,
            "regime": {"k_forcing": 20.0, "t_min": 5.0, "window": 6.0, "chaos_margin": 0.4},
        },
        "inc_k12": {
            **_inc(12.0, 34.0, t_end=35.0),
            "n_sims": 3,
            "regime": {"k_forcing": 12.0, "t_min": 3.0, "window": 6.0, "chaos_margin": 0.4},
        },
        "inc_k26": {
            **_inc(26.0, 73.5, nu=1e-6, t_end=45.0),
            "n_sims": 3,
            "regime": {"k_forcing": 26.0, "t_min": 3.0, "window": 6.0, "chaos_margin": 0.4},
        },
        "inc_k20_nu_half": {
            **_inc(20.0, 56.6, nu=1.5e-6, t_end=45.0),
            "n_sims": 3,
            "regime": {"k_forcing": 20.0, "t_min": 5.0, "window": 6.0, "chaos_margin": 0.4},
        },
        # grid units (dx = 1); chaos up to t ~ 1000, -5/3 range from t ~ 1900
        "comp_k14": {
            "dynamics": "compressible",
            "solver": {
                "n": 128,
                "nu": 0.01,
                "cfl": 0.4,
                "forcing": {"k_center": 14.0, "half_width": 1.5, "amplitude": 0.007},
                "t_end": 3600.0,
                "snapshot_stride": 40,
            },
            "n_sims": 2,
            "regime": {"k_forcing": 14.0, "t_min": 150.0, "window": 300.0, "chaos_margin": 0.25},
        },
    },
    "dataset": {"train_per_class": 2000, "test_per_class": 500},
    "eval_per_class": 500,
    "noise": {"fourier_M": 1000, "fourier_count": 500},
    "tasks": {
        "turbulence_vs_chaos": {"negative": "chaos"},
        "turbulence_vs_noise": {"negative": "noise"},
    },
    "net": {"channels": [16, 32, 64, 128], "blocks_per_stage": 2, "stem_stride": 2, "skip": False},
    "train": {"lr": 1e-3, "weight_decay": 1e-4, "batch_size": 32, "max_epochs": 20, "target_accuracy": 0.99},
    "seeds": [0, 1, 2, 3, 4],
    "effdim": {"row_cap": 2_000_000, "sample_seed": 0},
    "adversarial": {"kf_setting": "inc_k12", "cross_setting": "comp_k14"},
    "ood": ["inc_k12", "inc_k26", "inc_k20_nu_half", "comp_k14"],
    "histogram_bins": 20,
}

# Larger grids and images, closer to the original experiments.  Provided for
# completeness; the physics parameters here are not tuned.
PAPER = copy.deepcopy(DESK)
PAPER.update(
    {
        "profile": "paper",
        "render": {"field_select": "vorticity", "out_size": 435},
        "train_setting": "inc_k15",
        "settings": {
            "inc_k15": {
                **_inc(15.0, 40.0, nu=1e-6, n=400, dt=0.002, t_end=80.0, stride=50),
                "n_sims": 40,
                "regime": {"k_forcing": 15.0, "t_min": 5.0, "window": 6.0, "chaos_margin": 0.4},
            },
            "inc_k7": {
                **_inc(7.0, 20.0, nu=1e-6, n=400, dt=0.002, t_end=80.0, stride=50),
                "n_sims": 6,
                "regime": {"k_forcing": 7.0, "t_min": 5.0, "window": 6.0, "chaos_margin": 0.4},
            },
            "comp_k15": {
                "dynamics": "compressible",
                "solver": {
                    "n": 400,
                    "nu": 0.03,
                    "cfl": 0.4,
                    "forcing": {"k_center": 15.0, "half_width": 1.5, "amplitude": 0.002},
                    "t_end": 20000.0,
                    "snapshot_stride": 100,
                },
                "n_sims": 4,
                "regime": {"k_forcing": 15.0, "t_min": 500.0, "window": 1000.0, "chaos_margin": 0.25},
            },
        },
        "dataset": {"train_per_class": 5000, "test_per_class": 1000},
        "eval_per_class": 1000,
        "net": {"channels": [64, 128, 256, 512], "blocks_per_stage": 2, "stem_stride": 2, "skip": True},
        "adversarial": {"kf_setting": "inc_k7", "cross_setting": "comp_k15"},
        "ood": ["inc_k7", "comp_k15"],
    }
)

# Tiny end-to-end configuration for exercising the plumbing.  The regime
# thresholds are loose, so its labels carry no physical meaning.
SMOKE = copy.deepcopy(DESK)
# early spectra are steep; the loose target flags the flatter late spectra
_loose = {"t_min": 0.5, "band": [1, 5], "slope_target": 2.0, "slope_tolerance": 0.3, "r2_min": 0.0, "window": 0.0, "chaos_margin": 0.0}
SMOKE.update(
    {
        "profile": "smoke",
        "render": {"field_select": "vorticity", "out_size": 32},
        "train_setting": "inc_a",
        "settings": {
            "inc_a": {
                **_inc(6.0, 30.0, nu=1e-3, n=32, dt=0.01, t_end=6.0, stride=5),
                "n_sims": 6,
                "regime": {"k_forcing": 6.0, **_loose},
            },
            "inc_b": {
                **_inc(5.0, 30.0, nu=1e-3, n=32, dt=0.01, t_end=6.0, stride=5),
                "n_sims": 1,
                "regime": {"k_forcing": 5.0, **_loose},
            },
            "comp_a": {
                "dynamics": "compressible",
                "solver": {
                    "n": 32,
                    "nu": 0.03,
                    "cfl": 0.4,
                    "forcing": {"k_center": 6.0, "half_width": 1.5, "amplitude": 0.02},
                    "t_end": 40.0,
                    "snapshot_stride": 1,
                },
                "n_sims": 1,
                "regime": {"k_forcing": 6.0, **_loose, "t_min": 2.0, "slope_target": 4.0, "slope_tolerance": 0.5},
            },
        },
        "dataset": {"train_per_class": 50, "test_per_class": 40},
        "eval_per_class": 40,
        "noise": {"fourier_M": 60, "fourier_count": 40},
        "net": {"channels": [4, 4, 4, 4], "blocks_per_stage": 1, "stem_stride": 2, "skip": False},
        "train": {"lr": 3e-3, "weight_decay": 1e-4, "batch_size": 16, "max_epochs": 4, "target_accuracy": 0.99},
        "seeds": [0, 1],
        "effdim": {"row_cap": 100_000, "sample_seed": 0},
        "adversarial": {"kf_setting": "inc_b", "cross_setting": "comp_a"},
        "ood": ["inc_b", "comp_a"],
    }
)

PROFILES = {"desk": DESK, "paper": PAPER, "smoke": SMOKE}


class ConfigError(ValueError):
    """Raised for unknown profiles or inconsistent experiment configs."""


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, profile: str | None = None, seed: int | None = None) -> dict:
    """Profile defaults, then the JSON file at ``path``, then ``seed``.

    The file may name its own ``profile``; an explicit ``profile`` argument
    wins.
    """
    user = {}
    if path is not None:
        user = json.loads(Path(path).read_text())
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    name = profile or user.get("profile") or "desk"
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    cfg = deep_merge(PROFILES[name], user)
    cfg["profile"] = name
    if seed is not None:
        cfg["seed"] = int(seed)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    settings = cfg["settings"]
    if cfg["train_setting"] not in settings:
        raise ConfigError(f"train_setting {cfg['train_setting']!r} is not a defined setting")
    for name in list(cfg["ood"]) + list(cfg["adversarial"].values()):
        if name not in settings:
            raise ConfigError(f"setting {name!r} referenced but not defined")
    seeds = list(cfg["seeds"])
    if len(set(seeds)) != len(seeds) or not seeds:
        raise ConfigError("seeds must be a non-empty list of distinct integers")
    negatives = [t["negative"] for t in cfg["tasks"].values()]
    if "turbulence" in negatives:
        raise ConfigError("a task's negative class must differ from turbulence")
    for name, s in settings.items():
        if s["dynamics"] not in ("incompressible", "compressible"):
            raise ConfigError(f"setting {name}: unknown dynamics {s['dynamics']!r}")
        if int(s["n_sims"]) < 1:
            raise ConfigError(f"setting {name}: n_sims must be positive")


def digest(obj) -> str:
    """Stable short hash of a JSON-compatible object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:20]


def source_digest() -> str:
    """Hash of the package sources, so cached artifacts expire on code edits."""
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:20]
