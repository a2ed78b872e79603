"""Experiment configuration: JSON files with model / solver / output sections.

The config is the reproduction contract for an experiment: it fully determines
the model, the descent settings, and where results land. See the README for
the field-by-field schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import read_field
from .grids import Grid
from .models import (
    GaussianMixtureModel,
    LinearToyModel,
    WaveFwiModel,
    ricker_wavelet,
)
from .solver import NgdConfig


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class Experiment:
    model: object
    theta0: np.ndarray
    solver: NgdConfig
    output_dir: Path
    snapshot_every: int
    reference_point: np.ndarray | None = None
    raw: dict | None = None


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing {key!r} in {where} section")
    return section[key]


def _build_gaussian_mixture(section: dict):
    domain = _require(section, "domain", "model")
    interior = _require(section, "interior", "model")
    grid = Grid.regular(domain, interior)
    model = GaussianMixtureModel.from_reference_mixture(
        grid,
        _require(section, "model_components", "model"),
        _require(section, "free", "model"),
        _require(section, "reference_components", "model"),
    )
    theta0 = np.asarray(_require(section, "theta0", "model"), dtype=float)
    return model, theta0


def _build_linear_toy(section: dict):
    if "matrix_file" in section:
        a = read_field(section["matrix_file"])
        reference = read_field(_require(section, "reference_file", "model"))
        model = LinearToyModel(a, reference.ravel())
    else:
        rows = _require(section, "rows", "model")
        cols = _require(section, "cols", "model")
        model, theta_true = LinearToyModel.random_positive(
            rows, cols, int(section.get("seed", 0)),
            theta_true=section.get("theta_true"),
        )
    theta0 = np.asarray(
        section.get("theta0", np.zeros(model.param_dim) + 0.5), dtype=float
    )
    return model, theta0


def _model_field(spec, cells) -> np.ndarray:
    """Materialize a model field from a constant, layers, file, or inline list."""
    nx, nz = cells
    if isinstance(spec, dict) and "constant" in spec:
        return np.full(nx * nz, float(spec["constant"]))
    if isinstance(spec, dict) and "layered" in spec:
        layered = spec["layered"]
        field = np.full((nx, nz), float(layered.get("background", 1.0)))
        for depth, value in layered.get("layers", []):
            field[:, int(depth):] = float(value)
        return field.ravel()
    if isinstance(spec, dict) and "file" in spec:
        return read_field(spec["file"]).ravel()
    arr = np.asarray(spec, dtype=float)
    if arr.size != nx * nz:
        raise ConfigError(f"model field has {arr.size} entries, expected {nx * nz}")
    return arr.ravel()


def _build_wave(section: dict):
    cells = tuple(int(n) for n in _require(section, "cells", "model"))
    spacing = tuple(float(h) for h in section.get("spacing", (1.0, 1.0)))
    n_t = int(_require(section, "nt", "model"))
    dt = float(_require(section, "dt", "model"))

    src_spec = _require(section, "sources", "model")
    if isinstance(src_spec, dict):
        count = int(src_spec.get("count", 1))
        row = int(src_spec.get("row", 0))
        xs = np.linspace(0, cells[0] - 1, count + 2)[1:-1].round().astype(int)
        sources = [(int(x), row) for x in xs]
    else:
        sources = [tuple(s) for s in src_spec]

    rec_spec = section.get("receivers", "top-row")
    if rec_spec == "top-row":
        receivers = [(ix, 0) for ix in range(cells[0])]
    else:
        receivers = [tuple(r) for r in rec_spec]

    wl = section.get("wavelet", {"peak_freq": 0.08})
    wavelet = ricker_wavelet(n_t, dt, float(wl["peak_freq"]), wl.get("delay"))

    sponge = section.get("sponge", {})
    model = WaveFwiModel(
        cells=cells,
        spacing=spacing,
        n_t=n_t,
        dt=dt,
        sources=sources,
        receivers=receivers,
        wavelet=wavelet,
        sponge_width=int(sponge.get("width", 10)),
        sponge_strength=float(sponge.get("strength", 0.015)),
        cfl_factor=float(section.get("cfl_factor", 0.5)),
    )
    true_field = _model_field(_require(section, "true_model", "model"), cells)
    model.generate_reference(true_field)
    theta0 = _model_field(_require(section, "initial_model", "model"), cells)
    return model, theta0


_BUILDERS = {
    "gaussian-mixture": _build_gaussian_mixture,
    "linear-toy": _build_linear_toy,
    "wave-fwi": _build_wave,
}

_SOLVER_KEYS = {
    "metric", "damping_lambda", "damping_metric", "cg_tol", "cg_max_iter",
    "rank_tol", "step0", "ls_shrink", "ls_max_halvings", "sufficient_decrease",
    "fixed_step", "max_iters", "max_propagations", "minibatch_size",
    "hutchinson_m", "seed", "path",
}


def load_experiment(path, seed_override=None, out_override=None) -> Experiment:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")

    model_section = _require(raw, "model", "top-level")
    kind = _require(model_section, "kind", "model")
    if kind not in _BUILDERS:
        raise ConfigError(f"unknown model kind {kind!r}")
    try:
        model, theta0 = _BUILDERS[kind](model_section)
    except (ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"bad model section: {exc}")

    solver_section = dict(raw.get("solver", {}))
    unknown = set(solver_section) - _SOLVER_KEYS
    if unknown:
        raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
    if seed_override is not None:
        solver_section["seed"] = int(seed_override)
    try:
        solver = NgdConfig(**solver_section)
        solver.metric_kind()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver section: {exc}")

    output = raw.get("output", {})
    out_dir = Path(out_override) if out_override else Path(output.get("directory", "out"))
    snapshot_every = int(output.get("snapshot_every", 0))

    ref_point = raw.get("reference_point")
    return Experiment(
        model=model,
        theta0=theta0,
        solver=solver,
        output_dir=out_dir,
        snapshot_every=snapshot_every,
        reference_point=None if ref_point is None else np.asarray(ref_point, float),
        raw=raw,
    )
