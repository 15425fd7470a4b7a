"""Experiment configuration: parse, validate, canonicalize, build objects.

The format is an INI-style key-value file with a fixed schema.  Unknown
sections or keys are rejected, defaults are filled at parse time and written
back on emission, so the canonical form (sorted sections and keys) has a
digest independent of key order in the source file.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import grid as g
from . import physics as ph
from .dynamics import StepperConfig
from .errors import ParseError, ValidationError


def _as_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {s!r}")


def _as_floats(s: str) -> tuple:
    return tuple(float(tok) for tok in s.replace(",", " ").split())


# schema: section -> key -> (converter, default-as-string or None if required)
_SCHEMA = {
    "grid": {
        "dim": (int, "1"),
        "nx": (int, "128"),
        "ny": (int, "32"),
        "lx": (float, "1.0"),
        "ly": (float, "1.0"),
        "bc": (str, "neumann"),
    },
    "potential": {
        "kind": (str, "logarithmic"),
        "theta": (float, "0.3"),
        "theta0": (float, "1.0"),
    },
    "mobility": {
        "kind": (str, "constant"),
        "m_star": (float, "1.0"),
        "coeffs": (_as_floats, "1.0"),
    },
    "diffusion": {
        "kind": (str, "constant"),
        "a_star": (float, "1.0"),
        "coeffs": (_as_floats, "1.0"),
    },
    "kernel": {
        "kind": (str, "gaussian"),
        "scale": (float, "0.1"),
        "support": (float, ""),
    },
    "model": {
        "preset": (str, ""),
        "alpha": (float, ""),
        "beta": (float, ""),
        "gamma": (float, ""),
        "sigma1": (int, ""),
        "sigma2": (int, ""),
        "nonlocal_consistency": (_as_bool, "on"),
    },
    "initial": {
        "kind": (str, "constant"),
        "mean": (float, "0.0"),
        "amplitude": (float, "0.0"),
        "mode": (int, "2"),
        "seed": (int, "0"),
        "path": (str, ""),
    },
    "time": {
        "dt_init": (float, "1e-5"),
        "dt_min": (float, "1e-12"),
        "dt_max": (float, "1e-2"),
        "t_max": (float, "10.0"),
        "snapshot_every": (int, "50"),
        "newton_tol": (float, "1e-10"),
        "newton_max_iter": (int, "50"),
        "tol_e": (float, "1e-10"),
        "steady_tol": (float, "1e-9"),
        "steady_dwell": (int, "100"),
    },
    "analysis": {
        "m_levels": (_as_floats, "0.1 1.0 10.0"),
        "delta_levels": (_as_floats, "0.01"),
        "good_t": (float, "0.0"),
        "degiorgi_nmax": (int, "10"),
        "degiorgi_delta": (float, ""),
        "degiorgi_tau": (float, ""),
        "omega_reps": (int, "8"),
        "omega_tol": (float, "1e-5"),
        "loja_window_frac": (float, "0.5"),
        "window_frac": (float, "0.5"),
        "eq_tol": (float, "1e-10"),
        "eq_seeds": (str, "constant tanh"),
    },
    "output": {
        "dir": (str, "runs/out"),
    },
}

_PRESET_BUILDERS = {"CH_NONLINEAR", "CONSERVED_AC", "NONLOCAL_CH"}


@dataclass
class ExperimentConfig:
    """Validated, defaults-filled experiment description."""

    values: dict

    # ---- construction -----------------------------------------------------

    @classmethod
    def from_string(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ParseError(f"config parse failure: {exc}") from exc
        values: dict = {}
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ParseError(f"unknown section [{section}]")
            values[section] = {}
            for key, raw in parser[section].items():
                if key not in _SCHEMA[section]:
                    raise ParseError(f"unknown key {key!r} in section [{section}]")
                conv, _ = _SCHEMA[section][key]
                try:
                    values[section][key] = conv(raw) if raw != "" else None
                except (ValueError, ValidationError) as exc:
                    raise ValidationError(
                        f"[{section}] {key} = {raw!r}: {exc}") from exc
        for section, keys in _SCHEMA.items():
            values.setdefault(section, {})
            for key, (conv, default) in keys.items():
                if key not in values[section]:
                    values[section][key] = conv(default) if default else None
        cfg = cls(values)
        cfg.validate()
        return cfg

    def validate(self):
        v = self.values
        dim = v["grid"]["dim"]
        if dim not in (1, 2):
            raise ValidationError("grid dim must be 1 or 2")
        if v["grid"]["bc"] not in (g.NEUMANN, g.PERIODIC):
            raise ValidationError(f"unknown boundary mode {v['grid']['bc']!r}")
        k = v["initial"]["mean"]
        if not (-1.0 < k < 1.0):
            raise ValidationError(
                f"initial mean {k} violates the admissible-mean constraint |k| < 1")
        if abs(k) + abs(v["initial"]["amplitude"]) > 1.0:
            raise ValidationError("mean + amplitude must keep |phi0| <= 1")
        preset = v["model"]["preset"]
        if preset:
            if preset not in _PRESET_BUILDERS:
                raise ValidationError(f"unknown preset {preset!r}")
            if v["model"]["sigma1"] is not None or v["model"]["sigma2"] is not None:
                raise ValidationError("sigma1/sigma2 are fixed by the preset")
        else:
            explicit = [v["model"][c] is not None for c in
                        ("alpha", "beta", "gamma", "sigma1", "sigma2")]
            if not all(explicit):
                raise ValidationError("without a preset all five constants are required")
        if v["initial"]["kind"] == "file":
            path = v["initial"]["path"]
            if not path or not Path(path).exists():
                raise ValidationError(f"initial data file not found: {path!r}")

    # ---- canonical form ---------------------------------------------------

    def canonical(self) -> str:
        out = io.StringIO()
        for section in sorted(self.values):
            out.write(f"[{section}]\n")
            for key in sorted(self.values[section]):
                val = self.values[section][key]
                if val is None:
                    continue
                if isinstance(val, tuple):
                    val = " ".join(repr(float(x)) for x in val)
                elif isinstance(val, bool):
                    val = "on" if val else "off"
                elif isinstance(val, float):
                    val = repr(val)
                out.write(f"{key} = {val}\n")
            out.write("\n")
        return out.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def write(self, path):
        Path(path).write_text(self.canonical())

    # ---- builders ----------------------------------------------------------

    def build_grid(self) -> g.Grid:
        gv = self.values["grid"]
        if gv["dim"] == 1:
            return g.Grid((gv["nx"],), (gv["lx"],), gv["bc"])
        return g.Grid((gv["nx"], gv["ny"]), (gv["lx"], gv["ly"]), gv["bc"])

    def build_model(self) -> ph.ModelConfig:
        v = self.values
        P = ph.PotentialSpec.logarithmic(v["potential"]["theta"],
                                         v["potential"]["theta0"])
        mob_kind = v["mobility"]["kind"]
        if mob_kind == "constant":
            mob = ph.MobilitySpec.constant(v["mobility"]["coeffs"][0])
        elif mob_kind == "poly":
            mob = ph.MobilitySpec.polynomial(v["mobility"]["coeffs"],
                                             v["mobility"]["m_star"])
        else:
            raise ValidationError(f"unknown mobility kind {mob_kind!r}")
        dif_kind = v["diffusion"]["kind"]
        if dif_kind == "constant":
            dif = ph.DiffusionSpec.constant(v["diffusion"]["coeffs"][0])
        elif dif_kind == "poly":
            dif = ph.DiffusionSpec.polynomial(v["diffusion"]["coeffs"],
                                              v["diffusion"]["a_star"])
        else:
            raise ValidationError(f"unknown diffusion kind {dif_kind!r}")
        kernel = ph.KernelSpec(v["kernel"]["kind"], v["kernel"]["scale"],
                               v["kernel"]["support"])
        m = self.values["model"]
        consistency = m["nonlocal_consistency"]
        preset = m["preset"]

        def pick(name, default):
            return default if m[name] is None else m[name]

        if preset == "CH_NONLINEAR":
            return ph.cahn_hilliard(P, mob, dif, alpha=pick("alpha", 1.0),
                                    gamma=pick("gamma", 0.01))
        if preset == "CONSERVED_AC":
            return ph.conserved_allen_cahn(P, beta=pick("beta", 1.0),
                                           gamma=pick("gamma", 0.01))
        if preset == "NONLOCAL_CH":
            return ph.nonlocal_cahn_hilliard(P, mob, kernel,
                                             alpha=pick("alpha", 1.0),
                                             nonlocal_consistency=consistency)
        return ph.ModelConfig(m["alpha"], m["beta"], m["gamma"],
                              m["sigma1"], m["sigma2"], P, mob, dif,
                              kernel=kernel if m["sigma2"] else None,
                              nonlocal_consistency=consistency)

    def build_stepper(self) -> StepperConfig:
        t = self.values["time"]
        return StepperConfig(
            dt_init=t["dt_init"], dt_min=t["dt_min"], dt_max=t["dt_max"],
            newton_tol=t["newton_tol"], newton_max_iter=t["newton_max_iter"],
            tol_e=t["tol_e"], snapshot_every=t["snapshot_every"],
            steady_tol=t["steady_tol"], steady_dwell=t["steady_dwell"],
        )

    def build_initial_field(self, grid: g.Grid) -> g.Field:
        iv = self.values["initial"]
        kind = iv["kind"]
        k = iv["mean"]
        amp = iv["amplitude"]
        if kind == "constant":
            return g.Field.constant(grid, k)
        if kind == "cosine-perturbation":
            axes = grid.cell_centers()
            prof = np.ones(grid.shape)
            for ax, L in zip(axes, grid.lengths):
                prof = prof * np.cos(iv["mode"] * np.pi * ax / L)
            return g.Field(grid, (k + amp * prof).ravel())
        if kind == "random-admissible":
            r = np.random.default_rng(np.random.Philox(iv["seed"]))
            noise = r.uniform(-amp, amp, grid.n_cells)
            noise -= noise.mean()
            vals = k + noise
            if np.max(np.abs(vals)) > 1.0:
                raise ValidationError("random initial data left [-1, 1]")
            return g.Field(grid, vals)
        if kind == "file":
            f = g.load_field(iv["path"])
            if f.grid != grid:
                raise ValidationError("initial data file grid does not match")
            return f
        raise ValidationError(f"unknown initial-data kind {kind!r}")

    @property
    def t_max(self) -> float:
        return self.values["time"]["t_max"]

    @property
    def output_dir(self) -> str:
        return self.values["output"]["dir"]

    def analysis_params(self) -> dict:
        return dict(self.values["analysis"])

    def initial_summary(self) -> dict:
        iv = self.values["initial"]
        return {"kind": iv["kind"], "mean": iv["mean"],
                "amplitude": iv["amplitude"], "seed": iv["seed"]}


def parse_config(path) -> ExperimentConfig:
    """Read and validate an experiment file; fills documented defaults."""
    p = Path(path)
    if not p.exists():
        raise ParseError(f"config file not found: {path}")
    return ExperimentConfig.from_string(p.read_text())
