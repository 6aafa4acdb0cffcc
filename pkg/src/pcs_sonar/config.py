"""Sectioned key=value run configuration with a strict schema.

Grammar: ``[section]`` headers, ``key = value`` lines, ``#`` starts a comment
anywhere, lists are comma-separated.  Unknown sections or keys are errors
(no silent typo absorption), reported with their line number.  Serialization
is canonical: every key in schema order, floats via repr, so a config
round-trips to a stable byte-identical form.
"""

from __future__ import annotations

from dataclasses import dataclass


from .dict_learn import DfdlConfig
from .patch_sampler import PatchConfig
from .pcs_classifier import CvConfig
from .sas_synth import DatasetManifest
from .sparse_solver import SolverOptions


class ConfigError(ValueError):
    """Configuration file or value problem (exit code 1 territory)."""


# (type, default) per key; types: int, float, str, bool, list_int, list_float, list_str
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "paths": {
        "dataset_root": ("str", "data"),
        "model_dir": ("str", "model"),
        "output_dir": ("str", "out"),
        "model_cache_dir": ("str", ""),  # reuse trained models across sweeps
    },
    "experiment": {
        "training_sizes": ("list_int", [40]),
        "regimes": ("list_str", ["narrow"]),
        "sigmas": ("list_float", [0.0]),
        "partitions": ("int", 6),
        "test_per_class": ("int", 9),
        "train_regime": ("str", "narrow"),
        "train_size": ("int", 40),
        "noise_mode": ("str", "multiplicative"),
        "seed": ("int", 0),
    },
    "patch": {
        "b1": ("int", 28),
        "b2": ("int", 28),
        "patches_per_image": ("int", 17),
        "threshold_percentile": ("float", 65.0),
        "min_survive_fraction": ("float", 0.5),
        "seed": ("int", 0),
        "per_class_subsample": ("int", 0),  # 0 keeps every patch
    },
    "solver": {
        "alpha": ("float", 1e-3),
        "residual_floor": ("float", 1e-8),
        "max_iter": ("int", 200),
        "flip_tol": ("float", 1e-9),
        "init_lambda_fracs": ("list_float", [0.1]),
        "empty_start": ("bool", False),
        "max_support": ("int", 12),  # 0 means uncapped
    },
    "dfdl": {
        "enabled": ("bool", True),
        "rho": ("float", 0.1),
        "sparsity_level": ("int", 4),
        "atoms_per_class": ("int", 64),
        "outer_iters": ("int", 10),
        "seed": ("int", 0),
    },
    "cv": {
        "trials": ("int", 25),
        "xi_lo": ("float", 1e-8),
        "xi_hi": ("float", 1e-4),
        "holdout_fraction": ("float", 0.25),
        "seed": ("int", 0),
    },
    "anomaly": {
        "alpha": ("float", 0.001),
        "min_reference": ("int", 20),
        "min_test": ("int", 5),
    },
    "src": {
        "lambda": ("float", 0.01),
    },
    "synth": {
        "classes": ("list_str", ["block", "cone", "sphere", "cylinder"]),
        "per_class": ("int", 60),
        "anomaly_class": ("str", "torus"),
        "anomaly_count": ("int", 22),
        "regimes": ("list_str", ["narrow"]),
        "sigmas": ("list_float", [0.0]),
        "seed": ("int", 0),
    },
}


def _parse_scalar(kind: str, raw: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "bool":
            if raw.lower() in ("true", "false"):
                return raw.lower() == "true"
            raise ValueError("expected true or false")
        base = kind.removeprefix("list_")
        items = [p.strip() for p in raw.split(",") if p.strip() != ""]
        return [_parse_scalar(base, item, where) for item in items]
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind} ({exc})") from None


def _format_value(kind: str, value) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind.startswith("list_"):
        base = kind.removeprefix("list_")
        return ",".join(_format_value(base, v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    """Typed view over the parsed sections; builders hand out module configs."""

    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def patch_config(self) -> PatchConfig:
        p = self.values["patch"]
        return PatchConfig(
            b1=p["b1"], b2=p["b2"], patches_per_image=p["patches_per_image"],
            threshold_percentile=p["threshold_percentile"],
            min_survive_fraction=p["min_survive_fraction"], seed=p["seed"],
        )

    def solver_options(self) -> SolverOptions:
        s = self.values["solver"]
        return SolverOptions(
            max_iter=s["max_iter"], flip_tol=s["flip_tol"],
            init_lambda_fracs=tuple(s["init_lambda_fracs"]),
            empty_start=s["empty_start"],
            max_support=s["max_support"] if s["max_support"] > 0 else None,
        )

    def dfdl_config(self) -> DfdlConfig:
        d = self.values["dfdl"]
        return DfdlConfig(
            rho=d["rho"], sparsity_level=d["sparsity_level"],
            atoms_per_class=d["atoms_per_class"], outer_iters=d["outer_iters"],
            seed=d["seed"],
        )

    def cv_config(self) -> CvConfig:
        c = self.values["cv"]
        return CvConfig(
            trials=c["trials"], xi_lo=c["xi_lo"], xi_hi=c["xi_hi"],
            alpha=self.values["solver"]["alpha"],
            holdout_fraction=c["holdout_fraction"], seed=c["seed"],
            residual_floor=self.values["solver"]["residual_floor"],
        )

    def dataset_manifest(self) -> DatasetManifest:
        s = self.values["synth"]
        return DatasetManifest(
            classes=tuple(s["classes"]), per_class=s["per_class"],
            anomaly_class=s["anomaly_class"] or None,
            anomaly_count=s["anomaly_count"], regimes=tuple(s["regimes"]),
            sigmas=tuple(s["sigmas"]), seed=s["seed"],
        )

    def validate(self) -> "RunConfig":
        for section, builder in (
            ("patch", self.patch_config),
            ("solver", self.solver_options),
            ("dfdl", self.dfdl_config),
            ("cv", self.cv_config),
            ("synth", self.dataset_manifest),
        ):
            try:
                builder()
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"section [{section}]: {exc}") from None
        e = self.values["experiment"]
        if e["noise_mode"] not in ("multiplicative", "complex_additive"):
            raise ConfigError("section [experiment]: noise_mode must be "
                              "multiplicative or complex_additive")
        if e["partitions"] < 1 or e["test_per_class"] < 1:
            raise ConfigError("section [experiment]: partitions and test_per_class must be >= 1")
        return self


def default_config() -> RunConfig:
    values = {sec: {k: (list(v) if isinstance(v, list) else v) for k, (_, v) in keys.items()}
              for sec, keys in SCHEMA.items()}
    return RunConfig(values)


def loads_config(text: str) -> RunConfig:
    cfg = default_config()
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        kind, _ = SCHEMA[section][key]
        cfg.values[section][key] = _parse_scalar(kind, raw, f"line {lineno}")
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads_config(text)


def dumps_config(cfg: RunConfig) -> str:
    """Canonical serialization: all sections and keys, schema order."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, (kind, _) in keys.items():
            out.append(f"{key} = {_format_value(kind, cfg.values[section][key])}")
        out.append("")
    return "\n".join(out)
