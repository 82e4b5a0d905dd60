"""Experiment configuration files.

The format is INI-like: ``[section]`` headers, ``key = value`` lines and
``#`` / ``;`` comments (whole-line or after a value). Keys are case
sensitive. An empty value means "unset" for optional keys. Sections:

``[experiment]``
    ``trainer`` (sgd | fosi | dho2), ``workers``, ``seed``, ``init_seed``,
    ``backend`` (threads | cooperative), ``schedule_seed``, ``out``.
``[problem]``
    ``kind = quadratic`` with ``n``, ``condition``, ``spectrum``
    (outlier | geometric), ``outliers``, ``bulk_condition``, ``top``,
    ``rotation_seed``; or ``kind = mlp`` with ``dataset`` (a synthetic kind
    or a CSV path relative to the config file), ``samples``, ``data_seed``,
    ``features``, ``label``, ``task``, ``hidden`` (comma list),
    ``activation``, ``loss``, ``l2``.
``[train]``
    fields of :class:`dho2.trainers.TrainConfig` (``K``, ``P``, ``sigma``,
    ``base``, ``lr``, ...). ``sigma`` also accepts a preset name.
``[train.<trainer>]``
    overrides applied only when that trainer runs, e.g. a different base
    optimizer for the first-order baseline.
``[fosi]``
    fields of :class:`dho2.optimizer.FosiConfig`.
``[cost]``
    ``flop_rate``, ``bandwidth``, ``latency`` of the time model.

Unknown sections or keys are rejected. Command-line flags override file
values through :func:`apply_overrides`.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .accounting import CostModel
from .collectives import BACKENDS
from .exceptions import ConfigError
from .optimizer import BASE_KINDS, SIGMA_PRESETS, FosiConfig
from .oracle import DATASET_KINDS
from .trainers import TRAINERS, TrainConfig


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _strs(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _sigma(text: str) -> float:
    return SIGMA_PRESETS[text] if text in SIGMA_PRESETS else float(text)


def _opt(conv):
    def parse(text):
        return None if text == "" else conv(text)

    return parse


# key -> (parser, default text)
SCHEMA = {
    "experiment": {
        "trainer": (str, "dho2"),
        "workers": (int, "1"),
        "seed": (int, "0"),
        "init_seed": (int, "0"),
        "backend": (str, "threads"),
        "schedule_seed": (_opt(int), ""),
        "out": (_opt(str), ""),
    },
    "problem": {
        "kind": (str, "quadratic"),
        "n": (int, "100"),
        "condition": (float, "1e4"),
        "spectrum": (str, "outlier"),
        "outliers": (int, "8"),
        "bulk_condition": (float, "100"),
        "top": (float, "1.0"),
        "rotation_seed": (int, "7"),
        "dataset": (str, "two-gaussians"),
        "samples": (int, "512"),
        "data_seed": (int, "0"),
        "features": (_strs, ""),
        "label": (str, "label"),
        "task": (str, "classification"),
        "hidden": (_ints, "8"),
        "activation": (str, "tanh"),
        "loss": (_opt(str), ""),
        "l2": (float, "0"),
    },
    "train": {
        "K": (int, "25"),
        "P": (int, "4"),
        "epochs": (_opt(int), ""),
        "sigma": (_sigma, "5e-4"),
        "base": (str, "adamw"),
        "lr": (float, "1e-3"),
        "weight_decay": (float, "0.05"),
        "beta1": (float, "0.9"),
        "beta2": (float, "0.999"),
        "eps": (float, "1e-8"),
        "momentum": (float, "0.9"),
        "batch_size": (_opt(int), ""),
        "loss_target": (_opt(float), ""),
        "stop_at_target": (_bool, "false"),
        "sigma_zero_reduction": (_bool, "false"),
        "inner_tol": (_opt(float), ""),
        "check": (_bool, "true"),
    },
    "fosi": {
        "k": (int, "8"),
        "l": (int, "0"),
        "alpha": (float, "0.1"),
        "refresh_interval": (_opt(int), ""),
        "curvature_batch": (int, "512"),
        "eigval_floor": (float, "1e-6"),
        "lanczos_iters": (_opt(int), ""),
        "reorth": (_bool, "true"),
    },
    "cost": {
        "flop_rate": (float, "1e10"),
        "bandwidth": (float, "1.25e9"),
        "latency": (float, "5e-6"),
    },
}


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "quadratic"
    n: int = 100
    condition: float = 1e4
    spectrum: str = "outlier"
    outliers: int = 8
    bulk_condition: float = 100.0
    top: float = 1.0
    rotation_seed: int = 7
    dataset: str = "two-gaussians"
    samples: int = 512
    data_seed: int = 0
    features: tuple = ()
    label: str = "label"
    task: str = "classification"
    hidden: tuple = (8,)
    activation: str = "tanh"
    loss: str | None = None
    l2: float = 0.0

    @property
    def synthetic(self) -> bool:
        return self.dataset in DATASET_KINDS


@dataclass
class ExperimentConfig:
    """A validated experiment: problem, trainer settings and run plumbing.

    ``raw`` keeps the section/key/value text so the resolved configuration
    can be written next to the run artifacts.
    """

    trainer: str
    workers: int
    seed: int
    init_seed: int
    backend: str
    schedule_seed: int | None
    out: Path | None
    problem: ProblemSpec
    train: TrainConfig
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: Path = Path(".")

    def dump(self, path):
        parser = _parser()
        for section, values in self.raw.items():
            parser[section] = dict(values)
        with open(path, "w") as fh:
            parser.write(fh)


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    return parser


def _parse(section_schema, section, values):
    out = {}
    for key, (conv, default) in section_schema.items():
        text = values.get(key, default).strip()
        try:
            out[key] = conv(text)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {text!r} ({exc})", field=key) from None
    return out


def _require(cond, key, message):
    if not cond:
        raise ConfigError(f"{key}: {message}", field=key)


def _build(raw: dict, base_dir: Path) -> ExperimentConfig:
    for section, values in raw.items():
        name = section.split(".", 1)[0]
        if name not in SCHEMA or (section != name and (name != "train" or section[6:] not in TRAINERS)):
            raise ConfigError(f"unknown section [{section}]", field=section)
        for key in values:
            if key not in SCHEMA[name]:
                raise ConfigError(f"[{section}] unknown key {key!r}", field=key)

    exp = _parse(SCHEMA["experiment"], "experiment", raw.get("experiment", {}))
    _require(exp["trainer"] in TRAINERS, "trainer", f"expected one of {TRAINERS}, got {exp['trainer']!r}")
    _require(exp["workers"] >= 1, "workers", "must be at least 1")
    _require(exp["backend"] in BACKENDS, "backend", f"expected one of {BACKENDS}")

    train_values = dict(raw.get("train", {}))
    train_values.update(raw.get(f"train.{exp['trainer']}", {}))
    tr = _parse(SCHEMA["train"], "train", train_values)
    fo = _parse(SCHEMA["fosi"], "fosi", raw.get("fosi", {}))
    co = _parse(SCHEMA["cost"], "cost", raw.get("cost", {}))
    pr = _parse(SCHEMA["problem"], "problem", raw.get("problem", {}))

    _require(tr["K"] >= 1, "K", "must be at least 1")
    _require(tr["P"] >= 1, "P", "must be at least 1")
    _require(tr["epochs"] is None or tr["epochs"] >= 1, "epochs", "must be at least 1")
    _require(tr["sigma"] > 0 or tr["sigma_zero_reduction"], "sigma", "must be positive")
    _require(tr["base"] in BASE_KINDS, "base", f"expected one of {BASE_KINDS}")
    _require(tr["lr"] > 0, "lr", "must be positive")
    _require(tr["batch_size"] is None or tr["batch_size"] >= 1, "batch_size", "must be at least 1")
    _require(fo["k"] >= 0 and fo["l"] >= 0, "k", "k and l must be nonnegative")
    _require(fo["k"] + fo["l"] >= 1 or exp["trainer"] == "sgd", "k", "k + l must be at least 1")
    _require(fo["alpha"] > 0, "alpha", "must be positive")
    _require(fo["refresh_interval"] is None or fo["refresh_interval"] >= 1, "refresh_interval", "must be at least 1")
    _require(fo["eigval_floor"] >= 0, "eigval_floor", "must be nonnegative")
    _require(fo["curvature_batch"] >= 1, "curvature_batch", "must be at least 1")
    for key in ("flop_rate", "bandwidth"):
        _require(co[key] > 0, key, "must be positive")

    _require(pr["kind"] in ("quadratic", "mlp"), "kind", "expected quadratic or mlp")
    if pr["kind"] == "quadratic":
        _require(pr["n"] >= 1, "n", "must be positive")
        _require(pr["condition"] >= 1, "condition", "must be at least 1")
        _require(pr["spectrum"] in ("outlier", "geometric"), "spectrum", "expected outlier or geometric")
        _require(fo["k"] + fo["l"] <= pr["n"], "k", "k + l exceeds the problem dimension")
    else:
        _require(pr["activation"] in ("tanh", "relu"), "activation", "expected tanh or relu")
        _require(all(h >= 1 for h in pr["hidden"]), "hidden", "layer widths must be positive")
        _require(pr["task"] in ("classification", "regression"), "task", "expected classification or regression")
        if pr["dataset"] not in DATASET_KINDS:
            path = Path(pr["dataset"])
            if not path.is_absolute():
                path = base_dir / path
            _require(path.is_file(), "dataset", f"no such file: {path}")
            _require(len(pr["features"]) > 0, "features", "list the feature columns of the CSV file")
            pr["dataset"] = str(path)
        else:
            _require(pr["samples"] >= 1, "samples", "must be positive")

    fosi = FosiConfig(**fo)
    train = TrainConfig(
        trainer=exp["trainer"],
        fosi=fosi,
        seed=exp["seed"],
        init_seed=exp["init_seed"],
        cost=CostModel(**co),
        **tr,
    )
    out = Path(exp["out"]) if exp["out"] else None
    return ExperimentConfig(
        trainer=exp["trainer"],
        workers=exp["workers"],
        seed=exp["seed"],
        init_seed=exp["init_seed"],
        backend=exp["backend"],
        schedule_seed=exp["schedule_seed"],
        out=out,
        problem=ProblemSpec(**pr),
        train=train,
        raw=raw,
        base_dir=base_dir,
    )


def _read(text: str, origin: str) -> dict:
    parser = _parser()
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    return {s: dict(parser[s]) for s in parser.sections()}


def parse_config(text: str, base_dir=".", origin: str = "<string>") -> ExperimentConfig:
    return _build(_read(text, origin), Path(base_dir))


PRESETS = ("quadratic", "two-gaussians")


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}", field="config")
    return resources.files("dho2").joinpath("presets").joinpath(f"{name}.ini").read_text()


def load_config(path) -> ExperimentConfig:
    """Read a config file; a bare preset name is accepted when no such file exists."""
    p = Path(path)
    if not p.is_file():
        if str(path) in PRESETS:
            return parse_config(preset_text(str(path)), origin=f"preset:{path}")
        raise ConfigError(f"config file not found: {path}", field="config")
    return parse_config(p.read_text(), base_dir=p.parent, origin=str(p))


def apply_overrides(cfg: ExperimentConfig, trainer=None, workers=None, seed=None, out=None, **extra) -> ExperimentConfig:
    """Rebuild ``cfg`` with command-line values taking precedence over the file."""
    raw = {s: dict(v) for s, v in cfg.raw.items()}
    exp = raw.setdefault("experiment", {})
    for key, value in (("trainer", trainer), ("workers", workers), ("seed", seed), ("out", out), *extra.items()):
        if value is not None:
            exp[key] = str(value)
    return _build(raw, cfg.base_dir)
