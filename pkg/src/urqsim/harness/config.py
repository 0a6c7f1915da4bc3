"""Experiment spec files.

Flat ``key = value`` lines with dotted keys; ``#`` starts a comment. Run
settings given at top level are defaults for every run, and
``run.<name>.<key>`` overrides them for one run::

    dataset = gendense
    dataset.n = 4000
    dataset.d = 100
    workers = 3
    loss.rho = n
    loss.sigma = 1
    max_iters = 200
    seeds = 0,1,2
    runs = gs, tq
    run.gs.quantizer = sparsifier
    run.gs.quantizer.p = 0.5
    run.tq.quantizer = ternary
    gamma = auto:qgd_sc

See the README for the full key list.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..algorithms import ALGORITHMS, AutoStep, ConfigError, RunConfig
from ..loss import LossConfig
from ..quantizers import KINDS, QuantizerSpec
from ..schedule import DelaySchedule, ScheduleError
from ..sparsity import DATA, GRADIENT

_NAME = re.compile(r"^[A-Za-z0-9_\-]+$")

RUN_KEYS = {
    "algorithm", "quantizer", "quantizer.p", "quantizer.s", "gamma", "theta", "fraction",
    "delay.kind", "delay.tau", "delay.seed", "max_iters", "record_sigma_k",
}
GLOBAL_KEYS = {
    "dataset", "dataset.path", "dataset.n", "dataset.d", "dataset.seed", "dataset.nnz_per_row",
    "dataset.noise", "dataset.col_decay", "dataset.dim", "normalize", "workers", "loss.rho",
    "loss.sigma", "sparsity_source", "seeds", "runs", "outputs", "plot", "theory.eps_ratio",
    "sigma_table.quantizers", "sigma_table.draws", "sigma_table.iterates",
    "sigma_table.level", "sigma_table.vectors", "sigma_table.seed",
}
DATASETS = ("gendense", "gensparse", "regression", "libsvm")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gendense"
    path: Optional[str] = None
    n: int = 4000
    d: int = 100
    seed: int = 0
    nnz_per_row: int = 5
    noise: float = 0.0
    col_decay: float = 1.0
    dim: Optional[int] = None


@dataclass(frozen=True)
class SigmaTableSpec:
    quantizers: tuple[QuantizerSpec, ...] = ()
    draws: int = 100
    iterates: int = 5
    level: str = "worker"
    vectors: str = "gradient"
    seed: int = 0


@dataclass
class ExperimentSpec:
    dataset: DatasetSpec
    loss_rho: float | str = "n"
    loss_sigma: float = 1.0
    workers: int = 3
    normalize: bool = True
    sparsity_source: str = DATA
    seeds: list[int] = field(default_factory=lambda: [0])
    runs: list[RunConfig] = field(default_factory=list)
    outputs: str = "out"
    plot: bool = True
    eps_ratio: float = 1e-6
    sigma_table: SigmaTableSpec = field(default_factory=SigmaTableSpec)
    base_dir: Path = field(default_factory=Path.cwd)

    def loss(self, n: int) -> LossConfig:
        rho = float(n) if self.loss_rho == "n" else float(self.loss_rho)
        return LossConfig(rho, self.loss_sigma)


def parse_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected key = value")
        out[key.strip()] = val.strip()
    return out


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _num(key: str, s: str, typ=float):
    try:
        return typ(s)
    except ValueError:
        raise ConfigError(f"{key}: not a valid {typ.__name__}: {s!r}") from None


def parse_quantizer(kind: str, p: Optional[str] = None, s: Optional[str] = None) -> QuantizerSpec:
    aliases = {"gs": "sparsifier", "tq": "ternary", "lp": "lowprec", "fp": "identity",
               "none": "identity"}
    kind = aliases.get(kind.lower(), kind.lower())
    if kind not in KINDS:
        raise ConfigError(f"unknown quantizer {kind!r}")
    try:
        if kind == "sparsifier":
            return QuantizerSpec.sparsifier(_num("quantizer.p", p if p is not None else "0.5"))
        if kind == "lowprec":
            return QuantizerSpec.lowprec(_num("quantizer.s", s if s is not None else "4", int))
        return QuantizerSpec(kind)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_quantizer_token(token: str) -> QuantizerSpec:
    """``gs:0.5``, ``tq``, ``lp:4``, ``fp``."""
    kind, _, arg = token.strip().partition(":")
    k = kind.lower()
    if k in ("gs", "sparsifier"):
        return parse_quantizer(k, p=arg or None)
    if k in ("lp", "lowprec"):
        return parse_quantizer(k, s=arg or None)
    return parse_quantizer(k)


def parse_gamma(key: str, s: str, theta: float, fraction: Optional[float]):
    if s.startswith("auto"):
        _, _, rule = s.partition(":")
        if not rule:
            raise ConfigError(f"{key}: auto step needs a rule, e.g. auto:qgd_sc")
        return AutoStep(rule.strip(), theta, fraction)
    g = _num(key, s)
    if not g > 0:
        raise ConfigError(f"{key}: step size must be positive")
    return g


def _run_config(name: str, kv: dict[str, str], m: int, seed: int) -> RunConfig:
    alg = kv.get("algorithm", "qgd").lower()
    if alg not in ALGORITHMS:
        raise ConfigError(f"run {name}: unknown algorithm {alg!r}")
    q = parse_quantizer(kv.get("quantizer", "identity"), kv.get("quantizer.p"), kv.get("quantizer.s"))
    theta = _num("theta", kv.get("theta", "1"))
    fraction = _num("fraction", kv["fraction"]) if "fraction" in kv else None
    gamma = parse_gamma(f"run.{name}.gamma", kv.get("gamma", "auto:" + _default_rule(alg)), theta, fraction)
    try:
        sched = DelaySchedule(kv.get("delay.kind", "zero").lower(),
                              _num("delay.tau", kv.get("delay.tau", "0"), int), m,
                              _num("delay.seed", kv.get("delay.seed", "0"), int))
        return RunConfig(alg, q, gamma, sched, _num("max_iters", kv.get("max_iters", "100"), int),
                         seed, _bool(kv.get("record_sigma_k", "false")), name=name)
    except ScheduleError as exc:
        raise ConfigError(f"run {name}: {exc}") from None


def _default_rule(alg: str) -> str:
    return {"qgd": "qgd_sc", "ciag": "ciag_sc", "dqgd": "dqgd", "qiag": "qiag_sc"}[alg]


def build_spec(kv: dict[str, str], base_dir: Path | None = None) -> ExperimentSpec:
    for key in kv:
        if key.startswith("run."):
            parts = key.split(".", 2)
            if len(parts) < 3 or parts[2] not in RUN_KEYS:
                raise ConfigError(f"unknown run key {key!r}")
        elif key not in GLOBAL_KEYS and key not in RUN_KEYS:
            raise ConfigError(f"unknown key {key!r}")

    kind = kv.get("dataset", "gendense").lower()
    if kind not in DATASETS:
        raise ConfigError(f"unknown dataset {kind!r}; expected one of {DATASETS}")
    if kind == "libsvm" and "dataset.path" not in kv:
        raise ConfigError("dataset = libsvm needs dataset.path")
    ds = DatasetSpec(
        kind, kv.get("dataset.path"),
        _num("dataset.n", kv.get("dataset.n", "4000"), int),
        _num("dataset.d", kv.get("dataset.d", "100"), int),
        _num("dataset.seed", kv.get("dataset.seed", "0"), int),
        _num("dataset.nnz_per_row", kv.get("dataset.nnz_per_row", "5"), int),
        _num("dataset.noise", kv.get("dataset.noise", "0")),
        _num("dataset.col_decay", kv.get("dataset.col_decay", "1")),
        _num("dataset.dim", kv["dataset.dim"], int) if "dataset.dim" in kv else None,
    )
    m = _num("workers", kv.get("workers", "3"), int)
    if m < 1:
        raise ConfigError("workers must be >= 1")
    rho = kv.get("loss.rho", "n")
    rho_val: float | str = "n" if rho == "n" else _num("loss.rho", rho)
    seeds = [_num("seeds", s, int) for s in kv.get("seeds", "0").split(",") if s.strip()]
    if not seeds:
        raise ConfigError("seeds must not be empty")
    source = kv.get("sparsity_source", DATA)
    if source not in (DATA, GRADIENT):
        raise ConfigError(f"sparsity_source must be {DATA} or {GRADIENT}")

    names = [r.strip() for r in kv.get("runs", "main").split(",") if r.strip()]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate run names")
    defaults = {k: v for k, v in kv.items() if k in RUN_KEYS}
    runs = []
    for name in names:
        if not _NAME.match(name):
            raise ConfigError(f"bad run name {name!r}")
        merged = dict(defaults)
        prefix = f"run.{name}."
        merged.update({k[len(prefix):]: v for k, v in kv.items() if k.startswith(prefix)})
        runs.append(_run_config(name, merged, m, seeds[0]))
    stray = {k.split(".")[1] for k in kv if k.startswith("run.")} - set(names)
    if stray:
        raise ConfigError(f"keys for undeclared runs: {sorted(stray)}")

    sig = SigmaTableSpec(
        tuple(parse_quantizer_token(t) for t in
              kv.get("sigma_table.quantizers", "gs:0.5,tq,lp:4").split(",") if t.strip()),
        _num("sigma_table.draws", kv.get("sigma_table.draws", "100"), int),
        _num("sigma_table.iterates", kv.get("sigma_table.iterates", "5"), int),
        kv.get("sigma_table.level", "worker"),
        kv.get("sigma_table.vectors", "gradient"),
        _num("sigma_table.seed", kv.get("sigma_table.seed", "0"), int),
    )
    if sig.level not in ("worker", "sample") or sig.vectors not in ("gradient", "data"):
        raise ConfigError("sigma_table.level must be worker|sample, vectors gradient|data")

    return ExperimentSpec(
        ds, rho_val, _num("loss.sigma", kv.get("loss.sigma", "1")), m,
        _bool(kv.get("normalize", "true")), source, seeds, runs,
        kv.get("outputs", "out"), _bool(kv.get("plot", "true")),
        _num("theory.eps_ratio", kv.get("theory.eps_ratio", "1e-6")), sig,
        base_dir or Path.cwd(),
    )


def load_spec(path: str | Path, overrides: Optional[dict[str, str]] = None) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    kv = parse_lines(text)
    kv.update(overrides or {})
    return build_spec(kv, path.parent)
