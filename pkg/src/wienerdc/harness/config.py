"""Run configuration: YAML files with line-aware validation errors."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import yaml

from ..distances import ConvexTestClass
from ..errors import ConfigError, WienerDCError
from ..functionals import BreuerMajorSpec
from ..gausssim import AutocovarianceModel, CovarianceMatrix
from ..hermite import HermiteExpansion

KINDS = ("breuer-major-rate", "fourth-moment", "inequality-suite", "stein-diagnostic")
# fields that do not change results and are left out of the content hash
VOLATILE = ("out", "workers")


@dataclass
class RunConfig:
    kind: str = "breuer-major-rate"
    phi: dict = field(default_factory=lambda: {"terms": [[2, 1.0]]})
    model: dict = field(default_factory=lambda: {"kind": "iid"})
    partition: list = field(default_factory=lambda: [0.0, 0.5, 1.0])
    n_grid: list = field(default_factory=lambda: [64, 128, 256, 512, 1024])
    R: int = 10000
    gamma_R: int | None = None
    b_grid: list = field(default_factory=lambda: [2.0])
    seed: int = 0
    out: str = "results"
    workers: int = 1
    classes: list = field(default_factory=lambda: [{"kind": "halfspace", "count": 2000}])
    n_boot: int = 200
    dW_R: int = 1024
    dW_boot: int = 10
    instances: int = 10
    max_dim: int = 4
    max_N: int = 64
    ts: list = field(default_factory=lambda: [0.1, 0.01, 0.001])
    models: list = field(default_factory=list)

    # ------------------------------------------------------------ derived objects
    def expansion(self) -> HermiteExpansion:
        return parse_phi(self.phi)

    def autocov(self, rec: dict | None = None) -> AutocovarianceModel:
        return AutocovarianceModel.from_record(rec or self.model)

    def spec(self, n: int, model: dict | None = None) -> BreuerMajorSpec:
        return BreuerMajorSpec(self.expansion(), self.autocov(model), tuple(self.partition), int(n))

    def convex_classes(self) -> list[ConvexTestClass]:
        return [ConvexTestClass(**c) for c in self.classes]

    def to_record(self) -> dict:
        return asdict(self)

    def content_hash(self) -> str:
        rec = {k: v for k, v in self.to_record().items() if k not in VOLATILE}
        return hashlib.sha256(json.dumps(rec, sort_keys=True).encode()).hexdigest()[:16]

    def point_hash(self, n: int) -> str:
        return f"{self.content_hash()}:{n}"

    def validate(self, lines: dict | None = None):
        lines = lines or {}

        def fail(name, msg):
            where = f"line {lines[name]}: " if name in lines else ""
            raise ConfigError(f"{where}field '{name}': {msg}")

        if self.kind not in KINDS:
            fail("kind", f"must be one of {', '.join(KINDS)}, got {self.kind!r}")
        if not isinstance(self.n_grid, list) or not self.n_grid:
            fail("n_grid", "must be a non-empty list of sample sizes")
        if any(not isinstance(n, int) or n < 1 for n in self.n_grid):
            fail("n_grid", "entries must be positive integers")
        if not isinstance(self.R, int) or self.R < 2:
            fail("R", "must be an integer >= 2")
        if self.gamma_R is not None and (not isinstance(self.gamma_R, int) or self.gamma_R < 2):
            fail("gamma_R", "must be an integer >= 2")
        if not isinstance(self.seed, int) or self.seed < 0:
            fail("seed", "must be a nonnegative integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            fail("workers", "must be a positive integer")
        if any(not 1 <= float(b) <= 2 for b in self.b_grid):
            fail("b_grid", "exponents must lie in [1, 2]")
        if any(not 0 < float(t) < 1 for t in self.ts):
            fail("ts", "smoothing levels must lie in (0, 1)")
        checks = [("phi", self.expansion), ("model", self.autocov), ("classes", self.convex_classes)]
        checks += [("models", lambda: [self.autocov(m) for m in self.models])]
        if self.kind in ("breuer-major-rate", "stein-diagnostic"):
            checks.append(("partition", lambda: [self.spec(n) for n in self.n_grid]))
        for name, build in checks:
            try:
                build()
            except (WienerDCError, KeyError, TypeError, ValueError) as exc:
                fail(name, str(exc))
        return self


def parse_phi(spec) -> HermiteExpansion:
    """``"H2"``, ``{"terms": [[k, a], ...]}`` or ``{"terms": {k: a}}``."""
    if isinstance(spec, str):
        if not spec.upper().startswith("H") or not spec[1:].isdigit():
            raise ConfigError(f"cannot read Hermite shorthand {spec!r}")
        return HermiteExpansion.from_terms({int(spec[1:]): 1.0})
    terms = spec["terms"]
    if isinstance(terms, dict):
        terms = list(terms.items())
    return HermiteExpansion.from_terms({int(k): float(a) for k, a in terms}, K=spec.get("K"))


def parse_sigma(text: str) -> CovarianceMatrix:
    """``"1,0;0,1"`` -> 2x2 identity."""
    import numpy as np

    try:
        rows = [[float(v) for v in r.split(",")] for r in text.split(";")]
        return CovarianceMatrix(np.array(rows))
    except ValueError as exc:
        raise ConfigError(f"cannot read covariance {text!r}: {exc}") from exc


def _key_lines(text: str) -> dict:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def loads(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: cannot parse: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = _key_lines(text)
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{source}:{lines.get(key, '?')}: unknown field '{key}'")
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    try:
        return cfg.validate(lines)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, source=path)


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_record(), sort_keys=False)
