"""INI run configuration; command-line flags override file keys.

Example::

    [data]
    stations = stations.csv
    observations = observations.csv
    coords = planar            ; or lonlat (great-circle km)

    [model]
    model = weighted           ; weighted | weighted_gibbs | unweighted | pc_prior
    weights = fixed            ; fixed | gibbs (weighted model only)
    weight_source = smoothed   ; smoothed | raw
    estimator = naive          ; naive | madogram
    cov_kind = powered_exponential
    smoothness = 1.0
    terms_mu = 1, x, y
    terms_log_sigma = 1, x, y
    terms_xi = 1

    [priors]
    beta_prior_var = 1e6
    sill_mu = 2, 4.0           ; inverse-gamma (shape, scale); omit for variogram-based
    range_mu = 2, 0.1          ; gamma (shape, rate)

    [sampler]
    iterations = 20000
    burn_in = 2000
    thin = 10
    seed = 0
    chains = 1

    [run]
    threads = 1
    output = out
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .io import COORD_MODES, ValidationError
from .model import DEFAULT_TERMS, PROCESSES, HyperPrior, ModelSpec
from .sampler import SamplerConfig

MODEL_NAMES = ("weighted", "weighted_gibbs", "unweighted", "pc_prior")
WEIGHT_UPDATES = ("fixed", "gibbs")


@dataclass
class RunConfig:
    stations: str | None = None
    observations: str | None = None
    coords: str = "planar"
    model: str = "weighted"
    weights: str = "fixed"
    weight_source: str = "smoothed"
    estimator: str = "naive"
    cov_kind: str = "powered_exponential"
    smoothness: float = 1.0
    sample_smoothness: bool = False
    terms: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_TERMS.items()})
    beta_prior_var: float = 1e6
    hyperpriors: dict | None = None
    iterations: int = 20000
    burn_in: int = 2000
    thin: int = 10
    seed: int = 0
    chains: int = 1
    threads: int = 1
    output: str = "out"

    def validate(self) -> "RunConfig":
        if self.coords not in COORD_MODES:
            raise ValidationError(f"coords must be one of {COORD_MODES}")
        if self.model not in MODEL_NAMES:
            raise ValidationError(f"model must be one of {MODEL_NAMES}")
        if self.weights not in WEIGHT_UPDATES:
            raise ValidationError(f"weights must be one of {WEIGHT_UPDATES}")
        if self.threads < 1:
            raise ValidationError("threads must be positive")
        try:
            self.model_spec()
            self.sampler_config()
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        return self

    @property
    def model_name(self) -> str:
        if self.model == "weighted" and self.weights == "gibbs":
            return "weighted_gibbs"
        return self.model

    def model_spec(self) -> ModelSpec:
        return ModelSpec.named(self.model_name, beta_prior_var=self.beta_prior_var,
                               hyperpriors=self.hyperpriors, cov_kind=self.cov_kind,
                               smoothness=self.smoothness,
                               sample_smoothness=self.sample_smoothness,
                               weight_source=self.weight_source,
                               weight_estimator=self.estimator)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(iterations=self.iterations, burn_in=self.burn_in, thin=self.thin,
                             seed=self.seed, chains=self.chains)

    def as_dict(self) -> dict:
        """Settings that determine results; execution-only keys (threads, output) are left out."""
        d = dataclasses.asdict(self)
        del d["threads"], d["output"]
        if self.hyperpriors is not None:
            d["hyperpriors"] = {k: dataclasses.asdict(v) for k, v in self.hyperpriors.items()}
        return d

    def update(self, **overrides) -> "RunConfig":
        """Apply non-None overrides (command-line flags)."""
        for k, v in overrides.items():
            if v is not None:
                if not hasattr(self, k):
                    raise ValidationError(f"unknown setting {k!r}")
                setattr(self, k, v)
        return self


def _pair(text: str, key: str):
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError:
        raise ValidationError(f"{key} must be two comma-separated numbers") from None
    return a, b


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        if not parser.read(path, encoding="utf-8"):
            raise ValidationError(f"{path}: config file not found")
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    known = {"data", "model", "priors", "sampler", "run"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ValidationError(f"{path}: unknown section(s) {sorted(unknown)}")
    try:
        if parser.has_section("data"):
            s = parser["data"]
            cfg.stations = s.get("stations", cfg.stations)
            cfg.observations = s.get("observations", cfg.observations)
            cfg.coords = s.get("coords", cfg.coords)
        if parser.has_section("model"):
            s = parser["model"]
            cfg.model = s.get("model", cfg.model)
            cfg.weights = s.get("weights", cfg.weights)
            cfg.weight_source = s.get("weight_source", cfg.weight_source)
            cfg.estimator = s.get("estimator", cfg.estimator)
            cfg.cov_kind = s.get("cov_kind", cfg.cov_kind)
            cfg.smoothness = s.getfloat("smoothness", cfg.smoothness)
            cfg.sample_smoothness = s.getboolean("sample_smoothness", cfg.sample_smoothness)
            for k in PROCESSES:
                if f"terms_{k}" in s:
                    cfg.terms[k] = [t.strip() for t in s[f"terms_{k}"].split(",") if t.strip()]
        if parser.has_section("priors"):
            s = parser["priors"]
            cfg.beta_prior_var = s.getfloat("beta_prior_var", cfg.beta_prior_var)
            if any(f"{p}_{k}" in s for p in ("sill", "range") for k in PROCESSES):
                hp = {}
                for k in PROCESSES:
                    if f"sill_{k}" not in s or f"range_{k}" not in s:
                        raise ValidationError(f"priors: give sill_{k} and range_{k} together "
                                              "for every process, or none")
                    smooth = _pair(s[f"smoothness_{k}"], f"smoothness_{k}") \
                        if f"smoothness_{k}" in s else (2.0, 2.0)
                    hp[k] = HyperPrior(_pair(s[f"sill_{k}"], f"sill_{k}"),
                                       _pair(s[f"range_{k}"], f"range_{k}"), smooth)
                cfg.hyperpriors = hp
        if parser.has_section("sampler"):
            s = parser["sampler"]
            cfg.iterations = s.getint("iterations", cfg.iterations)
            cfg.burn_in = s.getint("burn_in", cfg.burn_in)
            cfg.thin = s.getint("thin", cfg.thin)
            cfg.seed = s.getint("seed", cfg.seed)
            cfg.chains = s.getint("chains", cfg.chains)
        if parser.has_section("run"):
            s = parser["run"]
            cfg.threads = s.getint("threads", cfg.threads)
            cfg.output = s.get("output", cfg.output)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return cfg
