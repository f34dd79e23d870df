"""Analysis-model families, parameter states, likelihood and prior evaluation.

The growth model for an outcome observed on client i at session s is

    y = beta0 + beta1 * t + sum_k beta_cov[k] * x[k]
        + b0[i] + b1[i] * t + gamma[s] + noise,

with gamma the total session effect, decomposed into a structured component u
(CAR prior over the session graph) and an unstructured component nu
(independent normals). Family LGM drops gamma entirely; HLM keeps only nu.
Under a pattern mixture the fixed intercept/slope become within-pattern
("starred") values, short-stay clients get offsets (delta0, delta1), and the
marginal intercept/slope are recovered per draw as starred + pi * offset.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, Observation
from .errors import ConfigError
from .graph import SessionGraph, Unit

# Proper stand-in for the flat intercept prior wherever an algorithm needs a
# density; wide enough to be numerically flat at outcome scale.
BETA0_SURROGATE_VAR = 1e8


class Family(enum.Enum):
    LGM = "lgm"
    HLM = "hlm"
    CAR = "car"


class Closeness(enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings. Gamma(a1, a2) is shape/rate, so E = a1/a2.

    ``psi_*`` pairs are the Gamma priors on the precisions of the observation
    noise, client intercepts, client slopes and unstructured session effects;
    (d0, d1) is the Gamma prior on 1/delta for the structured effects.
    """

    psi_y0: float = 1.0
    psi_y1: float = 1.0
    psi_00: float = 1.0
    psi_01: float = 1.0
    psi_10: float = 1.0
    psi_11: float = 1.0
    psi_nu0: float = 0.10
    psi_nu1: float = 0.10
    d0: float = 0.10
    d1: float = 0.2
    sigma2_beta1: float = 100.0
    sigma2_beta: float = 100.0
    delta0_prior_mean: float = 0.0
    delta0_prior_var: float = 10.0
    delta1_prior_mean: float = 0.0
    delta1_prior_var: float = 10.0
    pi_a: float = 1.0
    pi_b: float = 1.0

    def __post_init__(self):
        for name in ("psi_y0", "psi_y1", "psi_00", "psi_01", "psi_10", "psi_11",
                     "psi_nu0", "psi_nu1", "d0", "d1", "pi_a", "pi_b"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"hyperparameter {name} must be strictly positive")
        for name in ("sigma2_beta1", "sigma2_beta", "delta0_prior_var",
                     "delta1_prior_var"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"hyperparameter {name} must be strictly positive")


def hyper_choice7() -> Hyperparameters:
    """Structured/unstructured variances given equal prior weight."""
    return Hyperparameters(psi_nu0=0.10, psi_nu1=0.10, d0=0.10, d1=0.2)


def hyper_choice8() -> Hyperparameters:
    """Independent specification with more prior mass near zero for delta."""
    return Hyperparameters(psi_nu0=1.0, psi_nu1=1.0, d0=0.5, d1=0.0005)


HYPER_PRESETS = {"choice7": hyper_choice7, "choice8": hyper_choice8}


@dataclass(frozen=True)
class ModelSpec:
    """One analysis-model configuration.

    ``family`` LGM has no session effects, so closeness/unit must be unset;
    HLM keeps the unit (i.i.d. effects per unit) and ignores closeness; CAR
    uses both. ``pattern_mixture`` adds the two-pattern fixed-effect shifts.
    """

    family: Family
    pattern_mixture: bool = False
    closeness: Closeness | None = None
    unit: Unit | None = None
    custom_weights: tuple[tuple[str, str, float], ...] | None = None
    hyper: Hyperparameters = field(default_factory=hyper_choice7)

    def __post_init__(self):
        if self.family is Family.LGM:
            if self.closeness is not None or self.unit is not None:
                raise ConfigError("LGM has no session effects; closeness/unit must be unset")
        if self.family is Family.CAR and self.closeness is None:
            object.__setattr__(self, "closeness", Closeness.TYPE1)
        if self.family in (Family.HLM, Family.CAR) and self.unit is None:
            object.__setattr__(self, "unit", Unit.SESSION)
        if self.closeness is Closeness.CUSTOM and not self.custom_weights:
            raise ConfigError("custom closeness requires custom_weights")
        if self.custom_weights is not None and self.closeness is not Closeness.CUSTOM:
            raise ConfigError("custom_weights given but closeness is not custom")

    @property
    def has_session_effects(self) -> bool:
        return self.family in (Family.HLM, Family.CAR)

    def label(self) -> str:
        base = self.family.name
        if self.pattern_mixture:
            base = "PMM" if self.family is Family.LGM else f"{base}+PMM"
        return base

    def to_json_dict(self) -> dict:
        out: dict = {
            "family": self.family.value,
            "pattern_mixture": self.pattern_mixture,
            "hyper": {k: getattr(self.hyper, k) for k in Hyperparameters.__dataclass_fields__},
        }
        if self.closeness is not None:
            if self.closeness is Closeness.CUSTOM:
                out["closeness"] = {"custom": [list(t) for t in self.custom_weights]}
            else:
                out["closeness"] = self.closeness.value
        if self.unit is not None:
            out["unit"] = self.unit.value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @staticmethod
    def from_json_dict(block: dict) -> "ModelSpec":
        try:
            family = Family(block["family"])
        except (KeyError, ValueError):
            raise ConfigError(f"unknown or missing model family in {block!r}") from None
        closeness = None
        custom = None
        raw = block.get("closeness")
        if isinstance(raw, str):
            try:
                closeness = Closeness(raw)
            except ValueError:
                raise ConfigError(f"unknown closeness {raw!r}") from None
            if closeness is Closeness.CUSTOM:
                raise ConfigError("custom closeness requires a weight list")
        elif isinstance(raw, dict):
            if set(raw) != {"custom"}:
                raise ConfigError(f"malformed closeness block {raw!r}")
            closeness = Closeness.CUSTOM
            custom = tuple((str(a), str(b), float(w)) for a, b, w in raw["custom"])
        unit = None
        if "unit" in block and block["unit"] is not None:
            try:
                unit = Unit(block["unit"])
            except ValueError:
                raise ConfigError(f"unknown unit {block['unit']!r}") from None
        hyper_raw = block.get("hyper", "choice7")
        if isinstance(hyper_raw, str):
            if hyper_raw not in HYPER_PRESETS:
                raise ConfigError(f"unknown hyper preset {hyper_raw!r}")
            hyper = HYPER_PRESETS[hyper_raw]()
        else:
            hyper = Hyperparameters(**hyper_raw)
        return ModelSpec(
            family=family,
            pattern_mixture=bool(block.get("pattern_mixture", False)),
            closeness=closeness,
            unit=unit,
            custom_weights=custom,
            hyper=hyper,
        )

    @staticmethod
    def from_json(text: str) -> "ModelSpec":
        return ModelSpec.from_json_dict(json.loads(text))


# exposed in the CLI and the simulation harness
MODEL_NAMES = {
    "lgm": (Family.LGM, False),
    "hlm": (Family.HLM, False),
    "car": (Family.CAR, False),
    "pmm": (Family.LGM, True),
    "hlm+pmm": (Family.HLM, True),
    "car+pmm": (Family.CAR, True),
}


def spec_for(name: str, **kwargs) -> ModelSpec:
    """Build a ModelSpec from a short model name like ``car+pmm``."""
    try:
        family, pmm = MODEL_NAMES[name.lower()]
    except KeyError:
        raise ConfigError(
            f"unknown model {name!r}; choose from {sorted(MODEL_NAMES)}"
        ) from None
    if family is Family.LGM:
        kwargs.pop("closeness", None)
        kwargs.pop("unit", None)
    return ModelSpec(family=family, pattern_mixture=pmm, **kwargs)


# ---------------------------------------------------------------------------
# Parameter state
# ---------------------------------------------------------------------------


@dataclass
class ParameterState:
    """One full assignment of every sampled quantity.

    Vectors are indexed by the dataset's canonical client order and by the
    graph's unit order. Under a pattern mixture, ``beta0``/``beta1`` hold the
    starred (within-pattern) values; marginals come from
    :func:`marginalize_pmm`. ``imputed`` maps observation row index -> drawn
    value for cells with missing outcomes.
    """

    beta0: float
    beta1: float
    beta_cov: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    u: np.ndarray
    nu: np.ndarray
    sigma2_eps: float
    sigma2_0: float
    sigma2_1: float
    sigma2_nu: float
    delta: float
    delta0: float = 0.0
    delta1: float = 0.0
    pi: float = 0.0
    imputed: dict[int, float] = field(default_factory=dict)

    def copy(self) -> "ParameterState":
        return ParameterState(
            beta0=self.beta0, beta1=self.beta1, beta_cov=self.beta_cov.copy(),
            b0=self.b0.copy(), b1=self.b1.copy(), u=self.u.copy(), nu=self.nu.copy(),
            sigma2_eps=self.sigma2_eps, sigma2_0=self.sigma2_0,
            sigma2_1=self.sigma2_1, sigma2_nu=self.sigma2_nu, delta=self.delta,
            delta0=self.delta0, delta1=self.delta1, pi=self.pi,
            imputed=dict(self.imputed),
        )

    def gamma(self) -> np.ndarray:
        """Total unit effects u + nu."""
        return self.u + self.nu


def _unit_of(dataset: Dataset, obs: Observation, session_to_unit) -> int:
    s = dataset.session_index[obs.session_id]
    return int(session_to_unit[s]) if session_to_unit is not None else s


def linear_predictor(
    state: ParameterState,
    obs: Observation,
    spec: ModelSpec,
    dataset: Dataset,
    session_to_unit: np.ndarray | None = None,
) -> float:
    """Mean outcome for one observation under the current state.

    ``session_to_unit`` maps session index to graph node (identity when None);
    it matters only for module-level clustering.
    """
    i = dataset.client_index[obs.client_id]
    t = obs.time_weeks
    mu = state.beta0 + state.beta1 * t
    for k, x in enumerate(obs.covariates):
        mu += state.beta_cov[k] * x
    mu += state.b0[i] + state.b1[i] * t
    if spec.has_session_effects:
        s = _unit_of(dataset, obs, session_to_unit)
        mu += state.u[s] + state.nu[s]
    if spec.pattern_mixture:
        pattern = dataset.clients[i].pattern
        if pattern is None:
            raise ConfigError(
                f"pattern mixture requires a pattern indicator for client {obs.client_id!r}"
            )
        if pattern == 1:
            mu += state.delta0 + state.delta1 * t
    return mu


def deviance(
    state: ParameterState,
    dataset: Dataset,
    spec: ModelSpec,
    session_to_unit: np.ndarray | None = None,
) -> float:
    """-2 log likelihood of the growth submodel over observed outcomes.

    Missing (including imputed) cells and, under a pattern mixture, the
    pattern-indicator factor are excluded so values are comparable across
    mixture and non-mixture fits.
    """
    if not state.sigma2_eps > 0:
        raise ValueError("sigma2_eps must be positive")
    total = 0.0
    count = 0
    for o in dataset.observations:
        if o.outcome is None:
            continue
        r = o.outcome - linear_predictor(state, o, spec, dataset, session_to_unit)
        total += r * r
        count += 1
    return count * math.log(2.0 * math.pi * state.sigma2_eps) + total / state.sigma2_eps


def marginalize_pmm(state: ParameterState) -> tuple[float, float]:
    """Marginal fixed intercept and slope for the current draw:
    starred value plus pi times the pattern offset."""
    return (state.beta0 + state.pi * state.delta0,
            state.beta1 + state.pi * state.delta1)


def _gamma_logpdf(x: float, shape: float, rate: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


def _normal_logpdf(x: float, mean: float, var: float) -> float:
    return -0.5 * (math.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def car_log_kernel(u: np.ndarray, graph: SessionGraph, delta: float) -> float:
    """Log of the intrinsic prior on the structured effects, up to a constant:
    -(S-G)/2 log delta - (1/(2 delta)) * sum over pairs w_sj (u_s - u_j)^2."""
    du = u[graph.edge_i] - u[graph.edge_j]
    quad = float(np.dot(graph.edge_w, du * du))
    rank = graph.n_units - graph.n_islands
    return -0.5 * rank * math.log(delta) - quad / (2.0 * delta)


def log_prior(
    state: ParameterState,
    spec: ModelSpec,
    graph: SessionGraph | None = None,
) -> float:
    """Log prior density of the state up to an additive constant.

    Covers the fixed effects (flat intercept via its wide normal surrogate),
    the Gamma priors on the precisions and on 1/delta, the intrinsic prior on
    the structured effects, and the pattern-offset and pattern-probability
    priors under a mixture.
    """
    h = spec.hyper
    for name in ("sigma2_eps", "sigma2_0", "sigma2_1"):
        if not getattr(state, name) > 0:
            raise ValueError(f"{name} must be positive")
    lp = _normal_logpdf(state.beta0, 0.0, BETA0_SURROGATE_VAR)
    lp += _normal_logpdf(state.beta1, 0.0, h.sigma2_beta1)
    for b in state.beta_cov:
        lp += _normal_logpdf(float(b), 0.0, h.sigma2_beta)
    lp += _gamma_logpdf(1.0 / state.sigma2_eps, h.psi_y0, h.psi_y1)
    lp += _gamma_logpdf(1.0 / state.sigma2_0, h.psi_00, h.psi_01)
    lp += _gamma_logpdf(1.0 / state.sigma2_1, h.psi_10, h.psi_11)
    if spec.has_session_effects:
        if not state.sigma2_nu > 0:
            raise ValueError("sigma2_nu must be positive")
        lp += _gamma_logpdf(1.0 / state.sigma2_nu, h.psi_nu0, h.psi_nu1)
    if spec.family is Family.CAR:
        if graph is None:
            raise ConfigError("CAR family requires a session graph")
        if not state.delta > 0:
            raise ValueError("delta must be positive")
        lp += _gamma_logpdf(1.0 / state.delta, h.d0, h.d1)
        lp += car_log_kernel(state.u, graph, state.delta)
    if spec.pattern_mixture:
        lp += _normal_logpdf(state.delta0, h.delta0_prior_mean, h.delta0_prior_var)
        lp += _normal_logpdf(state.delta1, h.delta1_prior_mean, h.delta1_prior_var)
        if not 0.0 < state.pi < 1.0:
            return -math.inf
        lp += (h.pi_a - 1.0) * math.log(state.pi) + (h.pi_b - 1.0) * math.log(1.0 - state.pi)
    return lp
