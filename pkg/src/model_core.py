"""
Latent Gaussian model definitions: latent blocks, design map, likelihood
family and hyperparameter priors, plus the prior precision of the latent field
and a dataset simulator.

Hyperparameters live on the internal scale: log-precisions and the correlation
transform log((1+rho)/(1-rho)).
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .exceptions import ModelSpecError

logger = logging.getLogger(__name__)

BLOCK_KINDS = ("fixed", "iid", "bivariate", "ar1")
FAMILY_KINDS = ("bernoulli", "binomial", "poisson", "gaussian")
PRIOR_KINDS = ("gamma", "normal", "wishart")

# number of hyperparameters each random block consumes
_BLOCK_HYPER_COUNT = {"fixed": 0, "iid": 1, "bivariate": 3, "ar1": 2}


def correlation_from_internal(t: float) -> float:
    """rho from the internal transform log((1+rho)/(1-rho))"""
    return float(np.tanh(0.5 * t))


def internal_from_correlation(rho: float) -> float:
    if not -1.0 < rho < 1.0:
        raise ModelSpecError(f"correlation must lie in (-1, 1), got {rho}")
    return float(np.log((1.0 + rho) / (1.0 - rho)))


def _one_minus_rho_squared(t: float) -> float:
    # sech^2(t/2) stays positive where 1 - tanh^2 rounds to zero
    return float(1.0 / np.cosh(0.5 * t) ** 2)


@dataclass(frozen=True)
class HyperParams:
    """Hyperparameter vector on the internal scale"""
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(values)):
            raise ModelSpecError(f"hyperparameters must be finite, got {values.tolist()}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]


@dataclass(frozen=True)
class LatentBlock:
    """
    One contiguous block of the latent vector.

    kind: 'fixed' (size = number of effects), 'iid' (size = clusters),
    'bivariate' (size = clusters, stored interleaved b0_1, b1_1, b0_2, ...),
    'ar1' (size = series length).
    hyper: indices of the hyperparameters the block uses
        iid -> (log precision,), bivariate -> (theta1, theta2, theta3),
        ar1 -> (log marginal precision, correlation transform)
    """
    kind: str
    size: int
    offset: int = 0
    hyper: Tuple[int, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ModelSpecError(f"unknown latent block kind '{self.kind}'")
        if self.size < 1:
            raise ModelSpecError(f"block '{self.name or self.kind}' must have positive size")
        if len(self.hyper) != _BLOCK_HYPER_COUNT[self.kind]:
            raise ModelSpecError(
                f"block '{self.name or self.kind}' needs {_BLOCK_HYPER_COUNT[self.kind]} "
                f"hyperparameter indices, got {len(self.hyper)}"
            )
        object.__setattr__(self, "hyper", tuple(int(k) for k in self.hyper))

    @property
    def length(self) -> int:
        return 2 * self.size if self.kind == "bivariate" else self.size

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.length)

    @property
    def is_random(self) -> bool:
        return self.kind != "fixed"


@dataclass(frozen=True)
class LikelihoodFamily:
    """Observation model; 'gaussian' uses an identity link and known precision"""
    kind: str
    precision: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ModelSpecError(f"unknown likelihood family '{self.kind}'")
        if self.kind == "gaussian" and not self.precision > 0:
            raise ModelSpecError("gaussian likelihood needs a positive known precision")


@dataclass(frozen=True)
class HyperPrior:
    """
    Prior on one or more hyperparameters.

    gamma: Gamma(shape, rate) on exp(theta_k)
    normal: N(mean, variance) directly on theta_k
    wishart: Wishart(df, diag(scale)) on the 2x2 precision of a bivariate
        block, covering its three hyperparameters. Scale convention: the
        prior mean of the precision matrix is df * diag(scale).
    """
    kind: str
    indices: Tuple[int, ...]
    shape: float = 1.0
    rate: float = 1.0
    mean: float = 0.0
    variance: float = 1.0
    df: float = 3.0
    scale: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ModelSpecError(f"unknown hyperprior kind '{self.kind}'")
        object.__setattr__(self, "indices", tuple(int(k) for k in self.indices))
        expected = 3 if self.kind == "wishart" else 1
        if len(self.indices) != expected:
            raise ModelSpecError(f"{self.kind} prior covers {expected} hyperparameter(s)")
        if self.kind == "gamma" and not (self.shape > 0 and self.rate > 0):
            raise ModelSpecError("gamma prior needs shape > 0 and rate > 0")
        if self.kind == "normal" and not self.variance > 0:
            raise ModelSpecError("normal prior needs variance > 0")
        if self.kind == "wishart":
            if not self.df > 1 or min(self.scale) <= 0 or len(self.scale) != 2:
                raise ModelSpecError("wishart prior needs df > 1 and two positive scale entries")
            object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """
    Full generative specification of a latent Gaussian model.

    design holds the observation -> latent incidence map as three parallel
    arrays (observation index, latent index, coefficient); the linear
    predictor is eta = A x.
    """
    blocks: Tuple[LatentBlock, ...]
    design_rows: np.ndarray
    design_cols: np.ndarray
    design_vals: np.ndarray
    n_obs: int
    likelihood: LikelihoodFamily
    hyper_priors: Tuple[HyperPrior, ...]
    fixed_mean: np.ndarray
    fixed_variance: np.ndarray
    trials: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    hyper_names: Tuple[str, ...] = ()
    initial_hyper: Optional[np.ndarray] = None
    name: str = "model"
    latent_labels: Tuple[str, ...] = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "hyper_priors", tuple(self.hyper_priors))
        object.__setattr__(self, "design_rows", np.asarray(self.design_rows, dtype=int))
        object.__setattr__(self, "design_cols", np.asarray(self.design_cols, dtype=int))
        object.__setattr__(self, "design_vals", np.asarray(self.design_vals, dtype=float))
        object.__setattr__(self, "fixed_mean", np.asarray(self.fixed_mean, dtype=float).ravel())
        object.__setattr__(self, "fixed_variance",
                           np.asarray(self.fixed_variance, dtype=float).ravel())
        if self.trials is not None:
            object.__setattr__(self, "trials", np.asarray(self.trials, dtype=int).ravel())
        if self.y is not None:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=float).ravel())
        self._validate()
        if self.initial_hyper is None:
            object.__setattr__(self, "initial_hyper", np.zeros(self.n_hyper))
        else:
            object.__setattr__(self, "initial_hyper",
                               np.asarray(self.initial_hyper, dtype=float).ravel())
        if not self.hyper_names:
            object.__setattr__(self, "hyper_names",
                               tuple(f"theta{k + 1}" for k in range(self.n_hyper)))

    def _validate(self):
        offset = 0
        for block in self.blocks:
            if block.offset != offset:
                raise ModelSpecError(
                    f"block '{block.name or block.kind}' starts at {block.offset}, expected {offset}"
                )
            offset += block.length
        if offset == 0:
            raise ModelSpecError("model has no latent variables")

        n = offset
        lengths = {len(self.design_rows), len(self.design_cols), len(self.design_vals)}
        if len(lengths) != 1:
            raise ModelSpecError("design triplet arrays differ in length")
        if len(self.design_cols) and (self.design_cols.min() < 0 or self.design_cols.max() >= n):
            raise ModelSpecError("design references a latent index outside the latent vector")
        if len(self.design_rows) and (self.design_rows.min() < 0
                                      or self.design_rows.max() >= self.n_obs):
            raise ModelSpecError("design references an observation outside 0..n_obs-1")

        n_fixed = sum(b.size for b in self.blocks if b.kind == "fixed")
        if len(self.fixed_mean) != n_fixed or len(self.fixed_variance) != n_fixed:
            raise ModelSpecError(f"fixed_prior must have {n_fixed} means and variances")
        if np.any(self.fixed_variance <= 0):
            raise ModelSpecError("fixed effect prior variances must be positive")

        if self.likelihood.kind == "binomial":
            if self.trials is None or len(self.trials) != self.n_obs or np.any(self.trials < 1):
                raise ModelSpecError("binomial likelihood needs positive trials per observation")

        covered: Dict[int, HyperPrior] = {}
        for prior in self.hyper_priors:
            for k in prior.indices:
                if k in covered:
                    raise ModelSpecError(f"hyperparameter {k} has more than one prior")
                covered[k] = prior
        used = sorted({k for b in self.blocks for k in b.hyper})
        if sorted(covered) != list(range(len(covered))) or used != sorted(covered):
            raise ModelSpecError(
                f"hyperparameters used by blocks {used} and covered by priors "
                f"{sorted(covered)} must both be 0..p-1"
            )
        for prior in self.hyper_priors:
            if prior.kind == "wishart":
                owner = [b for b in self.blocks if b.kind == "bivariate" and b.hyper == prior.indices]
                if not owner:
                    raise ModelSpecError("wishart prior must cover exactly a bivariate block's indices")
        if self.y is not None:
            self._check_support(self.y)

    def _check_support(self, y: np.ndarray):
        if len(y) != self.n_obs:
            raise ModelSpecError(f"expected {self.n_obs} observations, got {len(y)}")
        from .likelihoods import check_support
        check_support(self, y)

    @property
    def n_latent(self) -> int:
        last = self.blocks[-1]
        return last.offset + last.length

    @property
    def n_hyper(self) -> int:
        return sum(len(p.indices) for p in self.hyper_priors)

    @cached_property
    def design_matrix(self) -> sparse.csr_matrix:
        """Sparse n_obs x n incidence matrix A"""
        return sparse.csr_matrix(
            (self.design_vals, (self.design_rows, self.design_cols)),
            shape=(self.n_obs, self.n_latent),
        )

    @cached_property
    def prior_mean(self) -> np.ndarray:
        mean = np.zeros(self.n_latent)
        k = 0
        for block in self.blocks:
            if block.kind == "fixed":
                mean[block.indices] = self.fixed_mean[k:k + block.size]
                k += block.size
        return mean

    @cached_property
    def fixed_index_set(self) -> np.ndarray:
        """Fixed effects plus every random block of length one"""
        idx: List[int] = []
        for block in self.blocks:
            if block.kind == "fixed" or block.length == 1:
                idx.extend(block.indices.tolist())
        return np.array(sorted(idx), dtype=int)

    @property
    def latent_names(self) -> Tuple[str, ...]:
        if self.latent_labels:
            return self.latent_labels
        names: List[str] = []
        for block in self.blocks:
            base = block.name or block.kind
            if block.kind == "fixed":
                names.extend(f"{base}{j}" if block.size > 1 else base for j in range(block.size))
            elif block.kind == "bivariate":
                for j in range(block.size):
                    names.extend([f"{base}0[{j}]", f"{base}1[{j}]"])
            else:
                names.extend(f"{base}[{j}]" for j in range(block.size))
        return tuple(names)

    def prior_for(self, k: int) -> HyperPrior:
        for prior in self.hyper_priors:
            if k in prior.indices:
                return prior
        raise ModelSpecError(f"no prior covers hyperparameter {k}")

    def with_data(self, y: Sequence[float]) -> "ModelSpec":
        """Copy of the spec carrying observations y"""
        return replace(self, y=np.asarray(y, dtype=float))

    def require_data(self) -> np.ndarray:
        if self.y is None:
            raise ModelSpecError(f"model '{self.name}' has no observations attached")
        return self.y

    def check_theta(self, theta) -> np.ndarray:
        values = theta.values if isinstance(theta, HyperParams) else np.atleast_1d(
            np.asarray(theta, dtype=float))
        if values.shape != (self.n_hyper,):
            raise ModelSpecError(f"expected {self.n_hyper} hyperparameters, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ModelSpecError(f"hyperparameters must be finite, got {values.tolist()}")
        return values


def bivariate_covariance(t1: float, t2: float, t3: float) -> np.ndarray:
    """2x2 covariance from (log sigma0^-2, log sigma1^-2, correlation transform)"""
    s0, s1 = np.exp(-0.5 * t1), np.exp(-0.5 * t2)
    rho = correlation_from_internal(t3)
    return np.array([[s0 * s0, rho * s0 * s1], [rho * s0 * s1, s1 * s1]])


def bivariate_precision(t1: float, t2: float, t3: float) -> Tuple[np.ndarray, float]:
    """2x2 precision and its log-determinant"""
    rho = correlation_from_internal(t3)
    if abs(rho) >= 1.0:
        raise ModelSpecError(f"bivariate correlation transform {t3} saturates |rho| = 1")
    c = 1.0 / _one_minus_rho_squared(t3)
    p0, p1 = np.exp(t1), np.exp(t2)
    off = -rho * np.exp(0.5 * (t1 + t2))
    W = c * np.array([[p0, off], [off, p1]])
    log_det = t1 + t2 + np.log(c)
    return W, float(log_det)


def ar1_precision(length: int, kappa: float, rho: float,
                  one_minus_rho2: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """
    Tridiagonal AR1 precision with marginal precision kappa and lag-one
    correlation rho; innovation precision tau = kappa / (1 - rho^2).
    """
    if abs(rho) >= 1.0:
        raise ModelSpecError(f"AR1 correlation must satisfy |rho| < 1, got {rho}")
    q = (1.0 - rho * rho) if one_minus_rho2 is None else one_minus_rho2
    tau = kappa / q
    Q = np.zeros((length, length))
    if length == 1:
        Q[0, 0] = kappa
        return Q, float(np.log(kappa))
    diag = np.full(length, 1.0 + rho * rho)
    diag[0] = diag[-1] = 1.0
    Q[np.diag_indices(length)] = tau * diag
    off = np.arange(length - 1)
    Q[off, off + 1] = Q[off + 1, off] = -tau * rho
    log_det = length * np.log(tau) + np.log(q)
    return Q, float(log_det)


def block_precision(spec: ModelSpec, block: LatentBlock, theta: np.ndarray) -> Tuple[np.ndarray, float]:
    """Dense precision of one block and its log-determinant"""
    if block.kind == "fixed":
        k0 = sum(b.size for b in spec.blocks[:spec.blocks.index(block)] if b.kind == "fixed")
        prec = 1.0 / spec.fixed_variance[k0:k0 + block.size]
        return np.diag(prec), float(np.sum(np.log(prec)))
    if block.kind == "iid":
        t = theta[block.hyper[0]]
        return np.exp(t) * np.eye(block.size), float(block.size * t)
    if block.kind == "bivariate":
        W, log_det = bivariate_precision(*(theta[k] for k in block.hyper))
        return np.kron(np.eye(block.size), W), block.size * log_det
    t1, t2 = theta[block.hyper[0]], theta[block.hyper[1]]
    return ar1_precision(block.size, np.exp(t1), correlation_from_internal(t2),
                         _one_minus_rho_squared(t2))


def block_log_density(spec: ModelSpec, block: LatentBlock, x_block: np.ndarray, theta) -> float:
    """Gaussian log density of one block's values under its prior"""
    values = spec.check_theta(theta)
    Qb, log_det = block_precision(spec, block, values)
    r = np.asarray(x_block, dtype=float) - spec.prior_mean[block.indices]
    return float(0.5 * log_det - 0.5 * r @ Qb @ r - 0.5 * block.length * np.log(2.0 * np.pi))


def build_prior_precision(spec: ModelSpec, theta) -> Tuple[np.ndarray, float]:
    """
    Block-diagonal prior precision Q_prior(theta) of the latent field and its
    log-determinant.
    """
    values = spec.check_theta(theta)
    n = spec.n_latent
    Q = np.zeros((n, n))
    log_det = 0.0
    for block in spec.blocks:
        Qb, ld = block_precision(spec, block, values)
        sl = slice(block.offset, block.offset + block.length)
        Q[sl, sl] = Qb
        log_det += ld
    return Q, log_det


def log_latent_prior(spec: ModelSpec, x: np.ndarray, Q_prior: np.ndarray, log_det: float) -> float:
    """log pi(x | theta) for the Gaussian latent field"""
    r = x - spec.prior_mean
    return float(0.5 * log_det - 0.5 * r @ Q_prior @ r - 0.5 * spec.n_latent * np.log(2.0 * np.pi))


@dataclass
class TrueValues:
    """Generating values: fixed effects, internal hyperparameters, optional latent override"""
    fixed: np.ndarray
    hyper: np.ndarray
    latent: Optional[np.ndarray] = None


def simulate_latent(spec: ModelSpec, truth: TrueValues, rng: np.random.Generator) -> np.ndarray:
    """Draw the latent field from the declared blocks, fixed effects set to truth"""
    hyper = np.asarray(truth.hyper, dtype=float)
    fixed = np.asarray(truth.fixed, dtype=float).ravel()
    x = np.zeros(spec.n_latent)
    k = 0
    for block in spec.blocks:
        sl = slice(block.offset, block.offset + block.length)
        if block.kind == "fixed":
            x[sl] = fixed[k:k + block.size]
            k += block.size
        elif block.kind == "iid":
            x[sl] = rng.normal(0.0, np.exp(-0.5 * hyper[block.hyper[0]]), size=block.size)
        elif block.kind == "bivariate":
            cov = bivariate_covariance(*(hyper[j] for j in block.hyper))
            draws = rng.multivariate_normal(np.zeros(2), cov, size=block.size)
            x[sl] = draws.ravel()
        else:
            kappa = np.exp(hyper[block.hyper[0]])
            rho = correlation_from_internal(hyper[block.hyper[1]])
            tau = kappa / (1.0 - rho * rho)
            u = np.empty(block.size)
            u[0] = rng.normal(0.0, 1.0 / np.sqrt(kappa))
            eps = rng.normal(0.0, 1.0 / np.sqrt(tau), size=block.size - 1)
            for j in range(1, block.size):
                u[j] = rho * u[j - 1] + eps[j - 1]
            x[sl] = u
    if k != len(fixed):
        raise ModelSpecError(f"truth has {len(fixed)} fixed effects, model needs {k}")
    return x


def simulate_dataset(spec: ModelSpec, truth: TrueValues, seed: int) -> np.ndarray:
    """
    Simulate observations y from the model at the given true values.
    Deterministic given the seed.
    """
    if len(np.atleast_1d(truth.hyper)) != spec.n_hyper:
        raise ModelSpecError(f"truth has {len(np.atleast_1d(truth.hyper))} hyperparameters, "
                             f"model needs {spec.n_hyper}")
    rng = np.random.default_rng(seed)
    x = simulate_latent(spec, truth, rng) if truth.latent is None else np.asarray(truth.latent)
    eta = spec.design_matrix @ x
    family = spec.likelihood
    if family.kind == "bernoulli":
        return (rng.random(spec.n_obs) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    if family.kind == "binomial":
        return rng.binomial(spec.trials, 1.0 / (1.0 + np.exp(-eta))).astype(float)
    if family.kind == "poisson":
        return rng.poisson(np.exp(eta)).astype(float)
    return eta + rng.normal(0.0, 1.0 / np.sqrt(family.precision), size=spec.n_obs)
