"""
Reference posterior sampler: single-site adaptive random-walk Metropolis on
the latent field, conjugate Gibbs for precisions with Gamma or Wishart
priors, random-walk Metropolis for the remaining hyperparameters.
"""

import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, sparse, stats

from .exceptions import CheckpointError, ModelSpecError
from .likelihoods import loglik_terms
from .model_core import (LatentBlock, ModelSpec, block_precision, build_prior_precision,
                         internal_from_correlation)
from .priors import log_prior_single

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CINLACKP"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIQ")
_MAX_LOG_STEP = 10.0


@dataclass(frozen=True)
class ChainConfig:
    """
    n_iter counts all iterations, burn-in included; samples are kept every
    thin-th iteration after burn-in.
    """
    n_iter: int = 120000
    burn_in: int = 20000
    thin: int = 10
    n_chains: int = 2
    seed: int = 1
    adapt_batch: int = 100
    target_acceptance: float = 0.44
    ar1_gibbs: bool = True

    def __post_init__(self):
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise ModelSpecError(f"need 0 <= burn_in < n_iter, got {self.burn_in}, {self.n_iter}")
        if self.thin < 1 or self.n_chains < 1 or self.adapt_batch < 1:
            raise ModelSpecError("thin, n_chains and adapt_batch must be positive")
        if not 0 < self.target_acceptance < 1:
            raise ModelSpecError("target acceptance must lie in (0, 1)")

    @property
    def n_keep(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    @classmethod
    def from_settings(cls, settings: Dict, **overrides) -> "ChainConfig":
        section = dict(settings.get("mcmc", {}))
        section.update({k: v for k, v in overrides.items() if v is not None})
        known = {k: section[k] for k in cls.__dataclass_fields__ if k in section}
        return cls(**known)


@dataclass
class ChainState:
    """Resumable state of one chain"""
    x: np.ndarray
    theta: np.ndarray
    latent_steps: np.ndarray
    hyper_steps: np.ndarray
    iteration: int
    rng_state: Tuple[int, int] = (0, 0)


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """
    draws has shape (n_chains, n_keep, n_latent + n_hyper); latent columns
    first, then hyperparameters on the internal scale.
    """
    names: Tuple[str, ...]
    draws: np.ndarray
    n_latent: int
    acceptance: Dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def column(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no parameter named '{name}'") from None

    def chains(self, name: str) -> np.ndarray:
        """(n_chains, n_keep) draws of one parameter"""
        return self.draws[:, :, self.column(name)]

    def values(self, name: str) -> np.ndarray:
        return self.chains(name).ravel()

    @property
    def ess(self) -> Dict[str, float]:
        return {name: float(sum(effective_sample_size(c) for c in self.chains(name)))
                for name in self.names}

    def to_frame(self) -> pd.DataFrame:
        n_chains, n_keep, _ = self.draws.shape
        frame = pd.DataFrame(self.draws.reshape(n_chains * n_keep, -1), columns=list(self.names))
        frame.insert(0, "draw", np.tile(np.arange(n_keep), n_chains))
        frame.insert(0, "chain", np.repeat(np.arange(n_chains), n_keep))
        return frame

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.12g")


def metropolis_accept(log_ratio, uniform) -> np.ndarray:
    """Accept where log(u) < log target ratio"""
    return np.log(uniform) < log_ratio


def gamma_precision_update(shape: float, rate: float, sum_sq: float, k: int,
                           rng: np.random.Generator, size=None):
    """Draw tau from Gamma(shape + k/2, rate + sum_sq/2)"""
    return rng.gamma(shape + 0.5 * k, 1.0 / (rate + 0.5 * sum_sq), size=size)


def wishart_precision_update(df: float, scale: Sequence[float], pairs: np.ndarray,
                             rng: np.random.Generator) -> np.ndarray:
    """
    Draw the 2x2 precision W ~ Wishart(df + k, (S^-1 + sum b b')^-1) given
    the k cluster pairs b; S = diag(scale), so that E[W] = df S a priori.
    """
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    post = np.linalg.inv(np.diag(1.0 / np.asarray(scale, dtype=float)) + pairs.T @ pairs)
    post = 0.5 * (post + post.T)
    return stats.wishart.rvs(df=df + len(pairs), scale=post, random_state=rng)


def internal_from_bivariate_precision(W: np.ndarray) -> np.ndarray:
    """(log sigma0^-2, log sigma1^-2, log((1+rho)/(1-rho))) of Sigma = W^-1"""
    cov = np.linalg.inv(W)
    rho = cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1])
    rho = float(np.clip(rho, -1.0 + 1e-15, 1.0 - 1e-15))
    return np.array([-np.log(cov[0, 0]), -np.log(cov[1, 1]), internal_from_correlation(rho)])


def effective_sample_size(chain: np.ndarray) -> float:
    """ESS by Geyer's initial positive sequence on the FFT autocorrelation"""
    chain = np.asarray(chain, dtype=float)
    n = len(chain)
    centred = chain - chain.mean()
    var = centred @ centred / n
    if n < 4 or var <= 1e-300:
        return float(n)
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spectrum = np.fft.rfft(centred, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n] / n
    rho = acov / acov[0]
    pairs = rho[:n - n % 2].reshape(-1, 2).sum(axis=1)
    tau = -1.0
    previous = np.inf
    for gamma_k in pairs:
        if gamma_k <= 0:
            break
        gamma_k = min(gamma_k, previous)
        tau += 2.0 * gamma_k
        previous = gamma_k
    return float(n / max(tau, 1e-12))


def gelman_rubin(chains: np.ndarray) -> float:
    """Potential scale reduction factor for an (m, n) array of chains"""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    if m < 2:
        raise ValueError("R-hat needs at least two chains")
    means = chains.mean(axis=1)
    within = chains.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within <= 0:
        return 1.0
    pooled = (n - 1) / n * within + between / n
    return float(np.sqrt(pooled / within))


def _greedy_colouring(adjacency: sparse.csr_matrix) -> List[np.ndarray]:
    """Colour classes of a graph so that no two neighbours share a colour"""
    n = adjacency.shape[0]
    colours = np.full(n, -1)
    indptr, indices = adjacency.indptr, adjacency.indices
    for v in range(n):
        taken = {colours[u] for u in indices[indptr[v]:indptr[v + 1]] if u != v}
        c = 0
        while c in taken:
            c += 1
        colours[v] = c
    return [np.flatnonzero(colours == c) for c in range(colours.max() + 1)]


def _structure(spec: ModelSpec, exclude: Sequence[int] = ()) -> List[np.ndarray]:
    """Colour classes of the posterior dependence graph of the latent field"""
    n = spec.n_latent
    A = spec.design_matrix
    pattern = (abs(A).T @ abs(A)).tocsr()
    rows, cols = [], []
    for block in spec.blocks:
        idx = block.indices
        if block.kind == "bivariate":
            rows += [idx[0::2], idx[1::2]]
            cols += [idx[1::2], idx[0::2]]
        elif block.kind == "ar1" and block.size > 1:
            rows += [idx[:-1], idx[1:]]
            cols += [idx[1:], idx[:-1]]
    if rows:
        prior = sparse.csr_matrix((np.ones(sum(len(r) for r in rows)),
                                   (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        pattern = (pattern + prior).tocsr()
    skip = set(int(i) for i in exclude)
    classes = [np.array([i for i in c if int(i) not in skip], dtype=int)
               for c in _greedy_colouring(pattern)]
    return [c for c in classes if c.size]


@dataclass
class _Colour:
    indices: np.ndarray
    rows: np.ndarray
    A_local: sparse.csr_matrix
    touch: sparse.csr_matrix


class ChainSampler:
    """One Metropolis-within-Gibbs chain over (x, theta)"""

    def __init__(self, spec: ModelSpec, cfg: ChainConfig, rng: np.random.Generator):
        self.spec = spec
        self.cfg = cfg
        self.rng = rng
        self.y = spec.require_data()
        self.A = spec.design_matrix
        self.m = spec.prior_mean
        self.trials = spec.trials

        A_csc = self.A.tocsc()
        self.ar1_blocks = [(b, A_csc[:, b.indices]) for b in self._gibbs_ar1_blocks()] if cfg.ar1_gibbs else []
        excluded = np.concatenate([b.indices for b, _ in self.ar1_blocks]) if self.ar1_blocks else []
        self.colours = []
        for idx in _structure(spec, exclude=excluded):
            sub = A_csc[:, idx]
            rows = np.unique(sub.indices)
            local = sub[rows].tocsr()
            touch = (local != 0).astype(float).tocsr()
            self.colours.append(_Colour(idx, rows, local, touch))

        self.gibbs_hyper, self.rw_hyper = self._classify_hyper()

    def _gibbs_ar1_blocks(self) -> List[LatentBlock]:
        if self.spec.likelihood.kind != "gaussian":
            return []
        blocks = []
        A_csc = self.A.tocsc()
        for block in self.spec.blocks:
            if block.kind != "ar1":
                continue
            sub = A_csc[:, block.indices]
            gram = (sub.T @ sub).tocoo()
            if np.all(gram.row == gram.col):
                blocks.append(block)
        return blocks

    def _classify_hyper(self) -> Tuple[Dict[int, Tuple[str, LatentBlock]], List[int]]:
        gibbs: Dict[int, Tuple[str, LatentBlock]] = {}
        for block in self.spec.blocks:
            if block.kind == "iid" and self.spec.prior_for(block.hyper[0]).kind == "gamma":
                gibbs[block.hyper[0]] = ("gamma", block)
            elif block.kind == "ar1" and self.spec.prior_for(block.hyper[0]).kind == "gamma":
                gibbs[block.hyper[0]] = ("gamma", block)
            elif block.kind == "bivariate" and self.spec.prior_for(block.hyper[0]).kind == "wishart":
                for k in block.hyper:
                    gibbs[k] = ("wishart", block)
        rw = [k for k in range(self.spec.n_hyper) if k not in gibbs]
        return gibbs, rw

    def initial_state(self) -> ChainState:
        spec = self.spec
        theta = np.asarray(spec.initial_hyper, dtype=float).copy()
        Q_prior, _ = build_prior_precision(spec, theta)
        curvature = {"bernoulli": 0.25, "binomial": 0.25, "poisson": 1.0}.get(
            spec.likelihood.kind, spec.likelihood.precision)
        if spec.likelihood.kind == "binomial":
            weight = 0.25 * np.asarray(self.trials, dtype=float)
            info = np.asarray(self.A.multiply(self.A).T @ weight).ravel()
        else:
            info = np.asarray(self.A.multiply(self.A).sum(axis=0)).ravel() * curvature
        steps = 2.4 / np.sqrt(np.diag(Q_prior) + info)
        return ChainState(x=self.m.copy(), theta=theta, latent_steps=steps,
                          hyper_steps=np.full(spec.n_hyper, 0.5), iteration=0)

    def _loglik(self, eta: np.ndarray, rows: np.ndarray) -> np.ndarray:
        trials = None if self.trials is None else self.trials[rows]
        return loglik_terms(self.spec, eta, self.y[rows], trials=trials, validate=False)[0]

    def latent_sweep(self, state: ChainState, Q_prior: np.ndarray, eta: np.ndarray,
                     accepted: np.ndarray):
        x, steps = state.x, state.latent_steps
        for colour in self.colours:
            idx = colour.indices
            delta = steps[idx] * self.rng.standard_normal(len(idx))
            r = x - self.m
            grad = Q_prior[idx] @ r
            d_prior = -delta * grad - 0.5 * np.diag(Q_prior)[idx] * delta * delta
            eta_rows = eta[colour.rows]
            eta_new = eta_rows + colour.A_local @ delta
            d_lik = colour.touch.T @ (self._loglik(eta_new, colour.rows) - self._loglik(eta_rows, colour.rows))
            accept = metropolis_accept(d_prior + d_lik, self.rng.random(len(idx)))
            if np.any(accept):
                step = np.where(accept, delta, 0.0)
                x[idx] += step
                eta[colour.rows] += colour.A_local @ step
                accepted[idx] += accept

    def ar1_gibbs_sweep(self, state: ChainState, Q_prior: np.ndarray, eta: np.ndarray):
        lam = self.spec.likelihood.precision
        for block, sub in self.ar1_blocks:
            idx = block.indices
            u = state.x[idx]
            other = eta - sub @ u
            Q_b = Q_prior[np.ix_(idx, idx)]
            P = Q_b + lam * np.diag(np.asarray(sub.multiply(sub).sum(axis=0)).ravel())
            b = lam * (sub.T @ (self.y - other))
            banded = np.zeros((2, len(idx)))
            banded[1] = np.diag(P)
            banded[0, 1:] = np.diag(P, 1)
            upper = linalg.cholesky_banded(banded)
            mean = linalg.cho_solve_banded((upper, False), b)
            noise = linalg.solve_banded((0, 1), upper, self.rng.standard_normal(len(idx)))
            state.x[idx] = mean + noise
            eta[:] = other + sub @ state.x[idx]

    def _block_logdensity(self, block: LatentBlock, theta: np.ndarray, x: np.ndarray) -> float:
        Q_b, log_det = block_precision(self.spec, block, theta)
        u = x[block.indices]
        return 0.5 * log_det - 0.5 * u @ Q_b @ u

    def _hyper_target(self, k: int, theta: np.ndarray, x: np.ndarray) -> float:
        prior = self.spec.prior_for(k)
        value = log_prior_single(prior, theta)
        for block in self.spec.blocks:
            if k in block.hyper:
                value += self._block_logdensity(block, theta, x)
        return value

    def hyper_update(self, state: ChainState, hyper_accepted: np.ndarray):
        theta, x = state.theta, state.x
        done = set()
        for k, (kind, block) in self.gibbs_hyper.items():
            if k in done:
                continue
            prior = self.spec.prior_for(k)
            u = x[block.indices]
            if kind == "gamma":
                if block.kind == "iid":
                    sum_sq = float(u @ u)
                else:
                    Q_b, _ = block_precision(self.spec, block, theta)
                    sum_sq = float(u @ Q_b @ u) / np.exp(theta[k])
                tau = gamma_precision_update(prior.shape, prior.rate, sum_sq, block.size, self.rng)
                theta[k] = np.log(tau)
                hyper_accepted[k] += 1
                done.add(k)
            else:
                W = wishart_precision_update(prior.df, prior.scale, u.reshape(-1, 2), self.rng)
                theta[list(block.hyper)] = internal_from_bivariate_precision(W)
                hyper_accepted[list(block.hyper)] += 1
                done.update(block.hyper)
        for k in self.rw_hyper:
            proposal = theta.copy()
            proposal[k] += state.hyper_steps[k] * self.rng.standard_normal()
            log_ratio = self._hyper_target(k, proposal, x) - self._hyper_target(k, theta, x)
            if metropolis_accept(log_ratio, self.rng.random()):
                theta[k] = proposal[k]
                hyper_accepted[k] += 1

    def _adapt(self, steps: np.ndarray, accepted: np.ndarray, batch_index: int) -> np.ndarray:
        rate = accepted / self.cfg.adapt_batch
        amount = min(0.5, 1.0 / np.sqrt(batch_index))
        log_steps = np.log(steps) + np.where(rate > self.cfg.target_acceptance, amount, -amount)
        return np.exp(np.clip(log_steps, -_MAX_LOG_STEP, _MAX_LOG_STEP))

    def run(self, state: Optional[ChainState] = None) -> Tuple[np.ndarray, ChainState, Dict[str, float]]:
        """
        Run up to cfg.n_iter iterations. A resumed state continues its stream;
        only draws made in this call are returned.
        """
        cfg = self.cfg
        state = state or self.initial_state()
        n, p = self.spec.n_latent, self.spec.n_hyper
        kept: List[np.ndarray] = []
        eta = self.A @ state.x
        batch_lat, batch_hyp = np.zeros(n), np.zeros(p)
        total_lat, total_hyp = np.zeros(n), np.zeros(p)
        kept_iterations = 0
        batch_index = state.iteration // cfg.adapt_batch
        for it in range(state.iteration, cfg.n_iter):
            Q_prior, _ = build_prior_precision(self.spec, state.theta)
            self.latent_sweep(state, Q_prior, eta, batch_lat)
            if self.ar1_blocks:
                self.ar1_gibbs_sweep(state, Q_prior, eta)
            if p:
                self.hyper_update(state, batch_hyp)
            state.iteration = it + 1
            if it < cfg.burn_in:
                if state.iteration % cfg.adapt_batch == 0:
                    batch_index += 1
                    state.latent_steps = self._adapt(state.latent_steps, batch_lat, batch_index)
                    if self.rw_hyper:
                        rw = np.array(self.rw_hyper)
                        state.hyper_steps[rw] = self._adapt(state.hyper_steps[rw], batch_hyp[rw], batch_index)
                if state.iteration % cfg.adapt_batch == 0 or state.iteration == cfg.burn_in:
                    batch_lat[:] = 0.0
                    batch_hyp[:] = 0.0
                continue
            total_lat += batch_lat
            total_hyp += batch_hyp
            batch_lat[:] = 0.0
            batch_hyp[:] = 0.0
            kept_iterations += 1
            if (it + 1 - cfg.burn_in) % cfg.thin == 0:
                kept.append(np.concatenate([state.x, state.theta]))
        state.rng_state = _pcg_words(self.rng)
        acceptance = self._acceptance_by_block(total_lat, total_hyp, max(kept_iterations, 1))
        return np.array(kept).reshape(len(kept), n + p), state, acceptance

    def _acceptance_by_block(self, lat: np.ndarray, hyp: np.ndarray, iterations: int) -> Dict[str, float]:
        rates: Dict[str, float] = {}
        gibbs_ar1 = {b.name or b.kind for b, _ in self.ar1_blocks}
        for block in self.spec.blocks:
            name = block.name or block.kind
            rates[name] = 1.0 if name in gibbs_ar1 else float(lat[block.indices].mean() / iterations)
        for k, name in enumerate(self.spec.hyper_names):
            rates[name] = float(hyp[k] / iterations)
        return rates


def _pcg_words(rng: np.random.Generator) -> Tuple[int, int]:
    inner = rng.bit_generator.state["state"]
    return int(inner["state"]), int(inner["inc"])


def _restore_rng(words: Tuple[int, int]) -> np.random.Generator:
    bit_gen = np.random.PCG64()
    bit_gen.state = {"bit_generator": "PCG64", "state": {"state": int(words[0]), "inc": int(words[1])},
                     "has_uint32": 0, "uinteger": 0}
    return np.random.Generator(bit_gen)


def save_checkpoint(path: str, state: ChainState):
    """
    Layout (little-endian): header '<8sIIIQ' = magic, version, n, p,
    iteration; then f8 x[n], theta[p], latent steps[n], hyper steps[p];
    then the PCG64 state and increment as four u8 words (high, low each).
    """
    n, p = len(state.x), len(state.theta)
    mask = (1 << 64) - 1
    s, inc = state.rng_state
    words = np.array([s >> 64, s & mask, inc >> 64, inc & mask], dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, n, p, int(state.iteration)))
        for arr in (state.x, state.theta, state.latent_steps, state.hyper_steps):
            fh.write(np.asarray(arr, dtype="<f8").tobytes())
        fh.write(words.tobytes())


def load_checkpoint(path: str) -> ChainState:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, n, p, iteration = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    expected = _HEADER.size + 8 * (2 * n + 2 * p) + 32
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", count=2 * n + 2 * p, offset=_HEADER.size)
    words = np.frombuffer(data, dtype="<u8", count=4, offset=_HEADER.size + 8 * (2 * n + 2 * p))
    x, theta = values[:n].copy(), values[n:n + p].copy()
    latent_steps, hyper_steps = values[n + p:2 * n + p].copy(), values[2 * n + p:].copy()
    rng_state = ((int(words[0]) << 64) | int(words[1]), (int(words[2]) << 64) | int(words[3]))
    return ChainState(x=x, theta=theta, latent_steps=latent_steps, hyper_steps=hyper_steps,
                      iteration=int(iteration), rng_state=rng_state)


def _chain_job(args) -> Tuple[np.ndarray, Dict[str, float], ChainState]:
    spec, cfg, seed_seq, checkpoint_path = args
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    state = None
    if checkpoint_path and os.path.exists(checkpoint_path):
        state = load_checkpoint(checkpoint_path)
        rng = _restore_rng(state.rng_state)
        logger.info(f"resuming chain from {checkpoint_path} at iteration {state.iteration}")
    sampler = ChainSampler(spec, cfg, rng)
    keep, final, acceptance = sampler.run(state)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, final)
    return keep, acceptance, final


def run_mcmc(spec: ModelSpec, y: Optional[np.ndarray], cfg: ChainConfig, threads: int = 1,
             checkpoint_dir: Optional[str] = None) -> PosteriorSamples:
    """
    Run cfg.n_chains independent chains with seeds spawned from cfg.seed.
    Chains run in worker processes when threads > 1.
    """
    if y is not None:
        spec = spec.with_data(y)
    spec.require_data()
    if spec.n_hyper and any(p.kind not in ("gamma", "normal", "wishart") for p in spec.hyper_priors):
        raise ModelSpecError("unsupported hyperprior for the sampler")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    paths = [os.path.join(checkpoint_dir, f"chain_{c:02d}.ckpt") if checkpoint_dir else None
             for c in range(cfg.n_chains)]
    jobs = [(spec, cfg, s, path) for s, path in zip(seeds, paths)]
    if threads > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, cfg.n_chains)) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(job) for job in jobs]

    draws = np.stack([keep for keep, _, _ in results])
    acceptance = {k: float(np.mean([acc[k] for _, acc, _ in results])) for k in results[0][1]}
    logger.info(f"sampler acceptance: { {k: round(v, 3) for k, v in acceptance.items()} }")
    return PosteriorSamples(names=tuple(spec.latent_names) + tuple(spec.hyper_names), draws=draws,
                            n_latent=spec.n_latent, acceptance=acceptance, seed=cfg.seed)


def summarize(samples: PosteriorSamples, out_dir: Optional[str] = None,
              bins: int = 50, names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Mean, sd, 2.5/50/97.5% quantiles (linear interpolation) and ESS per
    parameter; with out_dir, histograms go to histograms.csv.
    """
    names = list(names or samples.names)
    rows, hist_rows = [], []
    for name in names:
        values = samples.values(name)
        if values.size == 0:
            raise ValueError(f"no samples for '{name}'")
        q = np.quantile(values, [0.025, 0.5, 0.975], method="linear")
        rows.append({"parameter": name, "mean": float(values.mean()), "sd": float(values.std()),
                     "q025": float(q[0]), "q50": float(q[1]), "q975": float(q[2]),
                     "ess": float(sum(effective_sample_size(c) for c in samples.chains(name)))})
        counts, edges = np.histogram(values, bins=bins)
        hist_rows.extend({"parameter": name, "bin_left": edges[b], "bin_right": edges[b + 1],
                          "count": int(counts[b])} for b in range(bins))
    summary = pd.DataFrame(rows)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        summary.to_csv(os.path.join(out_dir, "mcmc_summary.csv"), index=False, float_format="%.12g")
        pd.DataFrame(hist_rows).to_csv(os.path.join(out_dir, "histograms.csv"), index=False,
                                       float_format="%.12g")
    return summary
