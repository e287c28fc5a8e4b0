import os

import numpy as np
import pytest

from src.exceptions import CheckpointError, ModelSpecError
from src.mcmc import (ChainConfig, ChainState, PosteriorSamples, effective_sample_size, gamma_precision_update,
                      gelman_rubin, internal_from_bivariate_precision, load_checkpoint, metropolis_accept,
                      run_mcmc, save_checkpoint, summarize, wishart_precision_update)
from src.model_core import HyperPrior, LatentBlock, LikelihoodFamily, ModelSpec, bivariate_precision


def _state():
    return ChainState(x=np.array([0.5, -1.25, 3.0]), theta=np.array([0.1, -2.0]),
                      latent_steps=np.array([0.2, 0.3, 0.4]), hyper_steps=np.array([0.5, 0.6]),
                      iteration=1234, rng_state=(2 ** 100 + 7, 2 ** 65 + 3))


def test_checkpoint_round_trip(tmp_path):
    path = str(tmp_path / "chain.ckpt")
    state = _state()
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    for name in ("x", "theta", "latent_steps", "hyper_steps"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(state, name))
    assert loaded.iteration == 1234
    assert loaded.rng_state == state.rng_state


def test_malformed_checkpoints_rejected(tmp_path):
    path = tmp_path / "chain.ckpt"
    save_checkpoint(str(path), _state())
    data = path.read_bytes()

    path.write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))

    path.write_bytes(data[:8] + (2).to_bytes(4, "little") + data[12:])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))

    path.write_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))

    path.write_bytes(data[:10])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_effective_sample_size_of_independent_draws():
    draws = np.random.default_rng(0).normal(size=20000)
    assert effective_sample_size(draws) == pytest.approx(20000, rel=0.15)
    assert effective_sample_size(np.full(50, 2.0)) == 50


def test_effective_sample_size_of_autoregressive_chain():
    rng = np.random.default_rng(1)
    n, phi = 50000, 0.9
    chain = np.empty(n)
    chain[0] = rng.normal() / np.sqrt(1 - phi * phi)
    for t in range(1, n):
        chain[t] = phi * chain[t - 1] + rng.normal()
    expected = n * (1 - phi) / (1 + phi)
    assert effective_sample_size(chain) == pytest.approx(expected, rel=0.4)


def test_gelman_rubin():
    rng = np.random.default_rng(2)
    mixed = rng.normal(size=(4, 2000))
    assert gelman_rubin(mixed) < 1.05
    stuck = mixed + np.array([[0.0], [3.0], [0.0], [3.0]])
    assert gelman_rubin(stuck) > 1.5
    with pytest.raises(ValueError):
        gelman_rubin(mixed[:1])


def test_gamma_precision_update_moments():
    rng = np.random.default_rng(3)
    # Gamma(1 + 2/2, 1 + 2/2) = Gamma(2, 2)
    draws = gamma_precision_update(1.0, 1.0, 2.0, 2, rng, size=100000)
    assert draws.mean() == pytest.approx(1.0, abs=0.0067)
    assert draws.var() == pytest.approx(0.5, rel=0.03)


def test_wishart_update_mean():
    rng = np.random.default_rng(4)
    draws = np.array([wishart_precision_update(5.0, (1.0, 2.0), np.zeros((0, 2)), rng) for _ in range(4000)])
    mean = draws.mean(axis=0)
    assert mean[0, 0] == pytest.approx(5.0, rel=0.05)
    assert mean[1, 1] == pytest.approx(10.0, rel=0.05)
    assert mean[0, 1] == pytest.approx(0.0, abs=0.25)


def test_wishart_update_concentrates_on_the_data():
    rng = np.random.default_rng(5)
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    pairs = rng.multivariate_normal(np.zeros(2), cov, size=4000)
    W = wishart_precision_update(3.0, (1.0, 1.0), pairs, rng)
    np.testing.assert_allclose(np.linalg.inv(W), cov, atol=0.15)


def test_internal_scale_of_bivariate_precision():
    for t in ((0.3, -0.7, 0.9), (1.5, 0.0, -2.0)):
        W, _ = bivariate_precision(*t)
        np.testing.assert_allclose(internal_from_bivariate_precision(W), t, atol=1e-10)


def test_metropolis_on_two_states():
    rng = np.random.default_rng(6)
    log_target = np.log([0.25, 0.75])
    state = np.zeros(20000, dtype=int)
    for _ in range(50):
        proposal = 1 - state
        accept = metropolis_accept(log_target[proposal] - log_target[state], rng.random(state.size))
        state = np.where(accept, proposal, state)
    assert state.mean() == pytest.approx(0.75, abs=0.015)


def test_fixed_effect_chain_matches_exact_posterior(gaussian_fixed):
    spec = gaussian_fixed
    samples = run_mcmc(spec, None, ChainConfig(n_iter=20000, burn_in=2000, thin=1, n_chains=1, seed=7))
    A = spec.design_matrix.toarray()
    lam = spec.likelihood.precision
    precision = np.diag(1.0 / spec.fixed_variance) + lam * A.T @ A
    mean = np.linalg.solve(precision, lam * A.T @ spec.y)
    sd = np.sqrt(np.diag(np.linalg.inv(precision)))
    ess = samples.ess
    for k, name in enumerate(("beta0", "beta1")):
        values = samples.values(name)
        assert abs(values.mean() - mean[k]) < 4 * sd[k] / np.sqrt(ess[name])
        assert values.std() == pytest.approx(sd[k], rel=0.15)
    assert 0.2 < samples.acceptance["beta"] < 0.7


def test_chains_are_reproducible(gaussian_template):
    cfg = ChainConfig(n_iter=300, burn_in=100, thin=2, n_chains=2, seed=5)
    first = run_mcmc(gaussian_template, None, cfg)
    second = run_mcmc(gaussian_template, None, cfg)
    np.testing.assert_array_equal(first.draws, second.draws)
    assert first.draws.shape == (2, 100, gaussian_template.n_latent + 1)
    assert not np.array_equal(first.draws[0], first.draws[1])
    other = run_mcmc(gaussian_template, None, ChainConfig(n_iter=300, burn_in=100, thin=2, n_chains=2, seed=6))
    assert not np.array_equal(first.draws, other.draws)


def test_resumed_chain_continues_its_stream(gaussian_template, tmp_path):
    straight = run_mcmc(gaussian_template, None, ChainConfig(n_iter=900, burn_in=100, thin=1, n_chains=1, seed=9))
    ckpt = str(tmp_path)
    run_mcmc(gaussian_template, None, ChainConfig(n_iter=600, burn_in=100, thin=1, n_chains=1, seed=9),
             checkpoint_dir=ckpt)
    assert os.path.exists(os.path.join(ckpt, "chain_00.ckpt"))
    resumed = run_mcmc(gaussian_template, None, ChainConfig(n_iter=900, burn_in=100, thin=1, n_chains=1, seed=9),
                       checkpoint_dir=ckpt)
    assert resumed.draws.shape[1] == 300
    np.testing.assert_allclose(resumed.draws[0], straight.draws[0, -300:], atol=1e-8)
    assert load_checkpoint(os.path.join(ckpt, "chain_00.ckpt")).iteration == 900


def test_gaussian_ar1_block_is_drawn_exactly():
    n = 30
    rng = np.random.default_rng(8)
    y = np.cumsum(rng.normal(scale=0.3, size=n))
    rows = np.repeat(np.arange(n), 2)
    cols = np.ravel(np.column_stack([np.zeros(n, dtype=int), 1 + np.arange(n)]))
    spec = ModelSpec(
        blocks=[LatentBlock("fixed", 1, name="beta"), LatentBlock("ar1", n, offset=1, hyper=(0, 1), name="u")],
        design_rows=rows, design_cols=cols, design_vals=np.ones(2 * n), n_obs=n,
        likelihood=LikelihoodFamily("gaussian", 4.0),
        hyper_priors=(HyperPrior("gamma", (0,)), HyperPrior("normal", (1,))),
        fixed_mean=[0.0], fixed_variance=[1.0], y=y,
    )
    samples = run_mcmc(spec, None, ChainConfig(n_iter=400, burn_in=100, thin=1, n_chains=1, seed=2))
    assert samples.acceptance["u"] == 1.0
    assert np.all(np.isfinite(samples.draws))
    assert samples.names[-2:] == ("theta1", "theta2")


def test_summary_of_constant_chains(tmp_path):
    draws = np.ones((2, 40, 2))
    draws[:, :, 1] = 3.0
    samples = PosteriorSamples(names=("a", "b"), draws=draws, n_latent=1)
    summary = summarize(samples, str(tmp_path), bins=10)
    assert list(summary.columns) == ["parameter", "mean", "sd", "q025", "q50", "q975", "ess"]
    row = summary.set_index("parameter").loc["b"]
    assert (row["mean"], row["sd"], row["q025"], row["q975"]) == (3.0, 0.0, 3.0, 3.0)
    assert row["ess"] == 80.0
    assert (tmp_path / "mcmc_summary.csv").exists()
    assert (tmp_path / "histograms.csv").exists()
    frame = samples.to_frame()
    assert list(frame.columns) == ["chain", "draw", "a", "b"]
    assert len(frame) == 80
    with pytest.raises(KeyError):
        samples.column("c")


def test_chain_config_validation():
    with pytest.raises(ModelSpecError):
        ChainConfig(n_iter=100, burn_in=100)
    with pytest.raises(ModelSpecError):
        ChainConfig(n_iter=100, burn_in=10, thin=0)
    with pytest.raises(ModelSpecError):
        ChainConfig(target_acceptance=1.0)
    assert ChainConfig(n_iter=1000, burn_in=100, thin=10).n_keep == 90
    cfg = ChainConfig.from_settings({"mcmc": {"n_iter": 500, "burn_in": 50, "unused": 1}},
                                    thin=5, seed=None)
    assert (cfg.n_iter, cfg.burn_in, cfg.thin, cfg.seed) == (500, 50, 5, 1)
