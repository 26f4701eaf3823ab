"""Task energy and the Langevin sampler: values, gradients, RNG protocol."""

import numpy as np
import pytest

from empl.contrastive import PromptBatch, SimConfig, class_scores
from empl.encoders import (
    Vocabulary,
    encode_class_prompts,
    encode_image,
    init_params,
)
from empl.energy import (
    SgldConfig,
    energy,
    energy_and_grads,
    init_chain,
    run_chain,
    run_chains,
    sample_prompt_batch,
    sample_task_chains,
    sgld_step,
    task_view,
    unseen_mass,
)
from empl.errors import ConfigError, DivergenceError, ShapeError, TaskError
from empl.numeric import check_grads, log_sum_exp, stream
from empl.tasks import TaskSpec


def make_vocab(n=6, d_tok=2):
    vecs = np.arange(n * d_tok, dtype=float).reshape(n, d_tok) / 10.0
    return Vocabulary(names=tuple(f"c{i}" for i in range(n)), word_vecs=vecs)


@pytest.fixture
def vocab():
    return make_vocab()


@pytest.fixture
def params(vocab):
    return init_params(vocab, input_dim=2, embed_dim=3, context_tokens=2, init_scale=0.1, seed=1)


TASK = TaskSpec(observed=(0, 1), unseen=(2,))
SIM = SimConfig(metric="cosine", aggregate="mean", temperature=0.07)
SGLD = SgldConfig(alpha=0.01, steps=10, init_noise_std=0.01, mode="joint", persistent=False)

ALL_SIMS = [
    SimConfig(metric=m, aggregate=a, temperature=0.07)
    for m in ("cosine", "neg_euclidean")
    for a in ("mean", "lse")
]


def make_batch(rng, class_ids=(0, 1, 2), p=2, d=3):
    return PromptBatch(class_ids=class_ids, embeddings=rng.normal(size=(len(class_ids), p, d)))


def test_sgld_config_validation():
    with pytest.raises(ConfigError):
        SgldConfig(alpha=0.0, steps=5, init_noise_std=0.01, mode="joint", persistent=False)
    with pytest.raises(ConfigError):
        SgldConfig(alpha=0.01, steps=-1, init_noise_std=0.01, mode="joint", persistent=False)
    with pytest.raises(ConfigError):
        SgldConfig(alpha=0.01, steps=5, init_noise_std=-0.1, mode="joint", persistent=False)
    with pytest.raises(ConfigError):
        SgldConfig(alpha=0.01, steps=5, init_noise_std=0.01, mode="gibbs", persistent=False)


def test_energy_matches_log_mass_formula(rng):
    x = rng.normal(size=3)
    batch = make_batch(rng)
    for cfg in ALL_SIMS:
        z = class_scores(x, batch, cfg) / cfg.temperature
        expect = log_sum_exp(z[[2]]) - log_sum_exp(z)
        assert energy(x, batch, TASK, cfg) == pytest.approx(expect, abs=1e-12)


def test_energy_is_log_probability(rng):
    for k in range(50):
        r = np.random.default_rng(k)
        x = r.normal(size=3)
        batch = make_batch(r)
        e = energy(x, batch, TASK, SIM)
        assert e <= 0.0
        mass = unseen_mass(x, batch, TASK, SIM)
        assert mass == pytest.approx(np.exp(e), abs=1e-15)
        assert 0.0 < mass <= 1.0


def test_energy_all_unseen_is_exactly_zero(rng):
    task = TaskSpec(observed=(), unseen=(0, 1, 2))
    x = rng.normal(size=3)
    batch = make_batch(rng)
    value, dx, dh = energy_and_grads(x, batch, task, SIM)
    assert value == 0.0
    assert energy(x, batch, task, SIM) == 0.0
    assert np.all(dx == 0.0) and np.all(dh == 0.0)


def test_energy_validates_task(rng):
    x = rng.normal(size=3)
    batch = make_batch(rng)
    with pytest.raises(TaskError):
        energy(x, batch, TaskSpec(observed=(0, 1, 2), unseen=(3,)), SIM)
    with pytest.raises(TaskError):
        energy(x, batch, TaskSpec(observed=(0, 1, 2), unseen=()), SIM)


def test_energy_rises_when_unseen_prompt_approaches_image(rng):
    cfg = SimConfig(metric="neg_euclidean", aggregate="mean", temperature=0.07)
    x = rng.normal(size=3)
    batch = make_batch(rng, p=1)
    far = batch.with_class_embedding(2, (x + 2.0)[None, :])
    near = batch.with_class_embedding(2, (x + 0.1)[None, :])
    assert energy(x, near, TASK, cfg) > energy(x, far, TASK, cfg)


def test_energy_grads_match_fd(rng):
    x = rng.normal(size=3)
    batch = make_batch(rng)
    for cfg in ALL_SIMS:
        _, dx, dh = energy_and_grads(x, batch, TASK, cfg)
        rep = check_grads(lambda v: energy(v, batch, TASK, cfg), [(x, dx)])
        assert rep.ok(), (cfg, rep)

        def e_of_emb(vec):
            pb = PromptBatch(class_ids=batch.class_ids, embeddings=vec.reshape(3, 2, 3))
            return energy(x, pb, TASK, cfg)

        rep_h = check_grads(e_of_emb, [(batch.embeddings.ravel(), dh.ravel())])
        assert rep_h.ok(), (cfg, rep_h)


def test_init_chain_always_consumes_the_kick(params, vocab):
    view = task_view(params, vocab, TASK, target_index=2)
    quiet = SgldConfig(alpha=0.01, steps=1, init_noise_std=0.0, mode="joint", persistent=False)
    state = init_chain(np.zeros(3), view, quiet, seed=7, key=(0,))
    assert np.array_equal(state.h, view.base[2])
    fresh = stream(7, 0)
    fresh.normal(size=3)
    assert state.rng.normal() == fresh.normal()


def test_serial_chain_is_deterministic(params, vocab):
    view = task_view(params, vocab, TASK, target_index=2)
    x0 = encode_image(params, np.array([0.3, -0.2]))
    runs = []
    for _ in range(2):
        state = init_chain(x0, view, SGLD, seed=3, key=(1,))
        runs.append(run_chain(state, view, TASK, SIM, SGLD))
    assert np.array_equal(runs[0].x, runs[1].x)
    assert np.array_equal(runs[0].h, runs[1].h)
    other = run_chain(init_chain(x0, view, SGLD, seed=3, key=(2,)), view, TASK, SIM, SGLD)
    assert not np.array_equal(other.h, runs[0].h)


def test_conditional_mode_pins_the_image(params, vocab):
    view = task_view(params, vocab, TASK, target_index=2)
    x0 = encode_image(params, np.array([0.3, -0.2]))
    cond = SgldConfig(alpha=0.01, steps=8, init_noise_std=0.01, mode="conditional_on_image", persistent=False)
    state = run_chain(init_chain(x0, view, cond, seed=3, key=(0,)), view, TASK, SIM, cond)
    assert np.array_equal(state.x, x0)
    joint = run_chain(init_chain(x0, view, SGLD, seed=3, key=(0,)), view, TASK, SIM, SGLD)
    assert not np.array_equal(joint.x, x0)


def test_divergence_reports_the_step(params, vocab):
    view = task_view(params, vocab, TASK, target_index=2)
    bad = lambda x, h: (np.full_like(x, 1.7e308), np.full_like(h, 1.7e308))
    hot = SgldConfig(alpha=4.0, steps=3, init_noise_std=0.0, mode="joint", persistent=False)
    state = init_chain(np.zeros(3), view, hot, seed=0, key=(0,))
    with pytest.raises(DivergenceError) as err:
        with np.errstate(over="ignore", invalid="ignore"):
            run_chain(state, view, TASK, SIM, hot, energy_override=bad)
    assert err.value.step == 0
    assert "step 0" in str(err.value)


def test_zero_override_serial_walk_is_reconstructible(params, vocab):
    view = task_view(params, vocab, TASK, target_index=2)
    zero = lambda x, h: (np.zeros_like(x), np.zeros_like(h))
    x0 = np.array([0.4, -0.1, 0.2])
    for mode in ("joint", "conditional_on_image"):
        cfg = SgldConfig(alpha=0.04, steps=6, init_noise_std=0.5, mode=mode, persistent=False)
        state = init_chain(x0, view, cfg, seed=11, key=(4, 2))
        state = run_chain(state, view, TASK, SIM, cfg, energy_override=zero)

        rng = stream(11, 4, 2)
        root = np.sqrt(cfg.alpha)
        h = view.base[2] + cfg.init_noise_std * rng.normal(size=3)
        x = x0.copy()
        for _ in range(cfg.steps):
            if mode == "joint":
                x = x - 0.5 * cfg.alpha * 0.0 + root * rng.normal(size=3)
            h = h - 0.5 * cfg.alpha * 0.0 + root * rng.normal(size=3)
        assert np.array_equal(state.x, x)
        assert np.array_equal(state.h, h)


def test_vectorized_driver_matches_serial(params, vocab):
    base = encode_class_prompts(params, vocab, TASK.classes)
    umask = np.array([TASK.is_unseen(c) for c in TASK.classes])
    r = np.random.default_rng(0)
    x0 = r.normal(scale=0.1, size=(4, 3))
    target_idx = np.array([0, 1, 2, 2])
    keys = [(0,), (1,), (2,), (3,)]
    for metric in ("cosine", "neg_euclidean"):
        cfg = SimConfig(metric=metric, aggregate="mean", temperature=0.07)
        for mode in ("joint", "conditional_on_image"):
            sg = SgldConfig(alpha=0.01, steps=15, init_noise_std=0.01, mode=mode, persistent=False)
            run = run_chains(x0, base, target_idx, umask, cfg, sg, seed=8, keys=keys)
            for c in range(4):
                view = task_view(params, vocab, TASK, target_index=int(target_idx[c]))
                state = init_chain(x0[c], view, sg, seed=8, key=keys[c])
                state = run_chain(state, view, TASK, cfg, sg)
                assert np.allclose(run.x[c], state.x, atol=1e-12), (metric, mode, c)
                assert np.allclose(run.h[c], state.h, atol=1e-12), (metric, mode, c)


def test_driver_history_records_the_tail(params, vocab):
    base = encode_class_prompts(params, vocab, TASK.classes)
    umask = np.array([TASK.is_unseen(c) for c in TASK.classes])
    x0 = np.zeros((2, 3)) + 0.1
    run = run_chains(
        x0, base, np.array([2, 2]), umask, SIM, SGLD, seed=1,
        keys=[(0,), (1,)], record_last=3,
    )
    assert run.history_x.shape == (2, 3, 3)
    assert run.history_h.shape == (2, 3, 3)
    assert np.array_equal(run.history_x[:, -1], run.x)
    assert np.array_equal(run.history_h[:, -1], run.h)


def test_driver_shape_checks(params, vocab):
    base = encode_class_prompts(params, vocab, TASK.classes)
    umask = np.array([False, False, True])
    with pytest.raises(ShapeError):
        run_chains(np.zeros(3), base, np.array([0]), umask, SIM, SGLD, 0, [(0,)])
    with pytest.raises(ShapeError):
        run_chains(np.zeros((2, 3)), base, np.array([0]), umask, SIM, SGLD, 0, [(0,), (1,)])
    with pytest.raises(ShapeError):
        run_chains(np.zeros((2, 3)), base, np.array([0, 1]), umask, SIM, SGLD, 0, [(0,)])
    with pytest.raises(ShapeError):
        run_chains(
            np.zeros((2, 3)), base, np.array([0, 1]), umask, SIM, SGLD, 0,
            [(0,), (1,)], h_start=np.zeros((1, 3)),
        )


def test_sample_prompt_batch_golden_values(params, vocab):
    f = encode_image(params, np.array([0.3, -0.2]))
    batch = sample_prompt_batch(f, params, vocab, TASK, 2, SIM, SGLD, seed=99)
    assert batch.class_ids == TASK.classes
    assert batch.embeddings.shape == (3, 2, 3)
    assert np.allclose(
        batch.embeddings[0, 0], [0.74462231, -0.0182708, 0.0959072], atol=1e-7
    )
    assert np.allclose(
        batch.embeddings[2, 1], [-0.85265366, -0.21767464, 0.14573867], atol=1e-7
    )


def test_sample_prompt_batch_ignores_requested_mode(params, vocab):
    f = encode_image(params, np.array([0.3, -0.2]))
    cond = SgldConfig(alpha=0.01, steps=10, init_noise_std=0.01, mode="conditional_on_image", persistent=False)
    a = sample_prompt_batch(f, params, vocab, TASK, 2, SIM, SGLD, seed=5)
    b = sample_prompt_batch(f, params, vocab, TASK, 2, SIM, cond, seed=5)
    assert np.array_equal(a.embeddings, b.embeddings)


def test_sample_prompt_batch_chains_are_distinct(params, vocab):
    f = encode_image(params, np.array([0.3, -0.2]))
    batch = sample_prompt_batch(f, params, vocab, TASK, 3, SIM, SGLD, seed=7)
    flat = batch.embeddings.reshape(-1, 3)
    for i in range(len(flat)):
        for j in range(i + 1, len(flat)):
            assert not np.array_equal(flat[i], flat[j])
    again = sample_prompt_batch(f, params, vocab, TASK, 3, SIM, SGLD, seed=7)
    assert np.array_equal(batch.embeddings, again.embeddings)
    with pytest.raises(ConfigError):
        sample_prompt_batch(f, params, vocab, TASK, 0, SIM, SGLD, seed=7)


def test_sample_task_chains_golden_values(params, vocab):
    f = encode_image(params, np.array([0.3, -0.2]))
    js = sample_task_chains(np.tile(f, (3, 1)), params, vocab, TASK, SIM, SGLD, seed=5)
    assert js.class_ids == TASK.classes
    assert js.prompts.n_prompts == 1
    assert np.allclose(js.x[1], [0.37273072, -2.47112639, -2.27711954], atol=1e-6)
    assert np.allclose(js.prompts.embeddings[2, 0], [0.52478541, 6.64996906, 0.7532374], atol=1e-6)


def test_sample_task_chains_restart_matches_base(params, vocab):
    f = encode_image(params, np.array([0.3, -0.2]))
    base = encode_class_prompts(params, vocab, TASK.classes)
    x0 = np.tile(f, (3, 1))
    default = sample_task_chains(x0, params, vocab, TASK, SIM, SGLD, seed=5)
    restarted = sample_task_chains(x0, params, vocab, TASK, SIM, SGLD, seed=5, h0=base)
    assert np.array_equal(default.prompts.embeddings, restarted.prompts.embeddings)
    elsewhere = sample_task_chains(x0, params, vocab, TASK, SIM, SGLD, seed=5, h0=base + 1.0)
    assert not np.array_equal(default.prompts.embeddings, elsewhere.prompts.embeddings)


def test_langevin_gaussian_target_smoke():
    shift = 0.7
    gauss = lambda x, h: (np.zeros_like(x), h - shift)
    cfg = SgldConfig(alpha=0.01, steps=1000, init_noise_std=0.0, mode="conditional_on_image", persistent=False)
    n_chains, d = 500, 3
    run = run_chains(
        np.zeros((n_chains, d)), np.zeros((1, d)), np.zeros(n_chains, dtype=int),
        np.array([True]), SIM, cfg, seed=2, keys=[(c,) for c in range(n_chains)],
        energy_override=gauss,
    )
    values = run.h.ravel()
    assert values.mean() == pytest.approx(shift, abs=0.1)
    assert values.var() == pytest.approx(1.0 / (1.0 - cfg.alpha / 4.0), rel=0.12)
