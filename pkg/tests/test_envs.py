import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distilrl.envs import (
    ActionMapping,
    Env,
    VectorEnv,
    clip_reward,
    generate_task,
    map_action,
    registered_tasks,
    sample_task,
    task_action_mapping,
)
from distilrl.errors import ConfigurationError, ContractError

ALL_TASKS = ("chase", "dodge", "raid", "swarm", "volley")


def test_registry_contains_five_tasks():
    assert registered_tasks() == ALL_TASKS


def test_unknown_task_rejected():
    with pytest.raises(ConfigurationError):
        generate_task("asteroids", 0)


def test_action_mapping_rows():
    # The shooter with the extended internal space skips its unused UP slot.
    assert task_action_mapping("chase").table == (0, 1, 3, 4)
    for name in ("volley", "swarm", "dodge", "raid"):
        assert task_action_mapping(name).table == (0, 1, 2, 3)


def test_map_action_examples():
    assert map_action(task_action_mapping("chase"), 2) == 3
    assert map_action(task_action_mapping("volley"), 3) == 3
    for name in ALL_TASKS:
        assert map_action(task_action_mapping(name), 0) == 0


def test_map_action_out_of_range():
    with pytest.raises(ContractError):
        map_action(task_action_mapping("chase"), 4)


def test_action_mapping_must_be_injective():
    with pytest.raises(ConfigurationError):
        ActionMapping((0, 1, 1, 3))


def test_clip_reward_examples():
    assert clip_reward(3.0) == 1
    assert clip_reward(0.0) == 0
    assert clip_reward(-0.5) == -1


@settings(max_examples=100)
@given(st.floats(-1e6, 1e6))
def test_clip_reward_is_sign(raw):
    assert clip_reward(raw) == int(np.sign(raw))
    assert clip_reward(raw) in (-1, 0, 1)


def _scripted_run(name, seed, script, size=12):
    env = Env(generate_task(name, seed, size), auto_reset=True)
    env.reset()
    trace = []
    for action in script:
        res = env.step(action)
        trace.append((res.reward, res.raw_delta, res.done))
    return trace


@pytest.mark.parametrize("name", ALL_TASKS)
def test_trajectory_determinism(name):
    rng = np.random.default_rng(0)
    script = rng.integers(0, 4, size=100).tolist()
    assert _scripted_run(name, 3, script) == _scripted_run(name, 3, script)


def test_task_pairs_have_different_initial_frames():
    frames = {name: generate_task(name, 3).render() for name in ALL_TASKS}
    names = list(frames)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            assert not np.array_equal(frames[names[i]], frames[names[j]])


def test_same_task_different_seed_different_layout():
    a = generate_task("chase", 3).render()
    b = generate_task("chase", 4).render()
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("name", ALL_TASKS)
def test_noop_keeps_agent_still_with_zero_reward(name):
    env = Env(generate_task(name, 5))
    env.reset()
    col_before = env.task.agent_col
    res = env.step(0)
    assert env.task.agent_col == col_before
    assert res.reward == 0
    assert res.raw_delta == 0.0


@pytest.mark.parametrize("name", ALL_TASKS)
def test_observation_contract(name):
    env = Env(generate_task(name, 1), auto_reset=True)
    obs = env.reset()
    assert obs.shape == (4, 12, 12)
    rng = np.random.default_rng(2)
    for _ in range(200):
        res = env.step(int(rng.integers(0, 4)))
        assert res.obs.shape == (4, 12, 12)
        assert res.obs.min() >= 0.0 and res.obs.max() <= 1.0
        assert res.reward == int(np.sign(res.raw_delta))


def test_step_cap_terminates_episodes():
    env = Env(generate_task("chase", 0), max_episode_steps=10, auto_reset=True)
    env.reset()
    for i in range(9):
        assert not env.step(0).done
    assert env.step(0).done


def test_step_on_terminal_without_autoreset_raises():
    env = Env(generate_task("chase", 0), max_episode_steps=2, auto_reset=False)
    env.reset()
    env.step(0)
    res = env.step(0)
    assert res.done
    with pytest.raises(ContractError):
        env.step(0)


def test_episode_stats_on_done():
    env = Env(generate_task("dodge", 7), max_episode_steps=400, auto_reset=True)
    env.reset()
    rng = np.random.default_rng(0)
    raw_sum = 0.0
    steps = 0
    while True:
        res = env.step(int(rng.integers(0, 4)))
        raw_sum += res.raw_delta
        steps += 1
        if res.done:
            assert res.episode_return == pytest.approx(raw_sum)
            assert res.episode_length == steps
            break


def test_sample_task_singleton():
    rng = np.random.default_rng(0)
    for _ in range(10):
        assert sample_task(["volley"], rng) == "volley"


def test_sample_task_empty_set_rejected():
    with pytest.raises(ConfigurationError):
        sample_task([], np.random.default_rng(0))


def test_sample_task_uniform_within_3_sigma():
    rng = np.random.default_rng(77)
    n = 10_000
    draws = [sample_task(["chase", "swarm"], rng) for _ in range(n)]
    k = draws.count("chase")
    sigma = np.sqrt(n * 0.25)
    assert abs(k - n / 2) < 3 * sigma


def test_sample_task_deterministic_sequence():
    seq1 = [sample_task(ALL_TASKS, np.random.default_rng(5)) for _ in range(1)]
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    a = [sample_task(ALL_TASKS, rng_a) for _ in range(30)]
    b = [sample_task(ALL_TASKS, rng_b) for _ in range(30)]
    assert a == b


def test_vector_env_single_worker_matches_env():
    venv = VectorEnv("volley", 1, base_seed=9)
    single = Env(generate_task("volley", venv.workers[0].task.seed), auto_reset=True)
    obs_v = venv.reset()
    obs_s = single.reset()
    assert np.array_equal(obs_v[0], obs_s)
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = int(rng.integers(0, 4))
        rv = venv.step([a])
        rs = single.step(a)
        assert np.array_equal(rv.obs[0], rs.obs)
        assert rv.rewards[0] == rs.reward
        assert rv.dones[0] == rs.done


def test_vector_env_batch_shapes_and_autoreset():
    venv = VectorEnv("dodge", 10, base_seed=3, max_episode_steps=50)
    obs = venv.reset()
    assert obs.shape == (10, 4, 12, 12)
    rng = np.random.default_rng(4)
    total_completed = 0
    for _ in range(120):
        res = venv.step(rng.integers(0, 4, size=10))
        assert res.obs.shape == (10, 4, 12, 12)
        total_completed += len(res.completed)
    assert total_completed >= 10  # step cap guarantees multiple resets


def test_worker_independence_under_seed_permutation():
    seeds = [11, 22, 33]
    rng = np.random.default_rng(8)
    script = rng.integers(0, 4, size=(40, 3))

    def run(worker_seeds):
        venv = VectorEnv("swarm", 3, base_seed=0, worker_seeds=worker_seeds)
        venv.reset()
        traces = [[] for _ in range(3)]
        for actions in script:
            res = venv.step(actions)
            for i in range(3):
                traces[i].append((float(res.raw_deltas[i]), bool(res.dones[i])))
        return traces

    base = run(seeds)
    permuted = run([seeds[1], seeds[0], seeds[2]])
    # worker 2 untouched; workers 0/1 swapped, but their action scripts differ,
    # so only the seed-to-trace binding is checked via the identity worker
    assert permuted[2] == base[2]

    same_script = np.tile(script[:, :1], (1, 3))

    def run_same(worker_seeds):
        venv = VectorEnv("swarm", 3, base_seed=0, worker_seeds=worker_seeds)
        venv.reset()
        traces = [[] for _ in range(3)]
        for actions in same_script:
            res = venv.step(actions)
            for i in range(3):
                traces[i].append((float(res.raw_deltas[i]), bool(res.dones[i])))
        return traces

    base2 = run_same(seeds)
    perm2 = run_same([seeds[1], seeds[0], seeds[2]])
    assert perm2[0] == base2[1]
    assert perm2[1] == base2[0]
    assert perm2[2] == base2[2]
