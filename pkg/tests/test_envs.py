import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prefsim.data import Trajectory
from prefsim.envs import (BACKEND, HOPPER_TO_WALKER, REFERENCE_RETURNS, DimMapping, EnvError,
                          EnvSpec, FunctionPolicy, _fallback, env_names, generate_offline_dataset,
                          identity_mapping, make_env, map_simple_to_complex, measure_reference_returns,
                          mixture, project_complex_to_simple, rollout, rollout_batch,
                          rotation_direction, scripted_policy, zero_policy)
from prefsim.envs import _physics

kernels = pytest.importorskip("prefsim.envs._kernels")

# 10-episode expert-mixture mean return over 200 dataset seeds stayed inside
# these bands (measured once, padded slightly).
EXPERT_BANDS = {
    "LineHopper": (35.3, 36.1),
    "TwinWalker": (35.1, 35.9),
    "DiskReacher-easy": (-18.0, -2.0),
    "DiskReacher-hard": (-29.5, -27.0),
}

finite = st.floats(-3, 3, allow_nan=False)


class TestKernelBackends:
    def test_compiled_backend_selected(self):
        assert BACKEND == "cython"

    def test_constants_shared(self):
        assert tuple(kernels.CONSTANTS) == _physics.CONSTANTS

    def test_env_var_forces_fallback(self):
        code = "from prefsim.envs import BACKEND; print(BACKEND)"
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env={**os.environ, "PREFSIM_BACKEND": "python"}, check=True)
        assert out.stdout.strip() == "python"

    @given(arrays(np.float64, (7, 4), elements=finite), arrays(np.float64, (7, 1), elements=finite))
    def test_hopper_step_equivalent(self, s, a):
        for x, y in zip(kernels.hopper_step(s, a), _fallback.hopper_step(s, a)):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)

    @given(arrays(np.float64, (7, 6), elements=finite), arrays(np.float64, (7, 2), elements=finite))
    def test_walker_step_equivalent(self, s, a):
        for x, y in zip(kernels.walker_step(s, a), _fallback.walker_step(s, a)):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)

    @given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi), st.floats(-3, 3),
           arrays(np.float64, (1, 1), elements=finite), st.sampled_from([0.05, 0.5]))
    def test_reacher_step_equivalent(self, th, tgt, om, a, tol):
        s = np.array([[np.cos(th), np.sin(th), om, np.cos(tgt), np.sin(tgt)]])
        for x, y in zip(kernels.reacher_step(s, a, tol), _fallback.reacher_step(s, a, tol)):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("name", ["LineHopper", "TwinWalker", "DiskReacher-easy",
                                      "DiskReacher-hard"])
    @pytest.mark.parametrize("kind", ["expert", "medium", "random"])
    def test_rollouts_equivalent(self, name, kind):
        env = make_env(name)
        pol = scripted_policy(env, kind)
        rng = np.random.default_rng(3)
        init = env.reset(rng, 6)
        params = np.tile(pol.params, (6, 1))
        noise = pol.draw_noise(rng, 6, 30)
        fn = {"Line": "hopper", "Twin": "walker", "Disk": "reacher"}[name[:4]] + "_rollout"
        extra = (env.tolerance,) if fn.startswith("reacher") else ()
        out_c = getattr(kernels, fn)(init, params, noise, *extra)
        out_p = getattr(_fallback, fn)(init, params, noise, *extra)
        for x, y in zip(out_c, out_p):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-10)

    def test_fast_path_matches_stepwise(self):
        """The scripted fast path equals stepping the env with the same policy."""
        env = make_env("TwinWalker")
        pol = scripted_policy(env, "medium")
        fast, _ = rollout_batch(env, pol, 20, 3, np.random.default_rng(9))
        rng = np.random.default_rng(9)
        s = env.reset(rng, 3)
        noise = pol.draw_noise(rng, 3, 20)
        for t in range(20):
            a = np.clip(env.controller(s, np.tile(pol.params, (3, 1))) + noise[:, t], -1, 1)
            np.testing.assert_allclose(a, np.stack([tr.actions[t] for tr in fast]), atol=1e-12)
            s, _ = env.step(s, a)


class TestDynamics:
    def test_zero_policy_fixed_point(self):
        env = make_env("LineHopper")
        init = np.zeros((1, 4))
        trajs, _ = rollout_batch(env, zero_policy(env), 25, 1, np.random.default_rng(0), init=init)
        tr = trajs[0]
        assert np.all(tr.states[:, 1] == 0.0)
        assert np.all(tr.true_rewards == 0.0)

    def test_step_is_pure(self, rng):
        env = make_env("TwinWalker")
        s = env.reset(rng, 4)
        a = rng.uniform(-1, 1, (4, 2))
        s_copy = s.copy()
        assert all(np.array_equal(x, y) for x, y in zip(env.step(s, a), env.step(s, a)))
        assert np.array_equal(s, s_copy)

    def test_rollout_deterministic(self):
        env = make_env("DiskReacher-easy")
        pol = scripted_policy(env, "medium")
        assert rollout(env, pol, 30, seed=4) == rollout(env, pol, 30, seed=4)

    def test_horizon_one(self):
        env = make_env("LineHopper")
        assert rollout(env, scripted_policy(env, "expert"), 1, seed=0).H == 1

    def test_dimension_mismatch(self):
        env = make_env("LineHopper")
        bad = FunctionPolicy(lambda s: np.zeros((len(s), 2)))
        with pytest.raises(EnvError):
            rollout(env, bad, 5, seed=0)
        with pytest.raises(EnvError):
            env.step(np.zeros((1, 3)), np.zeros((1, 1)))

    def test_actions_are_clipped(self):
        env = make_env("LineHopper")
        big = FunctionPolicy(lambda s: np.full((len(s), 1), 5.0))
        tr = rollout(env, big, 5, seed=0)
        assert np.all(np.abs(tr.actions) <= 1.0)

    def test_unknown_env(self):
        with pytest.raises(EnvError):
            make_env("Cheetah")

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            EnvSpec("x", 0, 1, 10)

    def test_reacher_hard_target_fixed(self, rng):
        env = make_env("DiskReacher-hard")
        s = env.reset(rng, 5)
        assert np.allclose(s[:, 3:], s[0, 3:])


class TestDirection:
    def test_positive_velocity_is_ccw(self):
        s = np.zeros((6, 5))
        s[:, 2] = 0.3
        assert rotation_direction(Trajectory(s, np.zeros((6, 1)))) == 1
        s[:, 2] = -0.3
        assert rotation_direction(Trajectory(s, np.zeros((6, 1)))) == -1

    @given(st.floats(-np.pi, np.pi))
    def test_direction_ignores_target(self, tgt):
        s = np.zeros((6, 5))
        s[:, 2] = 0.4
        s[:, 3], s[:, 4] = np.cos(tgt), np.sin(tgt)
        assert rotation_direction(Trajectory(s, np.zeros((6, 1)))) == 1

    def test_ccw_cw_controllers(self):
        env = make_env("DiskReacher-hard")
        for kind, sign in (("ccw", 1), ("cw", -1)):
            trajs, _ = rollout_batch(env, scripted_policy(env, kind), 50, 10, np.random.default_rng(0))
            assert all(rotation_direction(t) == sign for t in trajs)

    def test_hard_expert_takes_the_short_way(self):
        env = make_env("DiskReacher-hard")
        trajs, _ = rollout_batch(env, scripted_policy(env, "expert"), 50, 20, np.random.default_rng(0))
        assert np.mean([rotation_direction(t) == -1 for t in trajs]) > 0.5


class TestMapping:
    def _hopper_traj(self):
        env = make_env("LineHopper")
        return rollout(env, scripted_policy(env, "medium"), 12, seed=2)

    def test_action_duplicated(self):
        tr = self._hopper_traj()
        m = map_simple_to_complex(tr, HOPPER_TO_WALKER)
        assert np.array_equal(m.actions, np.repeat(tr.actions, 2, axis=1))
        assert m.true_rewards is None and m.env_id == "TwinWalker"

    def test_state_layout(self):
        tr = self._hopper_traj()
        m = map_simple_to_complex(tr, HOPPER_TO_WALKER)
        x, v, th, om = tr.states.T
        assert np.array_equal(m.states, np.stack([x, v, th, om, th, om], 1))

    def test_identity(self):
        tr = self._hopper_traj()
        assert map_simple_to_complex(tr, identity_mapping(make_env("LineHopper").spec)) == tr

    def test_round_trip(self):
        tr = self._hopper_traj()
        back = project_complex_to_simple(map_simple_to_complex(tr, HOPPER_TO_WALKER),
                                         HOPPER_TO_WALKER)
        assert np.array_equal(back.states, tr.states) and np.array_equal(back.actions, tr.actions)

    def test_incomplete_mapping_rejected(self):
        h, w = make_env("LineHopper").spec, make_env("TwinWalker").spec
        with pytest.raises(ValueError):
            DimMapping(h, w, ((0, (0,)), (1, (1,)), (2, (2,)), (3, (3,))), ((0, (0, 1)),))

    def test_double_cover_rejected(self):
        h, w = make_env("LineHopper").spec, make_env("TwinWalker").spec
        with pytest.raises(ValueError):
            DimMapping(h, w, ((0, (0,)), (1, (1,)), (2, (2, 4)), (3, (3, 5, 0))), ((0, (0, 1)),))

    def test_source_dims_checked(self):
        with pytest.raises(ValueError):
            map_simple_to_complex(make_env("TwinWalker") and Trajectory(np.zeros((3, 6)), np.zeros((3, 2))),
                                  HOPPER_TO_WALKER)


class TestOfflineGeneration:
    @pytest.mark.parametrize("name", sorted(EXPERT_BANDS))
    def test_expert_band(self, name):
        env = make_env(name)
        off = generate_offline_dataset(env, mixture(env, {"expert": 1.0}), 10, seed=0)
        lo, hi = EXPERT_BANDS[name]
        assert off.n_episodes == 10
        assert lo <= off.episode_returns().mean() <= hi

    @pytest.mark.parametrize("name", env_names())
    def test_random_below_expert(self, name):
        env = make_env(name)
        rand = generate_offline_dataset(env, mixture(env, {"random": 1.0}), 20, seed=1)
        expert = generate_offline_dataset(env, mixture(env, {"expert": 1.0}), 20, seed=1)
        assert rand.episode_returns().mean() < expert.episode_returns().mean()

    def test_zero_episodes(self):
        env = make_env("LineHopper")
        assert len(generate_offline_dataset(env, mixture(env, {"expert": 1.0}), 0, seed=0)) == 0

    def test_empty_mixture(self):
        with pytest.raises(EnvError):
            generate_offline_dataset(make_env("LineHopper"), [], 3, seed=0)

    def test_negative_weight(self):
        env = make_env("LineHopper")
        with pytest.raises(EnvError):
            generate_offline_dataset(env, mixture(env, {"expert": -1.0}), 3, seed=0)

    def test_deterministic(self):
        env = make_env("TwinWalker")
        a = generate_offline_dataset(env, mixture(env, {"random": 1, "expert": 1}), 8, seed=3)
        b = generate_offline_dataset(env, mixture(env, {"random": 1, "expert": 1}), 8, seed=3)
        assert a == b

    def test_next_observations_chain(self, hopper_replay):
        s, e = hopper_replay.episode_bounds[0]
        np.testing.assert_array_equal(hopper_replay.next_observations[s:e - 1],
                                      hopper_replay.observations[s + 1:e])


class TestReferenceReturns:
    @pytest.mark.parametrize("name", env_names())
    def test_frozen_values_reproduce(self, name):
        assert measure_reference_returns(name) == pytest.approx(REFERENCE_RETURNS[name], rel=1e-9)

    @pytest.mark.parametrize("name", env_names())
    def test_random_below_expert(self, name):
        lo, hi = REFERENCE_RETURNS[name]
        assert lo < hi
