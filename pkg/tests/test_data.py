import numpy as np
import pytest
from conftest import make_traj, traj_with_return
from hypothesis import given
from hypothesis import strategies as st

from prefsim.data import (DatasetError, OfflineDataset, PreferenceDataset, PreferencePair,
                          Trajectory, build_sets, drop_neutral, human_style_label,
                          inject_label_noise, label_dataset, load_any, load_offline,
                          load_preferences, noise_flip_indices, sample_pairs, save_offline,
                          save_preferences, script_label)


def _dataset(labels, H=4):
    pairs = [PreferencePair(make_traj(H, seed=2 * i), make_traj(H, seed=2 * i + 1), y)
             for i, y in enumerate(labels)]
    return PreferenceDataset(pairs, "toy", H, "script")


class TestTrajectory:
    def test_length_mismatch_rejected(self):
        with pytest.raises(DatasetError):
            Trajectory(np.zeros((3, 2)), np.zeros((4, 1)))

    def test_non_finite_rejected(self):
        s = np.zeros((3, 2))
        s[1, 0] = np.nan
        with pytest.raises(DatasetError):
            Trajectory(s, np.zeros((3, 1)))

    def test_empty_rejected(self):
        with pytest.raises(DatasetError):
            Trajectory(np.zeros((0, 2)), np.zeros((0, 1)))

    def test_reward_length_checked(self):
        with pytest.raises(DatasetError):
            Trajectory(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(2))

    def test_prefix_and_features(self):
        t = make_traj(6, 3, 2)
        assert t.features.shape == (6, 5)
        p = t.prefix(2)
        assert p.H == 3 and np.array_equal(p.states, t.states[:3])


class TestPairs:
    def test_invalid_label(self):
        with pytest.raises(DatasetError):
            PreferencePair(make_traj(), make_traj(seed=1), 0.3)

    def test_length_mismatch(self):
        with pytest.raises(DatasetError):
            PreferencePair(make_traj(4), make_traj(5), 1)

    def test_env_mismatch(self):
        with pytest.raises(DatasetError):
            PreferencePair(make_traj(env_id="a"), make_traj(env_id="b"), 1)


class TestBuildSets:
    def test_label_one_prefers_seg1(self):
        ds = _dataset([1])
        sets = build_sets(ds)
        assert sets.preferred == [ds.pairs[0].seg1]
        assert sets.non_preferred == [ds.pairs[0].seg0]

    def test_label_zero_prefers_seg0(self):
        ds = _dataset([0])
        sets = build_sets(ds)
        assert sets.preferred == [ds.pairs[0].seg0]

    def test_neutral_goes_to_both(self):
        ds = _dataset([0.5])
        sets = build_sets(ds)
        p = ds.pairs[0]
        assert sets.preferred == [p.seg0, p.seg1] and sets.non_preferred == [p.seg0, p.seg1]

    def test_two_pairs_cardinality(self):
        sets = build_sets(_dataset([0, 1]))
        assert len(sets.preferred) == 2 and len(sets.non_preferred) == 2

    def test_empty_errors(self):
        with pytest.raises(DatasetError, match="no pairs"):
            build_sets(PreferenceDataset([], "toy", 4))

    @given(st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=1, max_size=25))
    def test_cardinality_law(self, labels):
        sets = build_sets(_dataset(labels, H=2))
        n0, n1, n5 = labels.count(0.0), labels.count(1.0), labels.count(0.5)
        assert len(sets.preferred) == n0 + n1 + 2 * n5
        assert len(sets.non_preferred) == n0 + n1 + 2 * n5


class TestLabelNoise:
    def test_flips_exactly_two_of_ten(self):
        ds = _dataset([0, 1] * 5)
        noisy = inject_label_noise(ds, 0.2, seed=3)
        assert int(np.sum(noisy.labels != ds.labels)) == 2
        assert noisy.provenance == "noisy(0.2)"

    def test_zero_rate_unchanged(self):
        ds = _dataset([0, 1, 0.5])
        assert np.array_equal(inject_label_noise(ds, 0.0, 1).labels, ds.labels)

    def test_only_neutral_unchanged(self):
        ds = _dataset([0.5] * 4)
        assert np.array_equal(inject_label_noise(ds, 0.5, 1).labels, ds.labels)

    def test_rate_out_of_range(self):
        with pytest.raises(DatasetError):
            inject_label_noise(_dataset([0]), 1.5, 0)

    @given(st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=1, max_size=40),
           st.floats(0, 1), st.integers(0, 2**31))
    def test_flip_count_and_involution(self, labels, rate, seed):
        labels = np.array(labels)
        ds = _dataset(list(labels), H=1)
        noisy = inject_label_noise(ds, rate, seed)
        changed = noisy.labels != labels
        n_nonneutral = int(np.sum(labels != 0.5))
        assert changed.sum() == round(rate * n_nonneutral)
        assert np.all(labels[changed] != 0.5)
        assert np.array_equal(np.flatnonzero(changed), noise_flip_indices(labels, rate, seed))
        # the same seed selects the same indices on the flipped labels, restoring the original
        again = inject_label_noise(noisy, rate, seed)
        assert np.array_equal(again.labels, labels)


class TestLabelers:
    def test_script_examples(self):
        assert script_label(traj_with_return(5.0), traj_with_return(3.0)) == 0.0
        assert script_label(traj_with_return(3.0), traj_with_return(5.0)) == 1.0
        assert script_label(traj_with_return(4.0), traj_with_return(4.0)) == 0.0

    def test_script_needs_rewards(self):
        with pytest.raises(DatasetError):
            script_label(make_traj(rewards=False), make_traj(seed=1))

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_script_antisymmetric(self, a, b):
        ta, tb = traj_with_return(a), traj_with_return(b)
        if ta.ret() != tb.ret():
            assert (script_label(ta, tb) == 1.0) == (script_label(tb, ta) == 0.0)
        assert script_label(ta, tb) in (0.0, 1.0)

    def test_human_style_neutral_band(self):
        assert human_style_label(traj_with_return(1.0), traj_with_return(1.4), 0.5) == 0.5
        assert human_style_label(traj_with_return(1.0), traj_with_return(2.0), 0.5) == 1.0
        assert human_style_label(traj_with_return(2.0), traj_with_return(1.0), 0.5) == 0.0

    def test_label_dataset_and_drop_neutral(self):
        pairs = [PreferencePair(traj_with_return(0.0), traj_with_return(x)) for x in (0.1, 3, -3)]
        ds = PreferenceDataset(pairs, "toy", 4, "unlabeled")
        lab = label_dataset(ds, "human-style", 0.5)
        assert list(lab.labels) == [0.5, 1.0, 0.0]
        assert lab.provenance == "human-style"
        assert list(drop_neutral(lab).labels) == [1.0, 0.0]
        with pytest.raises(DatasetError):
            label_dataset(ds, "oracle")


class TestSamplePairs:
    def test_shapes(self, hopper_replay):
        ds = sample_pairs(hopper_replay, 20, 100, seed=0)
        assert len(ds) == 100
        assert all(p.seg0.H == 20 and p.seg1.H == 20 for p in ds)

    def test_deterministic(self, hopper_replay):
        assert sample_pairs(hopper_replay, 20, 30, 4) == sample_pairs(hopper_replay, 20, 30, 4)

    def test_zero_pairs(self, hopper_replay):
        assert len(sample_pairs(hopper_replay, 20, 0, 0)) == 0

    def test_too_long(self, hopper_replay):
        with pytest.raises(DatasetError):
            sample_pairs(hopper_replay, 51, 3, 0)

    def test_segments_come_from_dataset(self, hopper_replay):
        ds = sample_pairs(hopper_replay, 10, 5, 1)
        obs = hopper_replay.observations
        for p in ds:
            row = np.flatnonzero((obs == p.seg0.states[0]).all(1))
            assert len(row) >= 1
            s = row[0]
            assert np.array_equal(obs[s:s + 10], p.seg0.states)


class TestOfflineDataset:
    def test_partition_enforced(self):
        z = np.zeros((4, 2))
        with pytest.raises(DatasetError):
            OfflineDataset(z, np.zeros((4, 1)), np.zeros(4), z, np.zeros(4),
                           np.array([[0, 2], [3, 4]]), "toy")

    def test_rewards_finite(self):
        z = np.zeros((2, 2))
        with pytest.raises(DatasetError):
            OfflineDataset(z, np.zeros((2, 1)), np.array([0, np.inf]), z, np.zeros(2),
                           np.array([[0, 2]]), "toy")

    def test_with_rewards_keeps_shadow(self, hopper_replay):
        new = hopper_replay.with_rewards(np.zeros(len(hopper_replay)))
        assert np.array_equal(new.true_rewards, hopper_replay.true_rewards)
        assert np.all(new.rewards == 0)
        assert np.array_equal(new.observations, hopper_replay.observations)


class TestContainer:
    def test_preferences_round_trip(self, tmp_path):
        ds = _dataset([0, 1, 0.5, 1])
        path = save_preferences(ds, tmp_path / "p.npz")
        back = load_preferences(path)
        assert back == ds
        assert type(load_any(path)) is PreferenceDataset

    def test_preferences_without_rewards(self, tmp_path):
        pairs = [PreferencePair(make_traj(rewards=False), make_traj(seed=1, rewards=False), 1)]
        ds = PreferenceDataset(pairs, "toy", 5)
        assert load_preferences(save_preferences(ds, tmp_path / "p.npz")) == ds

    def test_offline_round_trip_bit_exact(self, tmp_path, hopper_replay):
        back = load_offline(save_offline(hopper_replay, tmp_path / "o.npz"))
        assert back == hopper_replay
        assert back.observations.tobytes() == hopper_replay.observations.tobytes()

    def test_kind_checked(self, tmp_path, hopper_replay):
        path = save_offline(hopper_replay, tmp_path / "o.npz")
        with pytest.raises(DatasetError):
            load_preferences(path)

    def test_header_fields(self, tmp_path):
        import json
        path = save_preferences(_dataset([1, 0]), tmp_path / "p.npz")
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            assert {"kind", "schema_version", "env_id", "H", "provenance"} <= set(header)
            assert z["pairs"].shape == (2, 3)
