import itertools
import math

import numpy as np
import pytest
import torch
from conftest import make_traj
from hypothesis import given
from hypothesis import strategies as st
from oracles import nt_xent, rel_err

from prefsim.data import TrajectorySets
from prefsim.encoder import (EncoderConfig, GroupLatent, SetEncoder, contrastive_loss,
                             encode_subset, encode_trajectory, form_subsets, infer_group_latent,
                             infer_group_latents, load_encoder, save_encoder, train_encoder)


def _t(x):
    return torch.tensor(x, dtype=torch.float64)


def _toy_sets(n=8, H=6, gap=2.0, seed=0):
    rng = np.random.default_rng(seed)
    from prefsim.data import Trajectory
    pref = [Trajectory(rng.normal(gap, 1, (H, 3)), rng.normal(size=(H, 2))) for _ in range(n)]
    nonp = [Trajectory(rng.normal(-gap, 1, (H, 3)), rng.normal(size=(H, 2))) for _ in range(n)]
    return TrajectorySets(pref, nonp)


SMALL = dict(d_model=16, ff_dim=16, z_dim=4, n_heads=2, lr_init=3e-3, lr_min=1e-4)


class TestContrastiveLoss:
    def test_separated_example(self):
        loss = contrastive_loss(_t([[1, 0], [1, 0]]), _t([[0, 1], [0, 1]]), 0.1)
        assert float(loss) == pytest.approx(math.log(1 + 2 * math.exp(-10)), rel=1e-10)
        assert float(loss) == pytest.approx(9.08e-5, rel=1e-3)

    def test_identical_latents(self):
        # one positive among three equally similar candidates per anchor
        z = _t([[0.3, 0.4]] * 2)
        assert float(contrastive_loss(z, z.clone(), 0.1)) == pytest.approx(math.log(3), rel=1e-12)
        assert nt_xent(z.tolist(), z.tolist(), 0.1) == pytest.approx(math.log(3), rel=1e-12)

    def test_single_latent_rejected(self):
        with pytest.raises(ValueError):
            contrastive_loss(_t([[1, 0]]), _t([[0, 1], [1, 1]]), 0.1)

    def test_matches_oracle_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(150):
            m, d = rng.integers(2, 5, size=2), int(rng.integers(2, 7))
            zp, zn = rng.normal(size=(m[0], d)), rng.normal(size=(m[1], d))
            T = float(rng.uniform(0.05, 2.0))
            got = float(contrastive_loss(_t(zp), _t(zn), T))
            assert rel_err(got, nt_xent(zp.tolist(), zn.tolist(), T)) <= 1e-8

    @given(st.integers(0, 10_000), st.floats(0.01, 100))
    def test_scale_invariant_and_nonnegative(self, seed, c):
        rng = np.random.default_rng(seed)
        zp, zn = _t(rng.normal(size=(3, 4))), _t(rng.normal(size=(2, 4)))
        a = float(contrastive_loss(zp, zn, 0.2))
        b = float(contrastive_loss(c * zp, c * zn, 0.2))
        assert a >= 0 and b == pytest.approx(a, rel=1e-10)

    def test_gradient_check(self):
        rng = np.random.default_rng(1)
        for n, d in ((2, 3), (3, 5), (4, 8)):
            zp = _t(rng.normal(size=(n, d))).requires_grad_()
            zn = _t(rng.normal(size=(8 - n, d))).requires_grad_()
            assert torch.autograd.gradcheck(lambda a, b: contrastive_loss(a, b, 0.5), (zp, zn),
                                            eps=1e-5, atol=1e-9, rtol=1e-4)

    def test_loss_approaches_zero_when_perfectly_separated(self):
        far = float(contrastive_loss(_t([[1, 0]] * 2), _t([[-1, 0]] * 2), 0.05))
        assert 0 <= far < 1e-15


class TestSubsets:
    def test_balanced(self):
        parts = form_subsets(list(range(6)), 2, 0)
        assert sorted(len(p) for p in parts) == [3, 3]
        parts = form_subsets(list(range(5)), 2, 0)
        assert sorted(len(p) for p in parts) == [2, 3]

    def test_too_few_items(self):
        with pytest.raises(ValueError):
            form_subsets([1], 2, 0)

    @given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 1000))
    def test_partition_law(self, n, k, seed):
        if n < k:
            return
        parts = form_subsets(list(range(n)), k, seed)
        assert len(parts) == k
        assert sorted(x for p in parts for x in p) == list(range(n))
        sizes = [len(p) for p in parts]
        assert max(sizes) - min(sizes) <= 1

    def test_every_pair_cooccurs(self):
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(200):
            for p in form_subsets(list(range(6)), 2, rng):
                seen.update(itertools.combinations(sorted(p), 2))
        assert seen == set(itertools.combinations(range(6), 2))


class TestEncoding:
    def test_shapes(self, tiny_encoder):
        for H in (1, 7):
            assert encode_trajectory(tiny_encoder, make_traj(H, 3, 2)).shape == (16,)
        assert encode_subset(tiny_encoder, [make_traj(4, 3, 2)]).shape == (4,)

    def test_dimension_mismatch(self, tiny_encoder):
        with pytest.raises(ValueError):
            encode_trajectory(tiny_encoder, make_traj(4, 4, 2))

    def test_deterministic(self, tiny_encoder):
        t = make_traj(6, 3, 2)
        assert np.array_equal(encode_trajectory(tiny_encoder, t), encode_trajectory(tiny_encoder, t))

    def test_reversal_changes_u(self, tiny_encoder):
        from prefsim.data import Trajectory
        t = make_traj(6, 3, 2)
        rev = Trajectory(t.states[::-1].copy(), t.actions[::-1].copy())
        assert not np.allclose(encode_trajectory(tiny_encoder, t), encode_trajectory(tiny_encoder, rev))

    def test_empty_subset(self, tiny_encoder):
        with pytest.raises(ValueError):
            encode_subset(tiny_encoder, [])

    def test_exhaustive_permutation_invariance(self, tiny_encoder):
        us = [encode_trajectory(tiny_encoder, make_traj(5, 3, 2, seed=i)) for i in range(5)]
        for size in range(1, 6):
            base = encode_subset(tiny_encoder, us[:size])
            for perm in itertools.permutations(us[:size]):
                assert np.max(np.abs(encode_subset(tiny_encoder, list(perm)) - base)) <= 1e-6

    def test_disjoint_subsets_differ(self, tiny_encoder):
        us = [encode_trajectory(tiny_encoder, make_traj(5, 3, 2, seed=i)) for i in range(4)]
        assert not np.allclose(encode_subset(tiny_encoder, us[:2]), encode_subset(tiny_encoder, us[2:]))


class TestGroupLatent:
    def test_singleton_matches_subset(self, tiny_encoder):
        t = make_traj(5, 3, 2)
        g = infer_group_latent(tiny_encoder, [t], "preferred")
        np.testing.assert_allclose(g.z_star, encode_subset(tiny_encoder, [t]), atol=1e-12)
        assert g.source_set_size == 1

    def test_permutation_and_duplication(self, tiny_encoder):
        trajs = [make_traj(5, 3, 2, seed=i) for i in range(6)]
        base = infer_group_latent(tiny_encoder, trajs, "preferred").z_star
        perm = infer_group_latent(tiny_encoder, trajs[::-1], "preferred").z_star
        dup = infer_group_latent(tiny_encoder, trajs + trajs, "preferred").z_star
        assert np.max(np.abs(perm - base)) <= 1e-6
        # duplicating every member leaves attention weights per distinct key
        # unchanged; observed deviation is float rounding (~1e-15)
        assert np.max(np.abs(dup - base)) <= 1e-5

    def test_empty(self, tiny_encoder):
        with pytest.raises(ValueError):
            infer_group_latent(tiny_encoder, [], "preferred")

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            GroupLatent(np.array([np.nan, 1.0]), "preferred", 1)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(d_model=10, n_heads=4), dict(k_subsets=0),
                                    dict(temperature=0), dict(lr_init=1e-5, lr_min=1e-3)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EncoderConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            EncoderConfig.from_dict({"widht": 3})

    def test_paper_preset(self):
        cfg = EncoderConfig.paper()
        assert (cfg.d_model, cfg.z_dim, cfg.k_subsets, cfg.temperature, cfg.batch_size) == (256, 16, 2, 0.1, 256)


class TestTraining:
    def test_loss_decreases_and_latents_separate(self):
        sets = _toy_sets()
        cfg = EncoderConfig(epochs=60, **SMALL)
        init = train_encoder(EncoderConfig(epochs=0, **SMALL), sets)
        enc = train_encoder(cfg, sets)
        loss = enc.history["loss"]
        assert np.mean(loss[-10:]) < np.mean(loss[:10])

        def gap(e):
            zp, zn = infer_group_latents(e, sets)
            return float(zp.z_star @ zn.z_star / np.linalg.norm(zp.z_star) / np.linalg.norm(zn.z_star))

        assert gap(enc) < gap(init)

    def test_cosine_schedule(self):
        enc = train_encoder(EncoderConfig(epochs=20, **SMALL), _toy_sets(n=4))
        lr = enc.history["lr"]
        assert lr[0] == pytest.approx(3e-3)
        assert all(a >= b for a, b in zip(lr, lr[1:]))
        assert lr[-1] > 1e-4

    def test_bitwise_deterministic(self):
        sets = _toy_sets(n=4)
        a = train_encoder(EncoderConfig(epochs=10, **SMALL), sets)
        b = train_encoder(EncoderConfig(epochs=10, **SMALL), sets)
        assert a.history["loss"] == b.history["loss"]

    def test_subsequence_augment_runs(self):
        cfg = EncoderConfig(epochs=3, subsequence_augment=True, subsequence_lengths=(2, 4), **SMALL)
        assert len(train_encoder(cfg, _toy_sets(n=4)).history["loss"]) == 3

    def test_requires_k_members(self):
        sets = _toy_sets(n=1)
        with pytest.raises(ValueError):
            train_encoder(EncoderConfig(epochs=1, **SMALL), sets)

    def test_checkpoint_round_trip(self, tmp_path):
        sets = _toy_sets(n=4)
        enc = train_encoder(EncoderConfig(epochs=3, **SMALL), sets)
        back = load_encoder(save_encoder(enc, tmp_path / "enc.pt"))
        a = enc.trajectory_latents(sets.preferred)
        assert np.array_equal(a, back.trajectory_latents(sets.preferred))
        assert back.history == enc.history

    def test_bad_checkpoint(self, tmp_path):
        torch.save({"kind": "other"}, tmp_path / "x.pt")
        with pytest.raises(ValueError):
            load_encoder(tmp_path / "x.pt")

    def test_feature_dim_checked(self):
        enc = SetEncoder(5, EncoderConfig(**SMALL))
        with pytest.raises(ValueError):
            enc.encode_sequences(torch.zeros(1, 3, 4, dtype=torch.float64))
