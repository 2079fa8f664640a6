from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from segimgnet.data.sampling import FoldPlan, make_folds, rose_oversample
from segimgnet.data.synth import DISEASED, LESION_CHANNEL, SynthConfig, generate_dataset, stack
from segimgnet.data.transforms import (AugmentParams, MAX_MAGNIFICATION_CHANGE, apply_augment, augment,
                                       draw_augment, resize, resize_mask)
from segimgnet.errors import ConfigurationError, DataError
from segimgnet.metrics import auc


@pytest.fixture(scope="module")
def balanced():
    return generate_dataset(SynthConfig(seed=3, n_per_class=(100, 100)))


class TestSynth:
    def test_deterministic(self):
        cfg = SynthConfig(seed=11, n_per_class=(4, 3))
        assert generate_dataset(cfg) == generate_dataset(cfg)

    def test_seed_matters(self):
        a = generate_dataset(SynthConfig(seed=1, n_per_class=(2, 2)))
        b = generate_dataset(SynthConfig(seed=2, n_per_class=(2, 2)))
        assert not np.array_equal(a[0].image, b[0].image)

    def test_parallel_matches_serial(self):
        cfg = SynthConfig(seed=5, n_per_class=(5, 4))
        assert generate_dataset(cfg, workers=2) == generate_dataset(cfg)

    def test_counts_ranges_and_masks(self, balanced):
        images, labels, masks = stack(balanced)
        assert images.shape == (200, 3, 64, 64)
        assert Counter(labels.tolist()) == {0: 100, 1: 100}
        assert images.min() >= 0 and images.max() <= 1
        assert set(np.unique(masks)) <= {0, 1}
        assert masks.mean(axis=(1, 2)).min() >= 0.01
        assert len({s.id for s in balanced}) == 200

    def test_lesion_channel_probe(self, balanced):
        images, labels, _ = stack(balanced)
        feat = images[:, LESION_CHANNEL].mean(axis=(1, 2)).astype(np.float64)
        z = (feat - feat.mean()) / feat.std()

        def nll(theta):
            t = theta[0] * z + theta[1]
            return np.sum(np.logaddexp(0, t) - labels * t)

        theta = minimize(nll, np.zeros(2)).x
        assert auc(theta[0] * z + theta[1], labels == DISEASED) >= 0.8

    def test_larger_images_same_scene(self):
        small = generate_dataset(SynthConfig(seed=2, n_per_class=(1, 1), image_size=64))
        big = generate_dataset(SynthConfig(seed=2, n_per_class=(1, 1), image_size=128))
        for s, b in zip(small, big):
            assert b.image.shape == (3, 128, 128)
            assert np.abs(resize(b.image, 64) - s.image).mean() < 0.05

    def test_imbalance_helper(self):
        cfg = SynthConfig.with_imbalance(1000, 6)
        assert sum(cfg.n_per_class) == 1000 and cfg.n_per_class[1] == 143

    @pytest.mark.parametrize("kw", [{"n_per_class": (0, 3)}, {"image_size": 4}, {"lesion_count": (4, 2)}])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigurationError):
            SynthConfig(**kw)


def smooth_image(n=64):
    y, x = np.mgrid[0:n, 0:n] / (n - 1)
    return np.stack([0.2 + 0.6 * x, 0.5 + 0.3 * np.sin(2 * y), x * y]).astype(np.float32)


class TestResize:
    def test_same_size_is_identity(self, rng):
        img = rng.random((3, 20, 20)).astype(np.float32)
        np.testing.assert_array_equal(resize(img, 20), img)

    @pytest.mark.parametrize("target", [8, 33, (40, 24), 128])
    def test_constant(self, target):
        out = resize(np.full((3, 64, 64), 0.37, np.float32), target)
        h, w = (target, target) if np.isscalar(target) else target
        assert out.shape == (3, h, w)
        np.testing.assert_allclose(out, 0.37, atol=1e-6)

    def test_down_up_smooth(self):
        img = smooth_image()
        assert np.abs(resize(resize(img, 32), 64) - img).max() < 0.05

    def test_range(self, rng):
        out = resize(rng.random((3, 17, 23)).astype(np.float32), 40)
        assert out.min() >= 0 and out.max() <= 1

    def test_too_small(self):
        with pytest.raises(ConfigurationError):
            resize(np.zeros((3, 16, 16)), 4)

    def test_mask_stays_binary(self, rng):
        mask = (rng.random((32, 32)) < 0.3).astype(np.uint8)
        assert set(np.unique(resize_mask(mask, 48))) <= {0, 1}


class TestAugment:
    @pytest.mark.parametrize("fh,fv", [(True, False), (False, True), (True, True)])
    def test_flip_involution(self, balanced, fh, fv):
        s = balanced[0]
        p = AugmentParams(flip_h=fh, flip_v=fv)
        once = apply_augment(s.image, s.mask, p)
        twice = apply_augment(*once, p)
        np.testing.assert_array_equal(twice[0], s.image)
        np.testing.assert_array_equal(twice[1], s.mask)
        assert not np.array_equal(once[0], s.image)

    def test_flip_matches_numpy(self, balanced):
        s = balanced[1]
        out, m = apply_augment(s.image, s.mask, AugmentParams(flip_h=True))
        np.testing.assert_array_equal(out, s.image[..., ::-1])
        np.testing.assert_array_equal(m, s.mask[:, ::-1])

    def test_identity(self, balanced):
        s = balanced[2]
        out, m = apply_augment(s.image, s.mask, AugmentParams())
        np.testing.assert_array_equal(out, s.image)
        np.testing.assert_array_equal(m, s.mask)

    def test_draw_ranges(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            p = draw_augment(rng)
            assert 0.9 <= p.area <= 1.0 and 0.9 <= p.scale <= 1.1
            assert abs(p.magnification - 1) <= MAX_MAGNIFICATION_CHANGE + 1e-12

    def test_mask_count_property(self, balanced):
        rng = np.random.default_rng(42)
        worst = 0.0
        for i in range(1000):
            s = balanced[i % len(balanced)]
            out = augment(s, rng)
            assert out.image.shape == s.image.shape and out.label == s.label and out.id == s.id
            assert out.image.min() >= 0 and out.image.max() <= 1
            assert set(np.unique(out.mask)) <= {0, 1}
            worst = max(worst, abs(int(out.mask.sum()) / int(s.mask.sum()) - 1))
        assert worst < 0.25

    def test_reproducible_stream(self, balanced):
        a = [augment(balanced[0], r) for r in [np.random.default_rng(9)] * 3]
        b = [augment(balanced[0], r) for r in [np.random.default_rng(9)] * 3]
        assert a == b


class TestRose:
    def test_paper_counts(self):
        labels = np.array([1] * 990 + [0] * 6821)
        ids = np.arange(labels.size)
        out_ids, out_labels = rose_oversample(ids, labels, np.random.default_rng(0))
        assert Counter(out_labels.tolist()) == {0: 6821, 1: 6821}
        np.testing.assert_array_equal(out_ids[:labels.size], ids)

    def test_balanced_unchanged(self):
        ids = np.array(["a", "b", "c", "d"])
        out_ids, out_labels = rose_oversample(ids, [0, 1, 1, 0], np.random.default_rng(0))
        assert Counter(out_ids.tolist()) == Counter(ids.tolist())

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 2), min_size=1, max_size=80), st.integers(0, 2**32 - 1))
    def test_balance_and_closure(self, labels, seed):
        labels = np.array(labels)
        if len(set(labels.tolist())) < labels.max() + 1:
            with pytest.raises(DataError):
                rose_oversample(np.arange(labels.size), labels, np.random.default_rng(seed))
            return
        ids = np.array([f"s{i}" for i in range(labels.size)])
        out_ids, out_labels = rose_oversample(ids, labels, np.random.default_rng(seed))
        counts = Counter(out_labels.tolist())
        assert len(set(counts.values())) == 1
        assert counts[0] == max(Counter(labels.tolist()).values())
        assert set(out_ids.tolist()) == set(ids.tolist())
        label_of = dict(zip(ids, labels))
        assert all(label_of[i] == l for i, l in zip(out_ids, out_labels))

    def test_empty_class(self):
        with pytest.raises(DataError, match="class 1"):
            rose_oversample(["a", "b"], [0, 0], np.random.default_rng(0), num_classes=2)


def check_plan(plan: FoldPlan, ids, labels, k):
    label_of = dict(zip(ids, labels))
    classes = sorted(set(labels))
    total = Counter(labels)
    tests = [set(f.test) for f in plan.folds]
    assert set().union(*tests) == set(ids)
    assert sum(len(t) for t in tests) == len(ids)
    for f in plan.folds:
        parts = [set(f.train), set(f.val), set(f.test)]
        assert sum(len(p) for p in parts) == len(ids) and set().union(*parts) == set(ids)
        for c in classes:
            n_test = sum(label_of[i] == c for i in f.test)
            n_val = sum(label_of[i] == c for i in f.val)
            n_train = sum(label_of[i] == c for i in f.train)
            assert abs(n_test - total[c] / k) <= 1
            assert abs(n_val - (n_val + n_train) / 4) <= 1


class TestFolds:
    def test_partition_100(self):
        ids = [f"x{i}" for i in range(100)]
        labels = [i % 4 == 0 for i in range(100)]
        labels = [int(l) for l in labels]
        plan = make_folds(ids, labels, k=5, seed=0)
        assert [len(f.test) for f in plan.folds] == [20] * 5
        check_plan(plan, ids, labels, 5)
        for f in plan.folds:
            for part in (f.train, f.val, f.test):
                frac = sum(labels[int(i[1:])] for i in part)
                assert abs(frac - len(part) / 4) <= 1

    @settings(max_examples=40, deadline=None)
    @given(st.integers(5, 40), st.integers(5, 120), st.integers(2, 6), st.integers(0, 1000))
    def test_partition_property(self, n1, n0, k, seed):
        labels = [1] * n1 + [0] * n0
        ids = [f"id{i}" for i in range(len(labels))]
        if min(n0, n1) < k:
            with pytest.raises(DataError):
                make_folds(ids, labels, k=k, seed=seed)
            return
        plan = make_folds(ids, labels, k=k, seed=seed)
        sizes = [len(f.test) for f in plan.folds]
        assert max(sizes) - min(sizes) <= 1
        check_plan(plan, ids, labels, k)

    def test_deterministic_and_seeded(self):
        ids = [str(i) for i in range(60)]
        labels = [i % 3 == 0 for i in range(60)]
        assert make_folds(ids, labels, seed=4) == make_folds(ids, labels, seed=4)
        assert make_folds(ids, labels, seed=4) != make_folds(ids, labels, seed=5)

    def test_round_trip(self):
        plan = make_folds([str(i) for i in range(20)], [i % 2 for i in range(20)], k=4, seed=1)
        assert FoldPlan.from_dict(plan.to_dict()) == plan

    def test_small_class(self):
        with pytest.raises(DataError, match="fewer than k"):
            make_folds([str(i) for i in range(20)], [0] * 17 + [1] * 3, k=5)

    @pytest.mark.parametrize("k", [0, 1])
    def test_bad_k(self, k):
        with pytest.raises(ConfigurationError):
            make_folds(["a", "b"], [0, 1], k=k)

    def test_duplicate_ids(self):
        with pytest.raises(DataError):
            make_folds(["a"] * 10, [0, 1] * 5, k=2)
