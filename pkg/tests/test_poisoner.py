import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from milab import poisoner as po
from milab.datagen import Dataset, gen_gaussian_mixture


class ReplicaCountingModel:
    """Stub shadow model whose confidence on a challenge point is a pure
    function of how many poisoned replicas of it the training set contained."""

    def __init__(self, train_set: Dataset, schedules):
        # schedules: {feature-bytes: (true_label, poisoned_label, mu_fn)}
        self.train_set = train_set
        self.schedules = schedules

    def predict_proba(self, x):
        x = np.asarray(x, dtype=np.float64)
        key = x.tobytes()
        num_classes = self.train_set.num_classes
        probs = np.full(num_classes, 1.0 / num_classes)
        if key in self.schedules:
            y, y_p, mu_fn = self.schedules[key]
            matches = (self.train_set.features == x).all(axis=1)
            k = int(np.sum(matches & (self.train_set.labels == y_p)))
            conf = mu_fn(k)
            probs = np.full(num_classes, (1.0 - conf) / (num_classes - 1))
            probs[y] = conf
        return probs


class StubTrainer:
    def __init__(self, schedules):
        self.schedules = schedules
        self.models_trained = 0

    def __call__(self, train_set, seed):
        self.models_trained += 1
        return ReplicaCountingModel(train_set, self.schedules)


def base_dataset(n=20, dim=3, num_classes=4, seed=0):
    gen = np.random.default_rng(seed)
    return Dataset(gen.normal(0, 1, (n, dim)), gen.integers(0, num_classes, n),
                   num_classes)


def schedule_for(x, y, y_p, mu_fn):
    return {np.asarray(x, dtype=np.float64).tobytes(): (y, y_p, mu_fn)}


class TestAdaptPoisonSingle:
    def setup_method(self):
        self.d_adv = base_dataset()
        self.x = np.array([50.0, 50.0, 50.0])
        self.y, self.y_p = 1, 2

    def run(self, mu_fn, t_p=0.15, k_max=6, m=4):
        trainer = StubTrainer(schedule_for(self.x, self.y, self.y_p, mu_fn))
        cfg = po.PoisonConfig(t_p=t_p, m=m, k_max=k_max)
        k = po.adapt_poison_single((self.x, self.y), self.y_p, self.d_adv,
                                   cfg, trainer)
        return k, trainer.models_trained

    def test_linear_decay_stops_at_three(self):
        # mu(k) = 0.9 - 0.3k crosses 0.15 at k=3 (mu(2)=0.3 > 0.15 >= mu(3)=0).
        k, trained = self.run(lambda k: max(0.0, 0.9 - 0.3 * k))
        assert k == 3
        assert trained == 4 * 4  # m models per iteration, k = 0..3

    def test_threshold_one_never_poisons(self):
        k, trained = self.run(lambda k: 0.9, t_p=1.0)
        assert k == 0
        assert trained == 4

    def test_constant_confidence_exhausts_to_k_max(self):
        k, trained = self.run(lambda k: 0.5, k_max=6)
        assert k == 6
        assert trained == 7 * 4

    def test_challenge_in_attacker_data_rejected(self):
        ds = self.d_adv
        x, y = ds.features[0], int(ds.labels[0])
        trainer = StubTrainer({})
        with pytest.raises(ValueError):
            po.adapt_poison_single((x, y), (y + 1) % 4, ds, po.PoisonConfig(), trainer)

    def test_same_label_rejected(self):
        trainer = StubTrainer({})
        with pytest.raises(ValueError):
            po.adapt_poison_single((self.x, self.y), self.y, self.d_adv,
                                   po.PoisonConfig(), trainer)

    @given(st.lists(st.floats(0.0, 1.0), min_size=7, max_size=7),
           st.floats(0.05, 0.95))
    @settings(max_examples=60, deadline=None)
    def test_first_crossing_semantics(self, mus, t_p):
        # Returned k is the first index with mu <= t_p, else k_max: the
        # minimal stopping point for any confidence profile.
        k, _ = self.run(lambda k: mus[k], t_p=t_p, k_max=6, m=2)
        expected = next((i for i, v in enumerate(mus) if v <= t_p), 6)
        assert k == expected


class TestAdaptPoisonMulti:
    def make_challenges(self, d_adv, indices, shift=1):
        return po.make_challenge_set(d_adv, indices, label_shift=shift)

    def multi_schedules(self, d_adv, challenges, mu_fns):
        schedules = {}
        for i in range(len(challenges)):
            schedules[challenges.features[i].tobytes()] = (
                int(challenges.labels[i]), int(challenges.poisoned_labels[i]),
                mu_fns[i])
        return schedules

    def test_single_point_trace_and_cost(self):
        d_adv = base_dataset(n=12)
        challenges = self.make_challenges(d_adv, [4])
        mu = lambda k: max(0.0, 0.9 - 0.3 * k)
        trainer = StubTrainer(self.multi_schedules(d_adv, challenges, [mu]))
        cfg = po.PoisonConfig(t_p=0.15, m=2, k_max=6)
        plan = po.adapt_poison_multi(challenges, d_adv, cfg, trainer)
        assert plan.replica_counts.tolist() == [3]
        assert plan.iterations_run == 3
        assert plan.models_trained == 2 * 2 * 4  # 2m per iteration, k = 0..3
        assert trainer.models_trained == plan.models_trained

    def test_agrees_with_single_point_procedure(self):
        d_adv = base_dataset(n=16, seed=3)
        challenges = self.make_challenges(d_adv, [7])
        for mu in (lambda k: 0.8 - 0.25 * k, lambda k: 0.1, lambda k: 0.6):
            trainer = StubTrainer(self.multi_schedules(d_adv, challenges, [mu]))
            cfg = po.PoisonConfig(t_p=0.2, m=2, k_max=5)
            plan = po.adapt_poison_multi(challenges, d_adv, cfg, trainer)

            x = challenges.features[0]
            outside = Dataset(np.delete(d_adv.features, 7, axis=0),
                              np.delete(d_adv.labels, 7), d_adv.num_classes)
            single_trainer = StubTrainer(
                self.multi_schedules(d_adv, challenges, [mu]))
            k_single = po.adapt_poison_single(
                (x, int(challenges.labels[0])), int(challenges.poisoned_labels[0]),
                outside, cfg, single_trainer)
            assert plan.replica_counts[0] == k_single

    def test_immediate_freeze_trains_one_round(self):
        d_adv = base_dataset(n=10, seed=1)
        challenges = self.make_challenges(d_adv, [0, 5])
        trainer = StubTrainer(self.multi_schedules(
            d_adv, challenges, [lambda k: 0.9, lambda k: 0.9]))
        cfg = po.PoisonConfig(t_p=1.0, m=3, k_max=6)
        plan = po.adapt_poison_multi(challenges, d_adv, cfg, trainer)
        assert plan.replica_counts.tolist() == [0, 0]
        assert plan.iterations_run == 0
        assert plan.models_trained == 2 * 3

    def test_full_exhaustion_cost_formula(self):
        d_adv = base_dataset(n=24, seed=2)
        challenges = self.make_challenges(d_adv, [1, 8, 15])
        mu_fns = [lambda k: 0.9] * 3
        trainer = StubTrainer(self.multi_schedules(d_adv, challenges, mu_fns))
        cfg = po.PoisonConfig(t_p=0.15, m=8, k_max=6)
        plan = po.adapt_poison_multi(challenges, d_adv, cfg, trainer)
        assert plan.models_trained == 2 * (6 + 1) * 8  # 112
        assert plan.replica_counts.tolist() == [6, 6, 6]
        assert plan.iterations_run == 6

    def test_frozen_point_keeps_count_while_others_advance(self):
        d_adv = base_dataset(n=18, seed=5)
        challenges = self.make_challenges(d_adv, [2, 9])
        mu_fns = [lambda k: 0.05,                  # freezes immediately at k=0
                  lambda k: max(0.0, 0.8 - 0.2 * k)]  # freezes at k=4
        trainer = StubTrainer(self.multi_schedules(d_adv, challenges, mu_fns))
        cfg = po.PoisonConfig(t_p=0.1, m=2, k_max=6)
        plan = po.adapt_poison_multi(challenges, d_adv, cfg, trainer)
        assert plan.replica_counts.tolist() == [0, 4]
        assert plan.iterations_run == 4

    def test_split_plan_balance_and_model_tags(self):
        d_adv = base_dataset(n=30, seed=6)
        challenges = self.make_challenges(d_adv, [3, 20])
        trainer = StubTrainer(self.multi_schedules(
            d_adv, challenges, [lambda k: 0.9, lambda k: 0.9]))
        cfg = po.PoisonConfig(t_p=1.0, m=4, k_max=2)
        plan = po.adapt_poison_multi(challenges, d_adv, cfg, trainer)
        for idx in (3, 20):
            assert plan.split.inclusion[:, idx].sum() == 4
        iter0 = plan.iteration_models(0)
        assert len(iter0) == 8
        assert [t.subset_row for t in iter0] == list(range(8))

    def test_iteration_zero_models_carry_no_poison(self):
        d_adv = base_dataset(n=10, seed=7)
        challenges = self.make_challenges(d_adv, [4])
        trainer = StubTrainer(self.multi_schedules(d_adv, challenges,
                                                   [lambda k: 0.9]))
        cfg = po.PoisonConfig(t_p=0.15, m=2, k_max=2)
        plan = po.adapt_poison_multi(challenges, d_adv, cfg, trainer)
        y_p = int(challenges.poisoned_labels[0])
        for tagged in plan.iteration_models(0):
            ts = tagged.model.train_set
            matches = (ts.features == challenges.features[0]).all(axis=1)
            assert int(np.sum(matches & (ts.labels == y_p))) == 0


class TestBuildPoisonedTrainingSet:
    def test_zero_counts_is_identity(self):
        ds = base_dataset(n=8)
        challenges = po.make_challenge_set(ds, [1, 3])
        plan = po.static_plan(0, 2)
        out = po.build_poisoned_training_set(ds, plan, challenges)
        assert np.array_equal(out.features, ds.features)
        assert np.array_equal(out.labels, ds.labels)

    def test_single_point_appends_replicas(self):
        ds = base_dataset(n=8)
        challenges = po.make_challenge_set(ds, [2])
        plan = po.PoisonPlan(np.array([3]), 0)
        out = po.build_poisoned_training_set(ds, plan, challenges)
        assert len(out) == 11
        y_p = challenges.poisoned_labels[0]
        assert np.all(out.labels[8:] == y_p)
        assert np.all(out.features[8:] == challenges.features[0])

    def test_replicas_grouped_in_ascending_index_order(self):
        ds = base_dataset(n=6)
        challenges = po.make_challenge_set(ds, [0, 4])
        plan = po.PoisonPlan(np.array([1, 2]), 0)
        out = po.build_poisoned_training_set(ds, plan, challenges)
        assert len(out) == 9
        np.testing.assert_array_equal(out.features[6], challenges.features[0])
        np.testing.assert_array_equal(out.features[7], challenges.features[1])
        np.testing.assert_array_equal(out.features[8], challenges.features[1])

    def test_misaligned_lengths_rejected(self):
        ds = base_dataset(n=6)
        challenges = po.make_challenge_set(ds, [0, 4])
        with pytest.raises(ValueError):
            po.build_poisoned_training_set(ds, po.static_plan(1, 3), challenges)


class TestChallengeSet:
    def test_poisoned_label_must_differ(self):
        with pytest.raises(ValueError):
            po.ChallengeSet(np.array([0]), np.zeros((1, 2)), np.array([1]),
                            np.array([1]))

    def test_default_label_shift(self):
        ds = base_dataset(n=10, num_classes=4)
        cs = po.make_challenge_set(ds, [0, 1, 2])
        assert np.array_equal(cs.poisoned_labels, (cs.labels + 1) % 4)

    def test_full_cycle_shift_rejected(self):
        ds = base_dataset(n=10, num_classes=4)
        with pytest.raises(ValueError):
            po.make_challenge_set(ds, [0], label_shift=4)


class TestMonotoneTrendOnRealTrainer:
    def test_mean_out_confidence_decreases_with_replicas(self):
        # Statistical trend: adding poisoned replicas drags the OUT models'
        # confidence on the true label down, on average over seeds.
        from milab import nncore as nn

        means = {k: [] for k in (0, 2, 4)}
        for seed in range(10):
            ds = gen_gaussian_mixture(4, 6, 15, class_sep=2.0, seed=100 + seed)
            x = ds.features[0] + 0.1
            y = 0
            for k in means:
                feats = np.concatenate([ds.features, np.tile(x, (k, 1))])
                labels = np.concatenate([ds.labels, np.full(k, 1)])
                train_set = Dataset(feats, labels, 4)
                cfg = nn.TrainConfig(epochs=30, learning_rate=0.1,
                                     batch_size=16, seed=seed)
                model = nn.train(train_set, cfg, (16,))
                means[k].append(model.predict_proba(x)[y])
        avg = {k: float(np.mean(v)) for k, v in means.items()}
        assert avg[2] <= avg[0] + 0.02
        assert avg[4] <= avg[2] + 0.02
        assert avg[4] < avg[0]
