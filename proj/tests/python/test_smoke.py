import math
import random

import pytest

import kdar


def write_clustered(dir_path, users=60, items=45, clusters=3, seed=7):
    rng = random.Random(seed)
    per = items // clusters
    inter = dir_path / "inter.txt"
    kg = dir_path / "kg.txt"
    with inter.open("w") as f:
        for u in range(users):
            c = u % clusters
            chosen = set()
            while len(chosen) < 10:
                i = c * per + rng.randrange(per) if rng.random() < 0.9 else rng.randrange(items)
                chosen.add(i)
            for i in sorted(chosen):
                f.write(f"user{u}\titem{i}\n")
    with kg.open("w") as f:
        for i in range(items):
            f.write(f"item{i}\tgenre\tg{i // per}\n")
            f.write(f"item{i}\ttag\tt{rng.randrange(10)}\n")
    return inter, kg


@pytest.fixture
def config(tmp_path):
    inter, kg = write_clustered(tmp_path)
    c = kdar.Config()
    c.data.interactions = inter
    c.data.kg = kg
    c.data.dataset = tmp_path / "data"
    c.model.dim = 8
    c.model.layers = 2
    c.model.learning_rate = 0.01
    c.train.epochs = 4
    c.train.eval_every = 2
    c.train.batch_size = 128
    c.train.cutoffs = [5, 20]
    return c


def brute_ndcg(ranking, test, k):
    test = set(test)
    dcg = sum(1 / math.log2(p + 2) for p, i in enumerate(ranking[:k]) if i in test)
    idcg = sum(1 / math.log2(p + 2) for p in range(min(k, len(test))))
    return dcg / idcg


def test_metrics_match_direct_computation():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randrange(8, 40)
        scores = [rng.randrange(6) / 3 for _ in range(n)]
        items = list(range(n))
        rng.shuffle(items)
        exclude = sorted(items[:2])
        test = sorted(items[2:6])
        ranking = kdar.rank_all(scores, exclude)
        expected = sorted((i for i in range(n) if i not in exclude), key=lambda i: (-scores[i], i))
        assert ranking == expected
        for k in (1, 5, 20):
            hits = len(set(ranking[:k]) & set(test))
            assert kdar.recall_at_k(ranking, test, k) == pytest.approx(hits / len(test), abs=0)
            assert kdar.ndcg_at_k(ranking, test, k) == pytest.approx(brute_ndcg(ranking, test, k))
        negatives = [i for i in ranking if i not in test]
        pairs = [(p, q) for p in test for q in negatives]
        wins = sum(1.0 if scores[p] > scores[q] else 0.5 if scores[p] == scores[q] else 0.0 for p, q in pairs)
        assert kdar.auc(scores, exclude, test) == pytest.approx(wins / len(pairs), abs=1e-12)
    assert kdar.auc([1.0, 2.0], [], [0, 1]) is None


def test_config_round_trip_and_rejection():
    c = kdar.Config()
    c.model.temperature = 0.4
    c.ablation.no_cg = True
    back = kdar.Config.from_ini(c.to_ini())
    assert back.model.temperature == 0.4
    assert back.ablation.no_cg
    with pytest.raises(kdar.ConfigError, match="line 2"):
        kdar.Config.from_ini("[model]\nwidth = 3\n")
    c.model.lambda_cl = -1
    with pytest.raises(kdar.ConfigError, match="lambda_cl"):
        c.validate()


def test_prepare_train_evaluate(config, tmp_path):
    stats = kdar.prepare(config, config.data.dataset)
    assert stats.users == 60
    assert stats.items == 45
    assert stats.relations == 2
    assert stats.train_interactions + stats.test_interactions == stats.interactions

    data = kdar.load_dataset(config.data.dataset)
    assert len(data.train_pairs) == stats.train_interactions
    assert len(data.triplets) == stats.triplets

    outcome = kdar.train(config, tmp_path / "run")
    assert [row.epoch for row in outcome.fit.history] == [2, 4]
    assert outcome.report.cutoffs == [5, 20]
    assert 0.0 <= outcome.report.recall_at(20) <= 1.0

    ev = kdar.evaluate(config, tmp_path / "run" / "checkpoint.bin", [5, 20], "cold-start")
    assert ev.report.as_dict() == outcome.report.as_dict()
    assert len(ev.groups.groups) == 3


def test_gradient_check(config):
    kdar.prepare(config, config.data.dataset)
    hyper = kdar.Hyperparameters()
    hyper.dim = 4
    hyper.layers = 2
    report = kdar.gradient_check(config.data.dataset, hyper, samples=64, seed=1)
    assert report.checked == 64
    assert report.passed()


def test_errors_map_to_python_exceptions(config, tmp_path):
    config.data.interactions = tmp_path / "absent.txt"
    with pytest.raises(kdar.DataError):
        kdar.prepare(config, tmp_path / "out")
    assert issubclass(kdar.CheckpointError, kdar.DataError)
    assert issubclass(kdar.ConfigError, kdar.KdarError)
