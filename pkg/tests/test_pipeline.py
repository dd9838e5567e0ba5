import json

import numpy as np
import pytest

from persimorph.augment import AugmentConfig
from persimorph.config import EvalConfig, RunConfig, merge_overrides, run_config_from_dict
from persimorph.contrastive import TrainConfig
from persimorph.encoders import DualEncoder
from persimorph.errors import ConfigError
from persimorph.parallel import default_workers, parallel_map
from persimorph.pimage import ImageConfig
from persimorph.pipeline import (
    Preprocessing,
    batch_schedule,
    dims_for,
    embed,
    evaluate,
    fit_preprocessing,
    make_batch,
    make_sample,
    stratified_split,
    train,
)
from persimorph.synthetic import generate_synthetic_dataset

IMG = ImageConfig(height=32, width=32, sigma=4.0)


@pytest.fixture(scope="module")
def samples():
    return [make_sample(t, label) for t, label in generate_synthetic_dataset(12, seed=1)]


def _square(x):
    return x * x


class TestSplit:
    def test_stratified(self):
        labels = [0] * 10 + [1] * 20
        tr, te = stratified_split(labels, 0.3, seed=0)
        assert len(te) == 9 and len(tr) == 21
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(30))
        assert np.sum(np.asarray(labels)[te] == 0) == 3

    def test_seeded(self):
        labels = [0, 1] * 20
        a = stratified_split(labels, 0.3, seed=4)
        b = stratified_split(labels, 0.3, seed=4)
        c = stratified_split(labels, 0.3, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not np.array_equal(a[1], c[1])

    def test_batch_schedule(self):
        steps = list(batch_schedule(10, 4, 5, seed=0))
        assert [s for s, _ in steps] == [0, 1, 2, 3, 4]
        assert all(len(idx) == 4 for _, idx in steps)
        assert len(set(steps[0][1]) | set(steps[1][1])) == 8
        with pytest.raises(ConfigError):
            list(batch_schedule(3, 4, 1, seed=0))


class TestPipeline:
    def test_preprocessing_round_trip(self, samples):
        prep = fit_preprocessing(samples[:8], IMG)
        back = Preprocessing.from_dict(json.loads(json.dumps(prep.to_dict())))
        assert back.bounds == prep.bounds
        np.testing.assert_array_equal(back.channel_std, prep.channel_std)
        np.testing.assert_array_equal(back.zscore.mean, prep.zscore.mean)

    def test_batch_shapes(self, samples):
        prep = fit_preprocessing(samples, IMG)
        b = make_batch(samples[:5], prep)
        assert b.images.shape == (5, 32, 32, 3)
        assert b.trees.size == 5
        aug = make_batch(samples[:5], prep, AugmentConfig(apply_probability=1.0), view=1)
        assert not np.array_equal(aug.images, b.images)

    def test_train_and_evaluate(self, samples):
        prep = fit_preprocessing(samples, IMG)
        model = DualEncoder.init(0, dims_for(IMG, hidden_dim=8, image_dim=8, proj_hidden=8, proj_out=4,
                                             patch_size=8))
        seen = []
        res = train(model, samples, prep, TrainConfig(steps=6, batch_size=8, lr=5e-3),
                    AugmentConfig(), on_step=lambda r, m: seen.append(r["step"]))
        assert seen == list(range(6))
        assert len(res.history) == 6
        assert np.isfinite(res.final_full_loss)
        assert "preprocessing" in model.extra
        Et, Ev = embed(model, samples, prep)
        assert Et.shape == (24, 8) and Ev.shape == (24, 8)
        Zt, Zv = embed(model, samples, prep, space="projection")
        assert Zt.shape == (24, 4)
        tr, te = stratified_split([s.label for s in samples], 0.25, 0)
        report = evaluate(model, samples, tr, te, prep, ks=(20, 5), n_perm=20)
        assert set(report["knn"]) == {"20", "5"}
        assert report["knn"]["20"]["k_used"] == 18
        c = report["complementarity"]
        assert c["complementarity_score"] + c["both_correct_pct"] + c["both_wrong_pct"] == 100.0
        assert set(report["retrieval"]) == {"tree_to_image", "image_to_tree"}
        with pytest.raises(ConfigError):
            embed(model, samples, prep, space="latent")


class TestRunConfig:
    def test_seed_propagates(self):
        cfg = run_config_from_dict({"seed": 9})
        assert cfg.augment.seed == 9 and cfg.train.seed == 9

    def test_overrides_win(self):
        base = {"seed": 1, "train": {"lr": 0.1, "steps": 3}}
        merged = merge_overrides(base, {"train.lr": 0.5, "train.batch_size": None, "eval.k": [5]})
        cfg = run_config_from_dict(merged)
        assert cfg.train.lr == 0.5 and cfg.train.steps == 3
        assert cfg.train.batch_size == TrainConfig().batch_size
        assert cfg.eval.k == (5,)
        assert base["train"]["lr"] == 0.1

    @pytest.mark.parametrize("d", [{"bogus": 1}, {"train": {"bogus": 1}}, {"model": {"depth": 3}},
                                   {"test_fraction": 1.5}, {"eval": {"k": [0]}}, {"eval": {"fusion": "max"}}])
    def test_invalid(self, d):
        with pytest.raises(ConfigError):
            run_config_from_dict(d)

    def test_round_trip_and_hash(self):
        cfg = run_config_from_dict({"seed": 3, "image": {"channels": "RG"}, "model": {"hidden_dim": 8}})
        again = run_config_from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again.to_dict() == cfg.to_dict()
        assert again.hash() == cfg.hash()
        assert cfg.model_dims().image_channels == 2
        assert cfg.hash() != RunConfig().hash()

    def test_missing_input_path(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig(input=str(tmp_path / "nope")).validate_paths()

    def test_eval_defaults(self):
        e = EvalConfig()
        assert e.k == (20,) and e.fusion == "concat" and e.metric == "cosine"


class TestParallel:
    def test_order_preserved(self):
        assert parallel_map(_square, range(20), workers=3) == [i * i for i in range(20)]

    def test_env_workers(self, monkeypatch):
        monkeypatch.setenv("PERSIMORPH_THREADS", "4")
        assert default_workers() == 4
        monkeypatch.setenv("PERSIMORPH_THREADS", "lots")
        assert default_workers() == 1
