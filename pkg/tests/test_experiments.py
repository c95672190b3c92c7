"""Corpus construction and the experiment drivers at miniature scale."""

import numpy as np
import pytest

from fanct.experiments import (
    Corpus,
    CorpusConfig,
    StageSpec,
    build_corpus,
    default_sb_config,
    direct_ablation,
    evaluate_split_bregman,
    evaluate_two_stage,
    hr_ablation,
    train_two_stage,
)
from fanct.geometry import with_image_grid
from fanct.projector import projector_norm_sq
from fanct.solvers import SplitBregmanConfig
from fanct.sugar import SugarConfig, TrainConfig, downsample_mean


TINY = CorpusConfig(n_phantoms=5, n_holdout=2, hr_n=32, le_factor=2,
                    n_views=8, noise_level=0.01, seed=0)


def tiny_spec(geom, init_seed=0):
    sugar = SugarConfig(n_blocks=1, transform="learned", adjoint_mode="fbp",
                        lambda1=0.03 * projector_norm_sq(geom),
                        n_scales=1, channels=(2,))
    train = TrainConfig(epochs=2, learning_rate=1e-3, seed=0, precision="single")
    return StageSpec(sugar=sugar, train=train, init_seed=init_seed)


@pytest.fixture(scope="module")
def corpus():
    return build_corpus(TINY)


@pytest.fixture(scope="module")
def trained(corpus):
    return train_two_stage(corpus,
                           le_spec=tiny_spec(corpus.geom_le, init_seed=0),
                           hr_spec=tiny_spec(corpus.geom_hr, init_seed=1))


class TestCorpusConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            CorpusConfig(n_phantoms=1)
        with pytest.raises(ValueError):
            CorpusConfig(n_phantoms=5, n_holdout=0)
        with pytest.raises(ValueError):
            CorpusConfig(n_phantoms=5, n_holdout=5)
        with pytest.raises(ValueError):
            CorpusConfig(hr_n=100, le_factor=3)
        with pytest.raises(ValueError):
            CorpusConfig(hr_n=16, le_factor=2)  # coarse grid below 16
        with pytest.raises(ValueError):
            CorpusConfig(noise_level=-0.01)

    def test_to_dict(self):
        d = TINY.to_dict()
        assert d["n_phantoms"] == 5 and d["hr_n"] == 32 and d["seed"] == 0


class TestBuildCorpus:
    def test_shapes_and_counts(self, corpus):
        assert len(corpus.truths_hr) == 5
        assert len(corpus.truths_le) == 5
        assert len(corpus.sinograms) == 5
        assert corpus.truths_hr[0].shape == (32, 32)
        assert corpus.truths_le[0].shape == (16, 16)
        assert corpus.sinograms[0].shape == corpus.geom_hr.sinogram_shape
        assert corpus.le_n == 16

    def test_split_is_partition(self, corpus):
        assert corpus.train_indices == [0, 1, 2]
        assert corpus.holdout_indices == [3, 4]

    def test_le_truth_is_block_mean(self, corpus):
        for hr, le in zip(corpus.truths_hr, corpus.truths_le):
            np.testing.assert_allclose(le, downsample_mean(hr, 2), atol=1e-12)

    def test_geometries_share_scanner(self, corpus):
        assert corpus.geom_le == with_image_grid(corpus.geom_hr, 16)
        assert corpus.geom_hr.n_views == 8

    def test_deterministic(self, corpus):
        again = build_corpus(TINY)
        for a, b in zip(corpus.sinograms, again.sinograms):
            np.testing.assert_array_equal(a, b)

    def test_seed_changes_phantoms(self, corpus):
        other = build_corpus(CorpusConfig(n_phantoms=5, n_holdout=2, hr_n=32,
                                          le_factor=2, n_views=8,
                                          noise_level=0.01, seed=1))
        assert not np.array_equal(other.truths_hr[0], corpus.truths_hr[0])

    def test_phantoms_distinct(self, corpus):
        assert not np.array_equal(corpus.truths_hr[0], corpus.truths_hr[1])


class TestTwoStage:
    def test_training_outputs(self, trained):
        assert trained["params_le"].config.n_blocks == 1
        assert trained["params_hr"].config.n_blocks == 1
        assert len(trained["history_le"]) == 2
        assert len(trained["history_hr"]) == 2
        assert all(np.isfinite(trained["history_le"]))

    def test_train_indices_must_be_training_split(self, corpus):
        with pytest.raises(ValueError):
            train_two_stage(corpus, le_spec=tiny_spec(corpus.geom_le),
                            hr_spec=tiny_spec(corpus.geom_hr),
                            train_indices=[0, 3])  # 3 is held out

    def test_evaluation_rows(self, corpus, trained):
        result = evaluate_two_stage(corpus, trained["params_le"],
                                    trained["params_hr"])
        rows = result["per_phantom"]
        assert [r["index"] for r in rows] == [3, 4]
        for r in rows:
            assert set(r) == {"index", "psnr_hr", "psnr_upsampled_le",
                              "mse_hr", "mse_upsampled_le"}
        assert result["mean_psnr_hr"] == pytest.approx(
            np.mean([r["psnr_hr"] for r in rows]))
        assert result["mean_psnr_upsampled_le"] == pytest.approx(
            np.mean([r["psnr_upsampled_le"] for r in rows]))

    def test_evaluation_subset(self, corpus, trained):
        result = evaluate_two_stage(corpus, trained["params_le"],
                                    trained["params_hr"], indices=[1])
        assert [r["index"] for r in result["per_phantom"]] == [1]


class TestBaselines:
    def test_split_bregman_evaluation(self, corpus):
        cfg = SplitBregmanConfig(lam=10.0,
                                 lambda1=0.03 * projector_norm_sq(corpus.geom_hr),
                                 n_iters=8, transform="gradient")
        result = evaluate_split_bregman(corpus, config=cfg)
        rows = result["per_phantom"]
        assert [r["index"] for r in rows] == [3, 4]
        assert result["mean_psnr"] == pytest.approx(
            np.mean([r["psnr"] for r in rows]))

    def test_default_sb_config(self, corpus):
        cfg = default_sb_config(corpus.geom_hr)
        assert cfg.lam == 60.0
        assert cfg.transform == "gradient"
        assert cfg.lambda1 == pytest.approx(
            0.03 * projector_norm_sq(corpus.geom_hr))


class TestAblations:
    def test_hr_ablation_consistency(self, corpus, trained):
        result = hr_ablation(corpus, trained["params_le"], trained["params_hr"])
        rows = result["per_phantom"]
        assert result["n_total"] == 2
        improved = [r["mse_hr"] < r["mse_upsampled_le"] for r in rows]
        assert [r["improved"] for r in rows] == improved
        assert result["n_improved"] == sum(improved)
        assert result["all_improved"] == all(improved)

    def test_direct_ablation_structure(self, corpus):
        result = direct_ablation(corpus, n_train=2, le_epochs=1, hr_epochs=1)
        assert result["n_train"] == 2
        assert result["total_epochs"] == 2
        assert result["direct"]["n_blocks"] == 10
        assert len(result["direct"]["history"]) == 2
        assert result["staged_minus_direct_db"] == pytest.approx(
            result["staged"]["mean_psnr"] - result["direct"]["mean_psnr"])

    def test_direct_ablation_bounds_n_train(self, corpus):
        with pytest.raises(ValueError):
            direct_ablation(corpus, n_train=10)
