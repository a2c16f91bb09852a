import numpy as np
import pytest

from cratercount.counting_model import CountingModelParams
from cratercount.synth import (MIN_FEATURE_DIAMETER, Feature, SceneGeometry, SceneSpec,
                               feature_sprite, random_scene, render_scene, terrain_texture)
from cratercount.templates import (APPEARANCE, DP, build_appearance_template, best_match,
                                   extract_patch)


class TestFeature:
    def test_degradation_range(self):
        with pytest.raises(ValueError):
            Feature(10, 10, 10, degradation=1.2)

    def test_minimum_diameter(self):
        with pytest.raises(ValueError):
            Feature(10, 10, MIN_FEATURE_DIAMETER - 1)

    def test_bad_class(self):
        with pytest.raises(ValueError):
            Feature(10, 10, 10, cls="maybe")

    def test_sprite_is_flat_far_from_rim(self):
        sprite, half = feature_sprite(Feature(0, 0, 20.0), 180.0)
        assert sprite.shape == (2 * half + 1, 2 * half + 1)
        assert np.all(np.abs(sprite[0]) < 1e-3)


class TestRenderScene:
    def test_empty_noiseless_scene_is_constant(self):
        img, anns = render_scene(SceneSpec(50, 40, noise_sigma=0.0, background_level=87.0), seed=0)
        assert img.shape == (40, 50)
        assert anns == []
        np.testing.assert_array_equal(img, 87.0)

    def test_deterministic(self):
        spec = SceneSpec(120, 120, crater_list=[Feature(60, 60, 30.0, 0.2)], terrain_sigma=5.0)
        a, _ = render_scene(spec, seed=3)
        b, _ = render_scene(spec, seed=3)
        np.testing.assert_array_equal(a, b)

    def test_feature_must_fit(self):
        with pytest.raises(ValueError):
            render_scene(SceneSpec(100, 100, crater_list=[Feature(5, 50, 20.0)]), seed=0)

    def test_annotations_follow_features(self):
        feats = [Feature(40, 40, 20.0), Feature(90, 60, 24.0, cls="false", shape="blob")]
        _, anns = render_scene(SceneSpec(150, 120, crater_list=feats, noise_sigma=0), seed=0)
        assert [(a.x, a.y, a.diameter_px, a.label) for a in anns] == [
            (40, 40, 20.0, "true"), (90, 60, 24.0, "false")]

    def test_degraded_crater_matches_template_worse(self):
        crisp = SceneSpec(160, 160, crater_list=[Feature(80, 80, 40.0, 0.0)], noise_sigma=0)
        img, anns = render_scene(crisp, seed=0)
        t = build_appearance_template([extract_patch(img, anns[0])])
        scores = {}
        for deg in (0.0, 0.9):
            spec = SceneSpec(160, 160, crater_list=[Feature(80, 80, 40.0, deg)], noise_sigma=2.0)
            im, an = render_scene(spec, seed=1)
            scores[deg] = best_match(im, an[0], t, DP).best_score
        assert scores[0.0] > scores[0.9]


class TestTerrain:
    def test_scale_and_reproducibility(self):
        a = terrain_texture(200, 300, 8.0, 6.0, np.random.default_rng(0))
        b = terrain_texture(200, 300, 8.0, 6.0, np.random.default_rng(0))
        assert a.shape == (200, 300)
        np.testing.assert_array_equal(a, b)
        assert 4.0 < a.std() < 16.0


class TestRandomScene:
    geom = SceneGeometry(400, 400, 20, 40)

    def test_empty_process(self):
        spec = random_scene(CountingModelParams(0, 0), self.geom, seed=1)
        assert spec.crater_list == []

    def test_fixed_seed(self):
        p = CountingModelParams(20, 5)
        assert random_scene(p, self.geom, seed=4) == random_scene(p, self.geom, seed=4)

    def test_features_inside_and_apart(self):
        spec = random_scene(CountingModelParams(30, 10), self.geom, seed=2)
        spec.validate()
        xyd = np.array([(f.x, f.y, f.diameter_px) for f in spec.crater_list])
        assert np.all((xyd[:, 2] >= 20) & (xyd[:, 2] <= 40))
        for i in range(len(xyd)):
            for j in range(i):
                dist = np.hypot(*(xyd[i, :2] - xyd[j, :2]))
                assert dist >= 0.5 * (xyd[i, 2] + xyd[j, 2]) - 1e-9

    def test_mean_true_count(self):
        # Poisson mean 50 over 1000 scenes: standard error sqrt(50 / 1000)
        geom = SceneGeometry(2000, 2000, 20, 40)
        p = CountingModelParams(50, 0)
        counts = [len(random_scene(p, geom, seed=s).crater_list) for s in range(1000)]
        assert abs(np.mean(counts) - 50) < 3 * np.sqrt(50 / 1000)

    def test_crowded_scene_errors(self):
        with pytest.raises(ValueError, match="crowded"):
            random_scene(CountingModelParams(500, 0), SceneGeometry(150, 150, 20, 40), seed=0,
                         max_tries=20)

    def test_classes_and_shapes(self):
        spec = random_scene(CountingModelParams(40, 40), SceneGeometry(1000, 1000), seed=5)
        shapes = {(f.cls, f.shape) for f in spec.crater_list}
        assert shapes == {("true", "crater"), ("false", "blob"), ("false", "ridge")}
