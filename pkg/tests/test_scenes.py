"""Scene generators, degradation, corpus splits, and PGM round trips."""

import numpy as np
import pytest

from latentsr.errors import (
    ConfigurationError,
    InvalidInputError,
    PgmParseError,
    PgmUnsupportedError,
)
from latentsr.rng import mix_seed
from latentsr.scenes import (
    SceneCategory,
    build_corpus,
    degrade,
    generate_scene,
    load_corpus,
    load_pgm,
    mean_abs_gradient,
    save_corpus,
    save_pgm,
)


class TestGenerators:
    def test_deterministic_bit_identical(self):
        for cat in SceneCategory:
            a = generate_scene(cat, 7, 32)
            b = generate_scene(cat, 7, 32)
            assert a.tobytes() == b.tobytes()

    def test_seeds_differ(self):
        a = generate_scene(SceneCategory.FOREST, 1, 32)
        b = generate_scene(SceneCategory.FOREST, 2, 32)
        assert not np.array_equal(a, b)

    def test_categories_differ_for_same_seed(self):
        a = generate_scene(SceneCategory.DESERT, 5, 32)
        b = generate_scene(SceneCategory.FOREST, 5, 32)
        assert not np.array_equal(a, b)

    def test_range_and_shape(self):
        for cat in SceneCategory:
            img = generate_scene(cat, 3, 32)
            assert img.shape == (32, 32)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_side_too_small_rejected(self):
        with pytest.raises(InvalidInputError):
            generate_scene(SceneCategory.RUNWAY, 0, 8)

    def test_larger_sides_work(self):
        img = generate_scene(SceneCategory.RIVER, 0, 48)
        assert img.shape == (48, 48)

    def test_forest_rougher_than_desert_over_20_seeds(self):
        forest = np.mean([mean_abs_gradient(generate_scene(SceneCategory.FOREST, s, 32)) for s in range(20)])
        desert = np.mean([mean_abs_gradient(generate_scene(SceneCategory.DESERT, s, 32)) for s in range(20)])
        assert forest > desert

    def test_structured_rougher_than_smooth_over_20_seeds(self):
        def avg(cat):
            return np.mean([mean_abs_gradient(generate_scene(cat, s, 32)) for s in range(20)])

        structured = [SceneCategory.RUNWAY, SceneCategory.INDUSTRIAL, SceneCategory.TRAIN_STATION]
        smooth = [SceneCategory.DESERT, SceneCategory.RIVER]
        assert min(avg(c) for c in structured) > max(avg(c) for c in smooth)

    def test_category_order_matches_reference_table(self):
        assert [c.value for c in SceneCategory] == [
            "business_district",
            "dense_residential",
            "desert",
            "forest",
            "industrial",
            "train_station",
            "river",
            "runway",
        ]


class TestDegrade:
    def test_constant_image_no_noise(self):
        lr = degrade(np.full((32, 32), 0.25), 4, 0.0, seed=1)
        assert np.array_equal(lr, np.full((8, 8), 0.25))

    def test_shape_contract(self):
        assert degrade(np.zeros((32, 32)), 4, 0.02, seed=2).shape == (8, 8)

    def test_deterministic_with_noise(self):
        hr = generate_scene(SceneCategory.RUNWAY, 1, 32)
        a = degrade(hr, 4, 0.02, seed=3)
        b = degrade(hr, 4, 0.02, seed=3)
        assert a.tobytes() == b.tobytes()

    def test_output_clamped(self):
        lr = degrade(np.ones((16, 16)), 2, 0.5, seed=4)
        assert lr.min() >= 0.0 and lr.max() <= 1.0

    def test_non_divisible_factor_rejected(self):
        with pytest.raises(InvalidInputError):
            degrade(np.zeros((30, 30)), 4, 0.0, seed=0)


class TestCorpus:
    def test_counts_for_n10(self):
        corpus = build_corpus(10, seed=42)
        assert len(corpus.pairs) == 80
        assert len(corpus.train) == 64
        assert len(corpus.test) == 16

    def test_minimum_split(self):
        corpus = build_corpus(2, seed=0)
        assert len(corpus.train) == 8 and len(corpus.test) == 8

    def test_n1_rejected(self):
        with pytest.raises(InvalidInputError):
            build_corpus(1, seed=0)

    def test_all_seeds_distinct(self):
        corpus = build_corpus(5, seed=9)
        seeds = [p.seed for p in corpus.pairs]
        assert len(set(seeds)) == len(seeds)

    def test_lr_is_exactly_degrade_of_hr(self):
        from latentsr.scenes import _SALT_DEGRADE

        corpus = build_corpus(3, seed=5)
        for pair in corpus.pairs:
            want = degrade(pair.hr, 4, 0.02, mix_seed(pair.seed, _SALT_DEGRADE))
            assert pair.lr.tobytes() == want.tobytes()

    def test_regeneration_idempotent(self):
        a = build_corpus(3, seed=6)
        b = build_corpus(3, seed=6)
        for pa, pb in zip(a.pairs, b.pairs):
            assert pa.hr.tobytes() == pb.hr.tobytes()
            assert pa.lr.tobytes() == pb.lr.tobytes()

    def test_each_category_represented_in_both_splits(self):
        corpus = build_corpus(5, seed=7)
        assert {p.category for p in corpus.train} == set(SceneCategory)
        assert {p.category for p in corpus.test} == set(SceneCategory)


class TestPgm:
    def test_roundtrip_quantization_bound(self, tmp_path):
        img = generate_scene(SceneCategory.BUSINESS_DISTRICT, 11, 32)
        path = tmp_path / "img.pgm"
        save_pgm(img, path)
        back = load_pgm(path)
        assert np.abs(back - img).max() <= 1.0 / 510.0

    def test_exact_on_multiples_of_255(self, tmp_path):
        img = np.array([[0.0, 1.0], [128 / 255.0, 17 / 255.0]])
        path = tmp_path / "img.pgm"
        save_pgm(img, path)
        assert np.array_equal(load_pgm(path), img)

    def test_header_format(self, tmp_path):
        path = tmp_path / "img.pgm"
        save_pgm(np.zeros((3, 5)), path)
        assert path.read_bytes().startswith(b"P5\n5 3\n255\n")

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.pgm"
        path.write_bytes(b"")
        with pytest.raises(PgmParseError):
            load_pgm(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n2 2\n255\n1 2 3 4")
        with pytest.raises(PgmParseError) as err:
            load_pgm(path)
        assert err.value.offset == 0

    def test_wrong_maxval_rejected(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(PgmUnsupportedError):
            load_pgm(path)

    def test_truncated_raster_rejected(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
        with pytest.raises(PgmParseError) as err:
            load_pgm(path)
        assert "raster truncated" in str(err.value)

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "comment.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n\x00\xff")
        img = load_pgm(path)
        assert np.array_equal(img, [[0.0, 1.0]])


class TestManifest:
    def test_save_load_regenerates_bit_identically(self, tmp_path):
        corpus = build_corpus(3, seed=13)
        manifest = save_corpus(corpus, tmp_path)
        loaded = load_corpus(manifest)
        assert len(loaded.pairs) == len(corpus.pairs)
        assert len(loaded.train) == len(corpus.train)
        assert len(loaded.test) == len(corpus.test)
        for pa, pb in zip(corpus.pairs, loaded.pairs):
            assert pa.category is pb.category
            assert pa.seed == pb.seed
            assert pa.hr.tobytes() == pb.hr.tobytes()
            assert pa.lr.tobytes() == pb.lr.tobytes()

    def test_pgm_files_written(self, tmp_path):
        corpus = build_corpus(2, seed=14)
        save_corpus(corpus, tmp_path)
        assert len(list((tmp_path / "hr").glob("*.pgm"))) == 16
        assert len(list((tmp_path / "lr").glob("*.pgm"))) == 16

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_corpus(tmp_path / "nope.csv")

    def test_rewrite_is_byte_identical(self, tmp_path):
        corpus = build_corpus(2, seed=15)
        m1 = save_corpus(corpus, tmp_path / "a")
        m2 = save_corpus(build_corpus(2, seed=15), tmp_path / "b")
        assert m1.read_bytes() == m2.read_bytes()
        for rel in sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.pgm")):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
