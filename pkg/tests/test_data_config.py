"""File formats, vocabulary, synthetic generation, and config parsing."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mhcvse.config import (
    SEED_ENV_VAR,
    TrainConfig,
    format_config_text,
    load_config,
    parse_config_text,
    save_config,
)
from mhcvse.data import (
    STOPWORDS,
    Dataset,
    DatasetManifest,
    Vocabulary,
    generate_synthetic,
    load_dataset,
    read_captions_jsonl,
    read_features,
    tokenize,
    write_captions_jsonl,
    write_features,
)


class TestTokenize:
    def test_lowercases_and_splits_on_punctuation(self):
        assert tokenize("Two dogs, RUNNING fast!") == ["two", "dogs", "running", "fast"]

    def test_drops_stopwords(self):
        assert tokenize("a man on the beach") == ["man", "beach"]
        assert "the" in STOPWORDS

    def test_keeps_digits(self):
        assert tokenize("3 dogs") == ["3", "dogs"]

    def test_empty_input(self):
        assert tokenize("") == []
        assert tokenize("the a an") == []


class TestVocabulary:
    def test_unknown_token_id_is_zero(self):
        vocab = Vocabulary(["dog", "cat"])
        assert vocab.tokens[0] == Vocabulary.UNK
        assert vocab.encode(["zebra"]) == [0]
        assert vocab.encode(["dog", "cat"]) == [1, 2]

    def test_build_ranks_by_frequency_then_alphabetically(self):
        corpus = [["b", "a"], ["b", "c"], ["a"]]
        vocab = Vocabulary.build(corpus)
        assert vocab.tokens == [Vocabulary.UNK, "a", "b", "c"]

    def test_from_tokens_round_trip(self):
        vocab = Vocabulary(["dog", "cat"])
        rebuilt = Vocabulary.from_tokens(vocab.tokens)
        assert rebuilt.tokens == vocab.tokens
        assert rebuilt.encode(["cat"]) == vocab.encode(["cat"])

    def test_from_tokens_requires_unk_first(self):
        with pytest.raises(ValueError, match="must start with"):
            Vocabulary.from_tokens(["dog", "cat"])

    def test_len_counts_unk(self):
        assert len(Vocabulary(["x"])) == 2


class TestFeatureFormat:
    def test_round_trip_preserves_f32_values_exactly(self, tmp_path):
        rng = np.random.default_rng(89)
        features = {3: rng.normal(size=(4, 6)), 9: rng.normal(size=(2, 6))}
        path = tmp_path / "x.rgft"
        write_features(path, features)
        loaded = read_features(path)
        assert set(loaded) == {3, 9}
        for image_id, arr in features.items():
            # written as f32, widened back to f64: exact at f32 precision
            assert loaded[image_id].dtype == np.float64
            assert np.array_equal(loaded[image_id],
                                  arr.astype(np.float32).astype(np.float64))

    def test_rank1_features_rejected_at_write(self, tmp_path):
        with pytest.raises(ValueError, match="rank-2"):
            write_features(tmp_path / "bad.rgft", {1: np.ones(4)})

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.rgft"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(ValueError, match="bad magic"):
            read_features(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "cut.rgft"
        write_features(path, {1: np.ones((2, 3))})
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError, match="truncated"):
            read_features(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "trail.rgft"
        write_features(path, {1: np.ones((2, 3))})
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ValueError, match="trailing bytes"):
            read_features(path)

    def test_unsupported_version_rejected(self, tmp_path):
        path = tmp_path / "v7.rgft"
        path.write_bytes(b"RGFT" + (7).to_bytes(4, "little") + b"\x00" * 8)
        with pytest.raises(ValueError, match="unsupported version"):
            read_features(path)


class TestCaptionFormat:
    def test_round_trip(self, tmp_path):
        captions = [(0, 10, ["dog", "park"]), (1, 10, ["dog"]),
                    (2, 11, ["red", "car"])]
        path = tmp_path / "caps.jsonl"
        write_captions_jsonl(path, captions)
        assert read_captions_jsonl(path) == captions

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        body = json.dumps({"image_id": 1, "caption_id": 0, "tokens": ["x"]})
        path.write_text(f"\n{body}\n\n")
        assert read_captions_jsonl(path) == [(0, 1, ["x"])]

    def test_invalid_json_reports_the_line_number(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        good = json.dumps({"image_id": 1, "caption_id": 0, "tokens": ["x"]})
        path.write_text(f"{good}\n{{not json\n")
        with pytest.raises(ValueError, match="line 2"):
            read_captions_jsonl(path)

    def test_missing_field_reports_the_line_number(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        path.write_text(json.dumps({"image_id": 1, "tokens": ["x"]}) + "\n")
        with pytest.raises(ValueError, match="line 1"):
            read_captions_jsonl(path)

    def test_empty_token_list_rejected(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        path.write_text(json.dumps({"image_id": 1, "caption_id": 0,
                                    "tokens": []}) + "\n")
        with pytest.raises(ValueError, match="non-empty list"):
            read_captions_jsonl(path)

    def test_empty_file_is_an_error_not_an_empty_dataset(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        path.write_text("")
        with pytest.raises(ValueError, match="no captions"):
            read_captions_jsonl(path)


class TestManifestAndLoading:
    def _write_split(self, tmp_path, captions, features):
        write_features(tmp_path / "f.rgft", features)
        write_captions_jsonl(tmp_path / "c.jsonl", captions)
        manifest = DatasetManifest("train", "f.rgft", "c.jsonl",
                                   len(features),
                                   len(captions) // max(1, len(features)))
        manifest_path = tmp_path / "train.manifest.json"
        manifest.save(manifest_path)
        return manifest_path

    def test_two_image_fixture_with_five_captions_each(self, tmp_path):
        rng = np.random.default_rng(97)
        features = {0: rng.normal(size=(3, 4)), 1: rng.normal(size=(3, 4))}
        captions = [(c, c // 5, [f"tok{c}", "shared"]) for c in range(10)]
        manifest_path = self._write_split(tmp_path, captions, features)
        ds = load_dataset(manifest_path)
        assert ds.split == "train"
        assert len(ds.pairs) == 10
        assert len(ds.images) == 2
        assert ds.image_ids == [0, 1]
        assert ds.captions_of(0) == list(range(5))
        # 10 distinct tok* + shared + unk
        assert len(ds.vocab) == 12

    def test_manifest_round_trip(self, tmp_path):
        manifest = DatasetManifest("val", "a.rgft", "b.jsonl", 4, 5)
        path = tmp_path / "m.json"
        manifest.save(path)
        assert DatasetManifest.load(path) == manifest

    def test_manifest_missing_keys_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"split": "train"}))
        with pytest.raises(ValueError, match="missing keys"):
            DatasetManifest.load(path)

    def test_manifest_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{nope")
        with pytest.raises(ValueError, match="invalid JSON"):
            DatasetManifest.load(path)

    def test_caption_for_unknown_image_rejected(self, tmp_path):
        features = {0: np.ones((2, 3))}
        captions = [(0, 0, ["x"]), (1, 5, ["y"])]
        manifest_path = self._write_split(tmp_path, captions, features)
        with pytest.raises(ValueError, match="without features"):
            load_dataset(manifest_path)

    def test_image_without_captions_rejected(self, tmp_path):
        features = {0: np.ones((2, 3)), 1: np.ones((2, 3))}
        captions = [(0, 0, ["x"])]
        manifest_path = self._write_split(tmp_path, captions, features)
        with pytest.raises(ValueError, match="without captions"):
            load_dataset(manifest_path)

    def test_supplied_vocabulary_is_used_verbatim(self, tmp_path):
        features = {0: np.ones((2, 3))}
        captions = [(0, 0, ["novel", "word"])]
        manifest_path = self._write_split(tmp_path, captions, features)
        train_vocab = Vocabulary(["word"])
        ds = load_dataset(manifest_path, train_vocab)
        assert ds.vocab is train_vocab
        assert ds.pairs[0].token_ids == [0, 1]  # novel -> unk


class TestSyntheticGenerator:
    def test_canonical_split_sizes(self, tmp_path):
        manifests = generate_synthetic(tmp_path, n_pairs=24, seed=5)
        sizes = {}
        for path in manifests:
            manifest = DatasetManifest.load(path)
            sizes[manifest.split] = manifest.images
            ds = load_dataset(path)
            assert len(ds.pairs) == manifest.images
            assert manifest.captions_per_image == 1
        assert sizes == {"train": 16, "val": 4, "test": 4}
        assert sum(sizes.values()) == 24

    def test_same_seed_reproduces_files_byte_for_byte(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_synthetic(a, n_pairs=12, seed=13)
        generate_synthetic(b, n_pairs=12, seed=13)
        for name in ("train", "val", "test"):
            for suffix in ("features.rgft", "captions.jsonl", "manifest.json"):
                assert (a / f"{name}.{suffix}").read_bytes() == \
                    (b / f"{name}.{suffix}").read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_synthetic(a, n_pairs=12, seed=13)
        generate_synthetic(b, n_pairs=12, seed=14)
        assert (a / "train.features.rgft").read_bytes() != \
            (b / "train.features.rgft").read_bytes()

    def test_splits_are_disjoint_by_pair_id(self, tmp_path):
        manifests = generate_synthetic(tmp_path, n_pairs=18, seed=5)
        seen: set[int] = set()
        for path in manifests:
            ds = load_dataset(path)
            ids = set(ds.images)
            assert not ids & seen
            seen |= ids
        assert len(seen) == 18

    def test_latents_keep_the_promised_separation(self, tmp_path):
        # token codes expose the bucketed latent; check caption-space
        # distinctness instead: every caption pair differs in >= 2 slots
        manifests = generate_synthetic(tmp_path, n_pairs=18, seed=5)
        codes = []
        for path in manifests:
            for _, _, tokens in load_dataset(path).captions:
                codes.append(tokens)
        for i in range(len(codes)):
            for j in range(i + 1, len(codes)):
                hamming = sum(a != b for a, b in zip(codes[i], codes[j]))
                assert hamming >= 2

    def test_val_and_test_tokens_are_covered_by_training(self, tmp_path):
        train_m, val_m, test_m = generate_synthetic(tmp_path, n_pairs=18, seed=5)
        train_tokens = {t for _, _, toks in load_dataset(train_m).captions
                        for t in toks}
        for path in (val_m, test_m):
            for _, _, tokens in load_dataset(path).captions:
                assert set(tokens) <= train_tokens

    def test_feature_shape_matches_the_flags(self, tmp_path):
        train_m, _, _ = generate_synthetic(tmp_path, n_pairs=8, m=4, f=10,
                                           l=3, vocab=30, seed=5)
        ds = load_dataset(train_m)
        for arr in ds.images.values():
            assert arr.shape == (4, 10)

    def test_too_few_pairs_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="n_pairs"):
            generate_synthetic(tmp_path, n_pairs=3)

    def test_vocab_too_small_for_positions_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="too small"):
            generate_synthetic(tmp_path, n_pairs=8, l=6, vocab=10)

    def test_negative_noise_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="noise"):
            generate_synthetic(tmp_path, n_pairs=8, noise=-0.1)

    def test_impossible_separation_fails_honestly(self, tmp_path):
        with pytest.raises(ValueError, match="separation"):
            generate_synthetic(tmp_path, n_pairs=50, l=2, vocab=20,
                               separation=4.0, seed=5)


class TestConfig:
    def test_defaults_validate(self):
        TrainConfig().validate()

    def test_text_round_trip_is_identical(self):
        cfg = TrainConfig(embed_dim=64, heads=4, eta0=0.00037,
                          base_weights=(1.0, 0.5, 2.0, 1.0),
                          invert_dynamic_weight=True, fuse_type="concat")
        assert parse_config_text(format_config_text(cfg)) == cfg

    def test_save_and_load(self, tmp_path):
        cfg = TrainConfig(embed_dim=16, heads=2, seed=9)
        path = tmp_path / "cfg.txt"
        save_config(cfg, path)
        assert load_config(path, apply_env=False) == cfg

    def test_comments_and_blank_lines_ignored(self):
        cfg = parse_config_text("# a comment\n\nembed_dim = 16  # trailing\nheads = 2\n")
        assert cfg.embed_dim == 16
        assert cfg.heads == 2

    def test_unknown_key_rejected_with_line_number(self):
        with pytest.raises(ValueError, match="line 2.*unknown key"):
            parse_config_text("embed_dim = 16\nlr = 0.1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValueError, match="duplicate key"):
            parse_config_text("heads = 2\nheads = 4\n")

    def test_unparseable_value_rejected(self):
        with pytest.raises(ValueError, match="cannot parse"):
            parse_config_text("embed_dim = many\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ValueError, match="key = value"):
            parse_config_text("embed_dim 16\n")

    def test_base_weights_parse_as_a_tuple(self):
        cfg = parse_config_text("base_weights = 1.0,2.0,3.0,4.0\n")
        assert cfg.base_weights == (1.0, 2.0, 3.0, 4.0)

    def test_env_seed_overrides_config(self, tmp_path, monkeypatch):
        path = tmp_path / "cfg.txt"
        save_config(TrainConfig(seed=5), path)
        monkeypatch.setenv(SEED_ENV_VAR, "123")
        assert load_config(path).seed == 123

    def test_env_seed_must_be_an_integer(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "not-a-seed")
        with pytest.raises(ValueError, match=SEED_ENV_VAR):
            load_config()

    def test_keyword_overrides_apply_before_validation(self):
        cfg = load_config(None, apply_env=False, embed_dim=32, heads=4)
        assert cfg.embed_dim == 32

    def test_validation_rejects_bad_shapes(self):
        with pytest.raises(ValueError, match="heads"):
            TrainConfig(embed_dim=10, heads=4).validate()
        with pytest.raises(ValueError, match="embed_dim"):
            TrainConfig(embed_dim=7).validate()
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=1).validate()
        with pytest.raises(ValueError, match="retrieval_level"):
            TrainConfig(retrieval_level="raw").validate()
        with pytest.raises(ValueError, match="eta_min_ratio"):
            TrainConfig(eta_min_ratio=1.5).validate()

    def test_eta_min_derived_from_ratio(self):
        cfg = TrainConfig(eta0=0.02, eta_min_ratio=0.01)
        assert_allclose(cfg.eta_min, 0.0002, rtol=0, atol=1e-18)


class TestDatasetPairs:
    def test_pairs_encode_with_the_split_vocabulary(self):
        vocab = Vocabulary(["dog", "park"])
        images = {7: np.ones((2, 3))}
        captions = [(0, 7, ["dog", "park"]), (1, 7, ["dog", "moon"])]
        ds = Dataset("train", images, captions, vocab)
        assert [p.token_ids for p in ds.pairs] == [[1, 2], [1, 0]]
        assert all(p.image_id == 7 for p in ds.pairs)
        assert [p.caption_id for p in ds.pairs] == [0, 1]
        assert ds.pairs[0].regions is images[7]
