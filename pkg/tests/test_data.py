import json

import numpy as np
import pytest

from okwugbe.audio import FrontendConfig, SpecAugmentConfig
from okwugbe.data import (
    FON_SPLIT,
    Featurizer,
    ManifestEntry,
    ManifestError,
    collate,
    filter_dataset,
    iterate_batches,
    load_manifest,
    split_dataset,
    write_manifest,
)
from okwugbe.text import CharSet, EncodeError

FRONTEND = FrontendConfig(sample_rate=8000, n_fft=256, hop_length=256, n_mels=16)
CS = CharSet.from_symbols([" ", "a", "b", "c"])


def entries_with_durations(durations):
    return [ManifestEntry(None, "a b", d, f"u{i}") for i, d in enumerate(durations)]


class TestManifest:
    def test_empty_manifest(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("")
        assert load_manifest(tmp_path / "m.jsonl") == []

    def test_three_entries(self, manifest_factory):
        path = manifest_factory([("x", "a b", 0.5), ("y", "c", 0.3), ("z", "ab", 0.4)])
        entries = load_manifest(path)
        assert [e.id for e in entries] == ["x", "y", "z"]
        assert entries[1].transcript == "c"
        assert entries[0].audio_path == path.parent / "wav" / "x.wav"
        assert entries[1].duration() == pytest.approx(0.3)

    def test_missing_field_names_line(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"audio_path": "a.wav", "text": "a"}\n{"audio_path": "b.wav"}\n')
        with pytest.raises(ManifestError, match=r"m\.jsonl:2: .*'text'"):
            load_manifest(tmp_path / "m.jsonl", check_audio=False)

    def test_malformed_json(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("{not json\n")
        with pytest.raises(ManifestError, match=":1: malformed"):
            load_manifest(tmp_path / "m.jsonl")

    def test_missing_audio_listed(self, tmp_path):
        lines = [json.dumps({"audio_path": f"{n}.wav", "text": "a"}) for n in ("gone1", "gone2")]
        (tmp_path / "m.jsonl").write_text("\n".join(lines))
        with pytest.raises(ManifestError, match="2 audio file.*gone1.wav.*gone2.wav"):
            load_manifest(tmp_path / "m.jsonl")

    def test_transcripts_normalised(self, tmp_path):
        (tmp_path / "m.jsonl").write_text(json.dumps({"audio_path": "a.wav", "text": "  A   b "}) + "\n")
        assert load_manifest(tmp_path / "m.jsonl", check_audio=False)[0].transcript == "a b"

    def test_write_round_trip(self, manifest_factory, tmp_path):
        entries = load_manifest(manifest_factory([("x", "a", 0.2), ("y", "b c", 0.3)]))
        write_manifest(tmp_path / "out.jsonl", entries, relative_to=tmp_path)
        assert load_manifest(tmp_path / "out.jsonl") == entries


class TestFilterAndSplit:
    def test_unbounded_filter_is_identity(self):
        entries = entries_with_durations([0.5, 3.0, 12.0])
        assert filter_dataset(entries) == entries

    def test_duration_window(self):
        entries = entries_with_durations([1.9, 2.0, 3.5, 5.0, 5.1, 10.0])
        kept = filter_dataset(entries, 2.0, 5.0)
        assert [e.duration_s for e in kept] == [2.0, 3.5, 5.0]

    def test_word_limit(self):
        entries = [ManifestEntry(None, t, 1.0) for t in ("a", "a b", "a b c")]
        assert [e.transcript for e in filter_dataset(entries, max_words=2)] == ["a", "a b"]

    def test_split_sizes_follow_corpus_ratios(self):
        entries = entries_with_durations([1.0] * sum(FON_SPLIT))
        parts = split_dataset(entries)
        assert [len(p) for p in parts] == list(FON_SPLIT)

    @pytest.mark.parametrize("n", [0, 1, 7, 100])
    def test_split_is_a_partition(self, n):
        entries = entries_with_durations([1.0] * n)
        parts = split_dataset(entries, seed=3)
        ids = sorted(e.id for p in parts for e in p)
        assert ids == sorted(e.id for e in entries)

    def test_split_deterministic_per_seed(self):
        entries = entries_with_durations([1.0] * 50)
        assert split_dataset(entries, seed=1) == split_dataset(entries, seed=1)
        assert split_dataset(entries, seed=1) != split_dataset(entries, seed=2)

    def test_bad_proportions(self):
        with pytest.raises(ValueError):
            split_dataset([], (1, -1))

    def test_batches_cover_everything(self):
        entries = entries_with_durations([1.0] * 7)
        batches = list(iterate_batches(entries, 3, np.random.default_rng(0)))
        assert [len(b) for b in batches] == [3, 3, 1]
        assert sorted(e.id for b in batches for e in b) == sorted(e.id for e in entries)


class TestCollate:
    def test_padding_and_lengths(self, manifest_factory):
        entries = load_manifest(manifest_factory([("x", "a b", 0.5), ("y", "c", 1.0)]))
        fz = Featurizer(FRONTEND)
        batch = collate(entries, CS, fz)
        lengths = [fz(e.audio_path).n_frames for e in entries]
        np.testing.assert_array_equal(batch.feature_lengths, lengths)
        assert batch.features.shape == (2, 16, max(lengths))
        np.testing.assert_array_equal(batch.features[0, :, lengths[0] :], 0.0)
        np.testing.assert_array_equal(batch.unpadded(0), fz(entries[0].audio_path).values.astype(np.float32))
        assert batch.labels == [[2, 1, 3], [4]]
        np.testing.assert_array_equal(batch.label_lengths, [3, 1])
        assert batch.ids == ["x", "y"] and batch.infeasible == []

    def test_infeasible_flagged(self, manifest_factory):
        # 0.1 s at hop 256 is 4 frames, 2 after the stem: too few for five labels
        entries = load_manifest(manifest_factory([("short", "ababa", 0.1), ("ok", "a", 0.1)]))
        batch = collate(entries, CS, Featurizer(FRONTEND), stem_stride=2)
        assert batch.infeasible == [0]

    def test_encode_error_names_utterance(self, manifest_factory):
        entries = load_manifest(manifest_factory([("bad1", "a z", 0.2)]))
        with pytest.raises(EncodeError, match="bad1.*'z'"):
            collate(entries, CS, Featurizer(FRONTEND))

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            collate([], CS, Featurizer(FRONTEND))

    def test_augmentation_changes_only_with_config(self, manifest_factory):
        entries = load_manifest(manifest_factory([("x", "a", 0.5)]))
        fz = Featurizer(FRONTEND)
        aug = SpecAugmentConfig(max_freq_mask_width=4, max_time_mask_width=3, n_freq_masks=1, n_time_masks=1)
        plain = collate(entries, CS, fz).features
        a1 = collate(entries, CS, fz, augment=aug, rng=np.random.default_rng(0)).features
        a2 = collate(entries, CS, fz, augment=aug, rng=np.random.default_rng(0)).features
        np.testing.assert_array_equal(a1, a2)
        assert np.all((a1 == plain) | (a1 == 0.0))

    def test_featurizer_resamples(self, manifest_factory):
        entries = load_manifest(manifest_factory([("x", "a", 0.5)], rate=16000))
        spec = Featurizer(FRONTEND)(entries[0].audio_path)
        assert spec.n_mels == 16 and spec.n_frames == (4000 - 256) // 256 + 1
