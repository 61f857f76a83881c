import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import smooth_signal, tree_bytes, write_csv
from physgold.dataset import (
    DataFormatError,
    LoadConfig,
    SynthConfig,
    assign_partitions,
    load_partitions,
    load_subject,
    segment,
    synth_bundle,
    synth_generate,
    synth_subject,
    window_spans,
)
from physgold.metrics import pairwise_agreement, pearson


def _write_subject(root, rng, n=40, physio_fs=1000.0, dims=3):
    sdir = root / "s01"
    for name in ("A1", "A2", "A3"):
        v = smooth_signal(rng, n)
        write_csv(sdir / f"{name}.csv", ["timestamp", "value"], [(k / 2.0, x) for k, x in enumerate(v)])
    m = int(n * physio_fs / 2.0)
    for name in ("EDA", "BPM", "RESP"):
        v = rng.normal(size=m)
        write_csv(sdir / f"{name}.csv", ["timestamp", "value"], [(k / physio_fs, x) for k, x in enumerate(v)])
    feats = rng.normal(size=(n + 4, dims))
    write_csv(
        sdir / "features" / "audio.csv",
        ["timestamp"] + [f"f{k}" for k in range(dims)],
        [(k / 2.0, *row) for k, row in enumerate(feats)],
    )
    return sdir


class TestLoadSubject:
    def test_six_channels_at_label_rate(self, tmp_path, rng):
        sdir = _write_subject(tmp_path, rng)
        b, feats = load_subject(sdir)
        assert b.names == ["A1", "A2", "A3", "EDA", "BPM", "RESP"]
        assert {len(b[n]) for n in b.names} == {40}
        assert all(b[n].fs == 2.0 for n in b.names)
        assert feats["audio"].rows == 40 and feats["audio"].dims == 3

    def test_block_means_then_smooth(self, tmp_path, rng):
        sdir = _write_subject(tmp_path, rng, n=30, physio_fs=4.0)
        b, _ = load_subject(sdir, LoadConfig(smooth_physio=False))
        raw = np.loadtxt(sdir / "EDA.csv", delimiter=",", skiprows=1)[:, 1]
        np.testing.assert_allclose(b["EDA"].values, raw.reshape(-1, 2).mean(axis=1), atol=1e-12)

    def test_nan_feature_cell(self, tmp_path, rng):
        sdir = _write_subject(tmp_path, rng)
        path = sdir / "features" / "audio.csv"
        lines = path.read_text().splitlines()
        cells = lines[5].split(",")
        cells[2] = "nan"
        lines[5] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError) as err:
            load_subject(sdir)
        msg = str(err.value)
        assert "audio.csv:6" in msg and "'f1'" in msg

    def test_malformed_row(self, tmp_path, rng):
        sdir = _write_subject(tmp_path, rng)
        with open(sdir / "A2.csv", "a") as fh:
            fh.write("1.0\n")
        with pytest.raises(DataFormatError, match=r"A2.csv:42"):
            load_subject(sdir)

    def test_no_overlap(self, tmp_path, rng):
        sdir = _write_subject(tmp_path, rng, n=20, physio_fs=2.0)
        write_csv(sdir / "A1.csv", ["timestamp", "value"], [(100 + k / 2.0, 1.0 * k) for k in range(20)])
        with pytest.raises(DataFormatError, match="overlap"):
            load_subject(sdir)

    def test_offset_channels_trimmed(self, tmp_path, rng):
        sdir = _write_subject(tmp_path, rng, n=40, physio_fs=2.0)
        write_csv(sdir / "A1.csv", ["timestamp", "value"], [(2.0 + k / 2.0, 1.0 * k) for k in range(40)])
        b, feats = load_subject(sdir)
        assert len(b.names) == 6 and len(b["A1"]) == 36
        assert b.t0 == 2.0 and feats["audio"].rows == 36
        np.testing.assert_array_equal(b["A1"].values, np.arange(36.0))


class TestWindows:
    def test_examples(self):
        assert window_spans(700) == [(s, 300) for s in range(0, 401, 50)]
        assert window_spans(100) == [(0, 100)]
        assert window_spans(301) == [(0, 300), (50, 251)]
        assert window_spans(300) == [(0, 300)]

    @given(st.integers(1, 2000), st.integers(2, 400), st.integers(1, 120))
    def test_tiling(self, n, win, hop):
        hop = 1 + (hop - 1) % (win - 1)
        spans = window_spans(n, win, hop)
        covered = np.zeros(n, bool)
        for s, length in spans:
            assert 0 <= s and s + length <= n and length >= 1
            covered[s : s + length] = True
        assert covered.all()
        starts = [s for s, _ in spans]
        assert all(b - a == hop for a, b in zip(starts, starts[1:]))

    def test_segment(self, rng):
        feats, labels = rng.normal(size=(301, 4)), rng.normal(size=301)
        ws = segment(feats, labels, subject_id="s9")
        assert [w.start for w in ws] == [0, 50]
        assert all(w.features.shape[0] == len(w) for w in ws)
        np.testing.assert_array_equal(ws[1].labels, labels[50:])
        with pytest.raises(ValueError):
            segment(feats[:-1], labels)


class TestPartitions:
    def _write(self, tmp_path, body):
        p = tmp_path / "partitions.csv"
        p.write_text("subject_id,partition\n" + body)
        return p

    def test_valid(self, tmp_path):
        parts = load_partitions(self._write(tmp_path, "a,train\nb,devel\nc,test\n"))
        parts.require_all()
        assert parts.subjects("devel") == ["b"]

    def test_duplicate(self, tmp_path):
        with pytest.raises(DataFormatError, match=":3"):
            load_partitions(self._write(tmp_path, "a,train\na,test\n"))

    def test_unknown_label(self, tmp_path):
        with pytest.raises(DataFormatError, match="eval"):
            load_partitions(self._write(tmp_path, "a,eval\n"))

    def test_require_all(self, tmp_path):
        with pytest.raises(ValueError, match="test"):
            load_partitions(self._write(tmp_path, "a,train\nb,devel\n")).require_all()

    def test_assignment(self):
        parts = assign_partitions([f"s{k}" for k in range(6)], seed=3)
        assert [len(parts.subjects(p)) for p in ("train", "devel", "test")] == [4, 1, 1]


SMALL = SynthConfig(n_subjects=3, duration_s=30, feature_dims={"audio": 2, "video": 3})


class TestSynth:
    def test_same_seed_identical(self, tmp_path):
        synth_generate(SMALL, tmp_path / "a")
        synth_generate(SMALL, tmp_path / "b", jobs=2)
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_seed_changes_output(self):
        a = synth_subject(SMALL, 0)
        b = synth_subject(SynthConfig(**{**SMALL.to_dict(), "seed": 1, "rater_lag_range": (2, 12)}), 0)
        assert not np.array_equal(a.latent, b.latent)

    def test_round_trip(self, tmp_path):
        synth_generate(SMALL, tmp_path)
        for k, sid in enumerate(SMALL.subject_ids()):
            bundle, feats = load_subject(tmp_path / sid)
            subject = synth_subject(SMALL, k)
            expected = synth_bundle(subject, SMALL)
            assert bundle.names == expected.names
            for name in bundle.names:
                np.testing.assert_allclose(bundle[name].values, expected[name].values, rtol=0, atol=1e-9)
            for set_name, values in subject.features.items():
                np.testing.assert_array_equal(feats[set_name].values, values)

    def test_noiseless_raters_agree(self):
        cfg = SynthConfig(n_subjects=2, duration_s=60, rater_noise_sd=0.0, rater_lag_range=(0, 0))
        for k in range(cfg.n_subjects):
            b = synth_bundle(synth_subject(cfg, k), cfg)
            assert pairwise_agreement(b, ["A1", "A2", "A3"]) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize(
        "change",
        [{"n_subjects": 0}, {"rater_lag_range": (5, 2)}, {"rater_noise_sd": -1}, {"physio_nonlinearity": "cubic"}, {"feature_snr": 0}, {"physio_fs": 3.0}],
    )
    def test_invalid(self, change):
        with pytest.raises(ValueError):
            SynthConfig(**change).validate()

    def test_config_dict_round_trip(self):
        assert SynthConfig.from_dict(SMALL.to_dict()) == SMALL


@pytest.mark.slow
class TestSynthRegime:
    def test_default_agreement_is_weak(self):
        cfg = SynthConfig()
        means = []
        for seed in range(20):
            cfg.seed = seed
            per_subject = [pairwise_agreement(synth_bundle(synth_subject(cfg, k), cfg), ["A1", "A2", "A3"]) for k in range(cfg.n_subjects)]
            means.append(np.mean(per_subject))
        assert all(0.1 <= m <= 0.6 for m in means), means

    def test_eda_tracks_latent_better_than_resp(self):
        cfg = SynthConfig(n_subjects=1)
        wins = 0
        for seed in range(20):
            cfg.seed = seed
            b = synth_bundle(synth_subject(cfg, 0), cfg)
            wins += pearson(b["EDA"].values, b["LATENT"].values) > pearson(b["RESP"].values, b["LATENT"].values)
        assert wins >= 18
