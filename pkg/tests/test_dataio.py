"""Round-trips, corruption handling, and manifest parsing."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stwnn import csi, dataio, network as net
from stwnn.errors import (CompatibilityError, CorruptionError, FormatError,
                          ValidationError)
from stwnn.volumes import Volume3D


def random_stream(rng, n_tx=2, n_rx=2, n_sub=4, n_frames=5):
    h = rng.standard_normal((n_frames, n_tx, n_rx, n_sub)) \
        + 1j * rng.standard_normal((n_frames, n_tx, n_rx, n_sub))
    frames = tuple(csi.CsiFrame(h=h[i], packet_index=i, timestamp=i / 100.0)
                   for i in range(n_frames))
    return csi.CsiStream(frames=frames, n_tx=n_tx, n_rx=n_rx, n_sub=n_sub,
                         sample_rate_hz=100.0)


class TestStreamRoundTrip:
    def test_bit_identical(self, tmp_path):
        stream = random_stream(np.random.default_rng(40))
        path = tmp_path / "s.csi1"
        dataio.save_stream(path, stream)
        loaded = dataio.load_stream(path)
        np.testing.assert_array_equal(loaded.as_array(), stream.as_array())
        assert (loaded.n_tx, loaded.n_rx, loaded.n_sub) == (2, 2, 4)
        assert loaded.sample_rate_hz == 100.0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.csi1"
        path.write_bytes(b"XXXX" + b"\0" * 64)
        with pytest.raises(FormatError):
            dataio.load_stream(path)

    def test_truncated_body(self, tmp_path):
        stream = random_stream(np.random.default_rng(41), n_frames=10)
        path = tmp_path / "s.csi1"
        dataio.save_stream(path, stream)
        data = path.read_bytes()
        frame_bytes = 2 * 2 * 4 * 16
        path.write_bytes(data[:len(data) - frame_bytes])  # drop the last frame
        with pytest.raises(CorruptionError):
            dataio.load_stream(path)

    def test_trailing_garbage(self, tmp_path):
        stream = random_stream(np.random.default_rng(42))
        path = tmp_path / "s.csi1"
        dataio.save_stream(path, stream)
        path.write_bytes(path.read_bytes() + b"zz")
        with pytest.raises(CorruptionError):
            dataio.load_stream(path)

    @given(n_tx=st.integers(1, 3), n_rx=st.integers(1, 3), n_sub=st.integers(1, 8),
           n_frames=st.integers(1, 6), seed=st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, tmp_path_factory, n_tx, n_rx, n_sub, n_frames, seed):
        stream = random_stream(np.random.default_rng(seed), n_tx, n_rx, n_sub, n_frames)
        path = tmp_path_factory.mktemp("io") / "s.csi1"
        dataio.save_stream(path, stream)
        np.testing.assert_array_equal(dataio.load_stream(path).as_array(), stream.as_array())


def random_volumes(rng, count):
    out = []
    for i in range(count):
        shape = tuple(int(d) for d in rng.integers(1, 6, size=3))
        out.append(Volume3D(data=rng.standard_normal(shape),
                            scale=int(rng.integers(1, 5)),
                            source_segment=int(rng.integers(0, 9)),
                            label=None if rng.uniform() < 0.3 else int(rng.integers(0, 4))))
    return out


class TestVolumeRoundTrip:
    def test_bit_identical_mixed_shapes(self, tmp_path):
        vols = random_volumes(np.random.default_rng(43), 7)
        path = tmp_path / "v.vol1"
        dataio.save_volumes(path, vols)
        loaded = dataio.load_volumes(path)
        assert len(loaded) == 7
        for a, b in zip(loaded, vols):
            np.testing.assert_array_equal(a.data, b.data)
            assert (a.scale, a.source_segment, a.label) == (b.scale, b.source_segment, b.label)

    def test_empty_list(self, tmp_path):
        path = tmp_path / "v.vol1"
        dataio.save_volumes(path, [])
        assert dataio.load_volumes(path) == []

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "v.vol1"
        path.write_bytes(b"VOLX" + b"\0" * 16)
        with pytest.raises(FormatError):
            dataio.load_volumes(path)

    def test_truncation(self, tmp_path):
        vols = random_volumes(np.random.default_rng(44), 3)
        path = tmp_path / "v.vol1"
        dataio.save_volumes(path, vols)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(CorruptionError):
            dataio.load_volumes(path)

    def test_count_overstates_content(self, tmp_path):
        path = tmp_path / "v.vol1"
        dataio.save_volumes(path, random_volumes(np.random.default_rng(45), 2))
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 3)  # claim one more volume than stored
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptionError):
            dataio.load_volumes(path)


class TestWeightsRoundTrip:
    CFG = dict(n_classes=3, in_channels=2, block_channels=(2, 3), feature_dim=4, seed=11)

    def test_forward_identical_after_round_trip(self, tmp_path):
        model = net.build_model(net.NetworkConfig(**self.CFG))
        x = np.random.default_rng(46).standard_normal((2, 5, 6, 9))
        before = net.forward(model, x)
        path = tmp_path / "m.wgt1"
        dataio.save_weights(path, model)

        fresh = net.build_model(net.NetworkConfig(**self.CFG))
        for p in fresh.parameters().values():
            p.values = p.values + 1.0  # make sure loading actually restores
        loaded = dataio.load_weights(path, fresh)
        after = net.forward(loaded, x)
        for a, b in zip(before, after):
            np.testing.assert_array_equal(a, b)

    def test_config_mismatch(self, tmp_path):
        model = net.build_model(net.NetworkConfig(**self.CFG))
        path = tmp_path / "m.wgt1"
        dataio.save_weights(path, model)
        other = net.build_model(net.NetworkConfig(**{**self.CFG, "n_classes": 4}))
        with pytest.raises(CompatibilityError):
            dataio.load_weights(path, other)

    def test_unsupported_version_names_it(self, tmp_path):
        model = net.build_model(net.NetworkConfig(**self.CFG))
        path = tmp_path / "m.wgt1"
        dataio.save_weights(path, model)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="9"):
            dataio.load_weights(path, model)

    def test_peek_config(self, tmp_path):
        model = net.build_model(net.NetworkConfig(**self.CFG))
        path = tmp_path / "m.wgt1"
        dataio.save_weights(path, model)
        assert dataio.peek_weights_config(path) == model.config

    def test_truncated_tensor_data(self, tmp_path):
        model = net.build_model(net.NetworkConfig(**self.CFG))
        path = tmp_path / "m.wgt1"
        dataio.save_weights(path, model)
        data = path.read_bytes()
        path.write_bytes(data[:-12])
        with pytest.raises(CorruptionError):
            dataio.load_weights(path, net.build_model(net.NetworkConfig(**self.CFG)))


class TestManifest:
    def write(self, tmp_path, text):
        path = tmp_path / "manifest.tsv"
        path.write_text(text, encoding="utf-8")
        return path

    def test_two_line_manifest(self, tmp_path):
        path = self.write(tmp_path, "a.csi1\t0\ttrain\nb.csi1\t1\ttest\n")
        manifest = dataio.load_manifest(path)
        assert len(manifest.entries) == 2
        assert manifest.n_classes == 2
        assert manifest.entries[0] == dataio.ManifestEntry("a.csi1", 0, "train")

    def test_unknown_split_cites_line(self, tmp_path):
        path = self.write(tmp_path, "a.csi1\t0\ttrain\nb.csi1\t0\ttst\n")
        with pytest.raises(ValidationError, match="line 2"):
            dataio.load_manifest(path)

    def test_comment_only_file(self, tmp_path):
        path = self.write(tmp_path, "# nothing here\n# still nothing\n")
        with pytest.raises(ValidationError, match="no entries"):
            dataio.load_manifest(path)

    def test_duplicate_path_cites_line(self, tmp_path):
        path = self.write(tmp_path, "a.csi1\t0\ttrain\na.csi1\t1\ttest\n")
        with pytest.raises(ValidationError, match="line 2"):
            dataio.load_manifest(path)

    def test_label_out_of_declared_range(self, tmp_path):
        path = self.write(tmp_path, "@n_classes\t2\na.csi1\t0\ttrain\nb.csi1\t5\ttest\n")
        with pytest.raises(ValidationError, match="out of range"):
            dataio.load_manifest(path)

    def test_directives_parsed(self, tmp_path):
        path = self.write(tmp_path,
                          "@n_classes\t3\n@shape\t3\t3\t30\n@sample_rate_hz\t100.0\n"
                          "a.csi1\t0\ttrain\nb.csi1\t2\ttest\n")
        manifest = dataio.load_manifest(path)
        assert manifest.n_classes == 3
        assert (manifest.n_tx, manifest.n_rx, manifest.n_sub) == (3, 3, 30)
        assert manifest.sample_rate_hz == 100.0

    def test_needs_train_and_test(self, tmp_path):
        path = self.write(tmp_path, "a.csi1\t0\ttrain\nb.csi1\t0\tval\n")
        with pytest.raises(ValidationError, match="test"):
            dataio.load_manifest(path)

    def test_write_then_load(self, tmp_path):
        manifest = dataio.DatasetManifest(
            entries=[dataio.ManifestEntry("a.csi1", 0, "train"),
                     dataio.ManifestEntry("b.csi1", 1, "test")],
            n_classes=2, n_tx=3, n_rx=3, n_sub=30, sample_rate_hz=100.0)
        path = tmp_path / "manifest.tsv"
        dataio.write_manifest(path, manifest)
        loaded = dataio.load_manifest(path)
        assert loaded.entries == manifest.entries
        assert loaded.n_classes == 2
        assert loaded.sample_rate_hz == 100.0
