import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brightness_centroid, make_raw_video
from vidgan.data import (Clip, ClipBatcher, RawVideo, SyntheticDatasetConfig,
                         generate_synthetic_dataset, load_dataset, make_batch,
                         normalize_clip, preprocess, random_crop,
                         resize_preserve_aspect, sample_clip, save_dataset)


class TestResize:
    def test_exact_2x_downscale(self):
        video = make_raw_video(t=2, h=128, w=256)
        out = resize_preserve_aspect(video, 64)
        assert out.frames.shape == (2, 64, 128, 3)

    def test_identity(self):
        video = make_raw_video(t=3, h=64, w=64)
        out = resize_preserve_aspect(video, 64)
        assert out.frames.shape == (3, 64, 64, 3)
        np.testing.assert_array_equal(out.frames, video.frames)

    def test_round_half_up_on_long_side(self):
        # 320 * 128 / 240 = 170.67 -> 171
        video = make_raw_video(t=1, h=240, w=320)
        out = resize_preserve_aspect(video, 128)
        assert out.frames.shape == (1, 128, 171, 3)

    def test_round_half_up_portrait(self):
        video = make_raw_video(t=1, h=320, w=240)
        out = resize_preserve_aspect(video, 128)
        assert out.frames.shape == (1, 171, 128, 3)

    def test_bilinear_2x_is_block_mean(self):
        # at an exact 2x downscale, bilinear (align_corners=False) averages 2x2 blocks
        video = make_raw_video(t=1, h=8, w=8, seed=3)
        out = resize_preserve_aspect(video, 4)
        x = video.frames[0].astype(np.float32)
        blocks = (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2]) / 4.0
        np.testing.assert_allclose(out.frames[0], blocks, atol=1e-3)

    def test_zero_frames_rejected(self):
        with pytest.raises(ValueError):
            RawVideo(np.zeros((0, 8, 8, 3), dtype=np.uint8), 0)


class TestRandomCrop:
    def test_full_frame_single_offset(self):
        video = make_raw_video(t=2, h=64, w=64)
        out = random_crop(video, 64, np.random.default_rng(0))
        np.testing.assert_array_equal(out.frames, video.frames)

    def test_offsets_uniform_over_valid_range(self):
        video = make_raw_video(t=1, h=64, w=128, seed=1)
        rng = np.random.default_rng(0)
        offsets = set()
        for _ in range(2000):
            out = random_crop(video, 64, rng)
            # recover the left offset by matching the first row
            row = out.frames[0, 0]
            for left in range(65):
                if np.array_equal(video.frames[0, 0, left:left + 64], row):
                    offsets.add(left)
                    break
        assert offsets == set(range(65))

    def test_identical_rng_state_identical_crop(self):
        video = make_raw_video(t=2, h=32, w=48, seed=2)
        a = random_crop(video, 16, np.random.default_rng(5))
        b = random_crop(video, 16, np.random.default_rng(5))
        np.testing.assert_array_equal(a.frames, b.frames)

    def test_oversized_crop_rejected(self):
        video = make_raw_video(t=1, h=63, w=128)
        with pytest.raises(ValueError):
            random_crop(video, 64, np.random.default_rng(0))


class TestSampleClip:
    def test_single_valid_start(self):
        # span = 11 * 2 + 1 = 23, so start must be 0
        video = make_raw_video(t=23, h=8, w=8, seed=4)
        out = sample_clip(video, 12, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(out.frames, video.frames[0::2])

    def test_whole_video(self):
        video = make_raw_video(t=12, h=8, w=8, seed=5)
        out = sample_clip(video, 12, 1, np.random.default_rng(0))
        np.testing.assert_array_equal(out.frames, video.frames)

    def test_insufficient_frames(self):
        video = make_raw_video(t=10, h=8, w=8)
        with pytest.raises(ValueError):
            sample_clip(video, 12, 1, np.random.default_rng(0))

    def test_stride_pattern(self):
        video = make_raw_video(t=30, h=4, w=4, seed=6)
        rng = np.random.default_rng(3)
        out = sample_clip(video, 5, 3, rng)
        # find the start by matching the first frame, then check the stride
        starts = [s for s in range(30) if np.array_equal(video.frames[s], out.frames[0])]
        assert len(starts) == 1
        idx = starts[0] + 3 * np.arange(5)
        np.testing.assert_array_equal(out.frames, video.frames[idx])


class TestNormalize:
    def test_endpoints_and_midpoint(self):
        frames = np.array([[[[0, 127.5, 255]]]], dtype=np.float64)
        clip = normalize_clip(RawVideo(frames, 2))
        np.testing.assert_allclose(clip.frames[0, 0, 0], [-1.0, 0.0, 1.0])
        assert clip.label == 2

    @given(st.integers(0, 255), st.integers(1, 4))
    @settings(max_examples=25, deadline=None)
    def test_range_property(self, value, t):
        frames = np.full((t, 4, 4, 3), value, dtype=np.uint8)
        clip = normalize_clip(RawVideo(frames, 0))
        assert clip.frames.min() >= -1.0 and clip.frames.max() <= 1.0


class TestSyntheticDataset:
    def test_labels_balanced(self):
        config = SyntheticDatasetConfig(num_classes=4, dataset_size=40, resolution=16,
                                        clip_length=4, seed=0)
        videos = generate_synthetic_dataset(config)
        counts = np.bincount([v.label for v in videos], minlength=4)
        assert list(counts) == [10, 10, 10, 10]

    def test_deterministic_under_seed(self):
        config = SyntheticDatasetConfig(num_classes=2, dataset_size=6, resolution=16,
                                        clip_length=4, seed=11)
        a = generate_synthetic_dataset(config)
        b = generate_synthetic_dataset(config)
        for va, vb in zip(a, b):
            assert va.label == vb.label
            np.testing.assert_array_equal(va.frames, vb.frames)

    def test_rightward_class_centroid_increases_until_bounce(self):
        # fast shapes so the track includes wall bounces
        config = SyntheticDatasetConfig(num_classes=4, dataset_size=16, resolution=24,
                                        clip_length=6, velocity_range=(3.0, 4.0), seed=3)
        videos = [v for v in generate_synthetic_dataset(config) if v.label == 0]
        assert videos
        for video in videos:
            xs = [brightness_centroid(f)[0] for f in video.frames]
            diffs = np.diff(xs)
            assert diffs[0] > 0, "class 0 must start moving rightward"
            turned = np.nonzero(diffs <= 0)[0]
            if turned.size:  # only a wall bounce may reverse the direction
                first = turned[0]
                assert (diffs[:first] > 0).all()
                res = video.frames.shape[2]
                assert xs[first] > res / 2, "direction reversed away from the right wall"

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SyntheticDatasetConfig(num_classes=1)
        with pytest.raises(ValueError):
            SyntheticDatasetConfig(resolution=8)
        with pytest.raises(ValueError):
            SyntheticDatasetConfig(clip_length=2)


class TestBatching:
    def test_singleton_dataset(self, tiny_dataset):
        batcher = ClipBatcher(tiny_dataset[:1], 1, 16, 4, 2, seed=0)
        batch = batcher.next_batch()
        assert batch.frames.shape == (1, 4, 16, 16, 3)
        assert batch.labels[0] == tiny_dataset[0].label

    def test_epoch_visits_each_element_once(self, tiny_dataset):
        n = len(tiny_dataset)
        batcher = ClipBatcher(tiny_dataset, n, 16, 4, 2, seed=1)
        labels = sorted(batcher.next_batch().labels.tolist())
        assert labels == sorted(v.label for v in tiny_dataset)

    def test_epochs_reshuffle(self, tiny_dataset):
        n = len(tiny_dataset)
        batcher = ClipBatcher(tiny_dataset, n, 16, 4, 2, seed=2)
        first = batcher.rng.bit_generator.state
        batcher.next_batch()
        second = batcher.rng.bit_generator.state
        assert first != second

    def test_replica_seeds_differ(self, tiny_dataset):
        a = ClipBatcher(tiny_dataset, 8, 16, 4, 2, seed=0).next_batch()
        b = ClipBatcher(tiny_dataset, 8, 16, 4, 2, seed=1).next_batch()
        assert not np.array_equal(a.frames, b.frames)

    def test_make_batch_shapes_and_range(self, tiny_dataset):
        batch = make_batch(tiny_dataset, 6, np.random.default_rng(0), 16, 4, 2)
        assert batch.frames.shape == (6, 4, 16, 16, 3)
        assert batch.frames.min() >= -1.0 and batch.frames.max() <= 1.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            make_batch([], 2, np.random.default_rng(0), 16, 4)

    def test_preprocess_is_pure_under_rng_state(self, tiny_dataset):
        video = tiny_dataset[0]
        a = preprocess(video, 16, 4, 2, np.random.default_rng(9))
        b = preprocess(video, 16, 4, 2, np.random.default_rng(9))
        np.testing.assert_array_equal(a.frames, b.frames)


class TestDatasetStore:
    def test_round_trip_bit_identical(self, tiny_dataset, tmp_path):
        save_dataset(tiny_dataset[:5], str(tmp_path))
        loaded = load_dataset(str(tmp_path))
        assert len(loaded) == 5
        for a, b in zip(tiny_dataset[:5], loaded):
            assert a.label == b.label
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_byte_layout_is_raw_frame_major_uint8(self, tiny_dataset, tmp_path):
        save_dataset(tiny_dataset[:1], str(tmp_path))
        index = (tmp_path / "index.tsv").read_text().strip().split("\n")
        path, label, t, h, w = index[0].split("\t")
        raw = (tmp_path / path).read_bytes()
        assert raw == tiny_dataset[0].frames.astype(np.uint8).tobytes()
        assert (int(t), int(h), int(w)) == tiny_dataset[0].frames.shape[:3]
        assert int(label) == tiny_dataset[0].label

    def test_missing_index_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(str(tmp_path))

    def test_truncated_file_rejected(self, tiny_dataset, tmp_path):
        save_dataset(tiny_dataset[:1], str(tmp_path))
        name = (tmp_path / "index.tsv").read_text().split("\t")[0]
        data = (tmp_path / name).read_bytes()
        (tmp_path / name).write_bytes(data[:-8])
        with pytest.raises(ValueError):
            load_dataset(str(tmp_path))


def _train_linear_probe(features: torch.Tensor, labels: torch.Tensor, steps=300):
    probe = torch.nn.Linear(features.shape[1], int(labels.max()) + 1)
    opt = torch.optim.Adam(probe.parameters(), lr=5e-2)
    for _ in range(steps):
        loss = F.cross_entropy(probe(features), labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return probe


def test_classes_are_temporal_not_single_frame():
    """Motion direction separates classes; single frames sit near chance."""
    torch.manual_seed(0)
    config = SyntheticDatasetConfig(num_classes=4, dataset_size=240, resolution=16,
                                    clip_length=6, seed=21)
    videos = generate_synthetic_dataset(config)
    rng = np.random.default_rng(0)

    frame_feats, motion_feats, labels = [], [], []
    for video in videos:
        frames = video.frames.astype(np.float32) / 255.0
        pick = int(rng.integers(0, frames.shape[0]))
        frame_feats.append(frames[pick].reshape(-1))
        track = np.array([brightness_centroid(f) for f in video.frames])
        motion_feats.append(np.diff(track, axis=0).mean(axis=0))
        labels.append(video.label)

    frame_x = torch.tensor(np.stack(frame_feats))
    motion_x = torch.tensor(np.stack(motion_feats), dtype=torch.float32)
    y = torch.tensor(labels)
    split = 180
    frame_probe = _train_linear_probe(frame_x[:split], y[:split])
    motion_probe = _train_linear_probe(motion_x[:split], y[:split])
    with torch.no_grad():
        frame_acc = (frame_probe(frame_x[split:]).argmax(1) == y[split:]).float().mean()
        motion_acc = (motion_probe(motion_x[split:]).argmax(1) == y[split:]).float().mean()
    assert motion_acc >= 0.9, f"temporal probe only reached {motion_acc:.3f}"
    assert frame_acc <= 0.45, f"single-frame probe at {frame_acc:.3f}, expected near chance"
