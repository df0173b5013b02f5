import csv
import tempfile
import unittest
from pathlib import Path

import numpy as np
from PIL import Image

from data_io import (FrameSequence, TrainingSampler, degrade_frame, degrade_sequence,
                     load_clips, load_sequence, quantize, read_frame, sample_training_patch,
                     write_frame, write_loss_curve, write_report)
from ed_utils.decorators import number
from errors import ConfigurationError, DataError
from metrics import MetricReport, MetricRow


def solid(value, height=16, width=24):
    return np.full((3, height, width), value / 255.0, dtype=np.float32)


def save(path, value, height=16, width=24):
    array = np.full((height, width, 3), value, dtype=np.uint8)
    Image.fromarray(array).save(path)


def random_sequence(seed, n=10, size=64):
    rng = np.random.Generator(np.random.PCG64(seed))
    return FrameSequence("clip", [rng.uniform(size=(3, size, size)).astype(np.float32)
                                  for _ in range(n)])


class TestFrames(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    @number("5.1")
    def test_quantize(self):
        out = quantize(np.array([0.0, 1.0, 0.5, -0.2, 1.7, 2 / 255]))
        np.testing.assert_array_equal(out, [0, 255, 128, 0, 255, 2])
        self.assertEqual(out.dtype, np.uint8)

    @number("5.2")
    def test_write_then_read(self):
        rng = np.random.Generator(np.random.PCG64(0))
        frame = (rng.integers(0, 256, size=(3, 8, 12)) / 255.0).astype(np.float32)
        path = self.root / "sub" / "f.png"
        write_frame(frame, path)
        back = read_frame(path)
        self.assertEqual(back.shape, (3, 8, 12))
        self.assertEqual(back.dtype, np.float32)
        np.testing.assert_array_equal(quantize(back), quantize(frame))
        (self.root / "broken.png").write_bytes(b"not an image")
        with self.assertRaises(DataError):
            read_frame(self.root / "broken.png")

    @number("5.3")
    def test_load_sequence(self):
        save(self.root / "b.png", 200)
        save(self.root / "a.png", 100)
        save(self.root / "c.png", 50)
        (self.root / "notes.txt").write_text("ignored")
        seq = load_sequence(self.root)
        self.assertEqual(len(seq), 3)
        self.assertEqual(seq.clip_id, self.root.name)
        self.assertEqual(seq.hr_dims, (16, 24))
        np.testing.assert_allclose(seq.hr[0], solid(100), atol=1e-6)
        np.testing.assert_allclose(seq.hr[2], solid(50), atol=1e-6)
        self.assertEqual(len(load_sequence(self.root, max_frames=2)), 2)

    @number("5.4")
    def test_load_sequence_errors(self):
        with self.assertRaises(DataError):
            load_sequence(self.root / "missing")
        empty = self.root / "empty"
        empty.mkdir()
        with self.assertRaises(DataError):
            load_sequence(empty)
        mixed = self.root / "mixed"
        mixed.mkdir()
        save(mixed / "0.png", 1)
        save(mixed / "1.png", 1, height=8)
        with self.assertRaises(DataError):
            load_sequence(mixed)
        broken = self.root / "broken"
        broken.mkdir()
        save(broken / "0.png", 1)
        (broken / "1.png").write_bytes(b"\x89PNG garbage")
        with self.assertRaises(DataError):
            load_sequence(broken)

    @number("5.5")
    def test_load_clips(self):
        for name in ("second", "first"):
            (self.root / name).mkdir()
            save(self.root / name / "0.png", 10)
        clips = load_clips(self.root)
        self.assertEqual([c.clip_id for c in clips], ["first", "second"])
        single = load_clips(self.root / "first")
        self.assertEqual(len(single), 1)
        empty = self.root / "nothing"
        empty.mkdir()
        with self.assertRaises(DataError):
            load_clips(empty)


class TestDegradation(unittest.TestCase):

    @number("5.6")
    def test_degrade_frame(self):
        low = degrade_frame(np.full((3, 32, 48), 0.3, dtype=np.float32))
        self.assertEqual(low.shape, (3, 4, 6))
        np.testing.assert_allclose(low, 0.3, atol=1e-5)
        checker = np.indices((32, 32)).sum(axis=0) % 2
        checker = np.repeat(checker[None], 3, axis=0).astype(np.float32)
        low = degrade_frame(checker, 2)
        self.assertGreaterEqual(low.min(), 0.0)
        self.assertLessEqual(low.max(), 1.0)
        with self.assertRaises(ConfigurationError):
            degrade_frame(np.zeros((3, 30, 32), dtype=np.float32))

    @number("5.7")
    def test_degrade_sequence(self):
        original = random_sequence(0, n=3, size=32)
        seq = degrade_sequence(original)
        self.assertEqual(len(seq.lr), 3)
        self.assertEqual(seq.lr_dims, (4, 4))
        self.assertIs(seq.hr, original.hr)


class TestSampling(unittest.TestCase):

    @number("5.8")
    def test_patch(self):
        seq = random_sequence(1)
        rng = np.random.Generator(np.random.PCG64(0))
        sample = sample_training_patch(seq, 3, rng, patch=32, fovea=16, window=4)
        self.assertEqual(sample.hr.shape, (4, 3, 32, 32))
        self.assertEqual(sample.lr.shape, (4, 3, 4, 4))
        self.assertEqual(sample.fovea.shape, (4, 3, 16, 16))
        self.assertEqual(sample.start, 3)
        for t, box in enumerate(sample.boxes):
            self.assertTrue(box.inside(32, 32))
            np.testing.assert_array_equal(sample.fovea[t], sample.hr[t, :, box.y0:box.y1,
                                                                     box.x0:box.x1])
            np.testing.assert_allclose(sample.lr[t], degrade_frame(sample.hr[t]))

    @number("5.9")
    def test_patch_errors(self):
        seq = random_sequence(2)
        rng = np.random.Generator(np.random.PCG64(0))
        with self.assertRaises(ConfigurationError):
            sample_training_patch(seq, 0, rng, patch=128, fovea=16, window=4)
        with self.assertRaises(ConfigurationError):
            sample_training_patch(seq, 7, rng, patch=32, fovea=16, window=4)
        with self.assertRaises(ConfigurationError):
            sample_training_patch(seq, 0, rng, patch=36, fovea=16, window=4)
        with self.assertRaises(ConfigurationError):
            sample_training_patch(seq, 0, rng, patch=32, fovea=40, window=4)

    @number("5.10")
    def test_sampler_is_indexed(self):
        sampler = TrainingSampler([random_sequence(3), random_sequence(4, n=3)], seed=9,
                                  patch=32, fovea=16, window=4)
        self.assertEqual(len(sampler.sequences), 1)
        first = sampler.sample(5)
        again = sampler.sample(5)
        np.testing.assert_array_equal(first.hr, again.hr)
        self.assertEqual(first.boxes, again.boxes)
        batch = sampler.batch(1, 2)
        np.testing.assert_array_equal(batch[0].hr, sampler.sample(2).hr)
        np.testing.assert_array_equal(batch[1].hr, sampler.sample(3).hr)
        with self.assertRaises(ConfigurationError):
            TrainingSampler([random_sequence(5, n=3)], seed=0, patch=32, fovea=16, window=4)


class TestWriters(unittest.TestCase):

    @number("5.11")
    def test_report_csv(self):
        report = MetricReport([MetricRow("c", "0", "fovea", 30.0, 0.75),
                               MetricRow("c", "1", "fovea", 32.0, 0.85)])
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "out" / "report.csv"
            write_report(report, path)
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["clip", "frame", "region", "psnr", "ssim"])
        self.assertEqual(rows[1], ["c", "0", "fovea", "30.000000", "0.750000"])
        self.assertEqual(rows[-1], ["c", "mean", "fovea", "31.000000", "0.800000"])
        self.assertEqual(len(rows), 4)

    @number("5.12")
    def test_loss_curve(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "loss.csv"
            write_loss_curve([0.5, 0.25], path, start=10)
            lines = path.read_text().splitlines()
        self.assertEqual(lines, ["iteration,loss", "10,0.50000000", "11,0.25000000"])


if __name__ == '__main__':
    unittest.main()
