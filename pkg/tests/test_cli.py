import os
import tempfile
import threading
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
from PIL import Image

from config import RunConfig, load_config, parse_config
from constants import TraceKind
from ed_utils.decorators import number
from ed_utils.timeout import timeout
from errors import ConfigurationError
from main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main

TOY = """
crfp.base_channels = 16
crfp.dsv_split = 12/4
crfp.fovea_size = 32
crfp.flow_channels = 8
train.iterations = 1
train.unroll = 2
train.batch_size = 1
train.patch_size = 64
train.fovea_size = 16
train.checkpoint_every = 0
"""


def write_clip(directory, n=3, size=64):
    directory.mkdir(parents=True)
    y, x = np.mgrid[0:size, 0:size]
    for t in range(n):
        frame = 127 + 100 * np.sin(0.2 * x + 0.1 * y + 0.3 * t)
        rgb = np.repeat(frame[..., None], 3, axis=2).astype(np.uint8)
        Image.fromarray(rgb).save(directory / f"{t:04d}.png")


class TestConfig(unittest.TestCase):

    @number("8.1")
    def test_parse(self):
        config = parse_config("""
            # comment
            crfp.dsv_split = 16/16
            crfp.fast_region = none
            crfp.use_fovea = false
            crfp.flow_propagation = false
            train.lr_model = 2e-4   # trailing comment
            trace.kind = tracker
            run.jobs = 3
        """)
        self.assertEqual(config.crfp.dsv_split, (16, 16))
        self.assertIsNone(config.crfp.fast_region)
        self.assertFalse(config.crfp.use_fovea)
        self.assertFalse(config.crfp.flow_propagation)
        self.assertEqual(config.train.lr_model, 2e-4)
        self.assertIs(config.trace.kind, TraceKind.TRACKER)
        self.assertEqual(config.run.jobs, 3)
        self.assertEqual(parse_config("crfp.fast_region = 128").crfp.fast_region, 128)

    @number("8.2")
    def test_fail_closed(self):
        for text in ("crfp.unknown = 1", "nosection.key = 1", "crfp.levels = four",
                     "crfp.use_fovea = maybe", "trace.kind = spiral", "crfp.dsv_split = 24",
                     "just a line"):
            with self.assertRaises(ConfigurationError):
                parse_config(text)

    @number("8.3")
    def test_dump_round_trip(self):
        config = parse_config(TOY + "trace.kind = horizontal\ncrfp.fast_region = 64\n")
        again = parse_config(config.dump())
        self.assertEqual(again, config)

    @number("8.4")
    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            parse_config("train.lr_flow = 1e-3").validate()
        with self.assertRaises(ConfigurationError):
            parse_config("crfp.dsv_split = 24/4").validate()
        with self.assertRaises(ConfigurationError):
            parse_config("train.patch_size = 100").validate()
        with self.assertRaises(ConfigurationError):
            parse_config("run.jobs = 0").validate()
        RunConfig().validate()

    @number("8.5")
    def test_output_root(self):
        with mock.patch.dict(os.environ, {"CRFP_OUTPUT_ROOT": "/tmp/somewhere"}):
            self.assertEqual(RunConfig().run.output_root(), Path("/tmp/somewhere"))
            self.assertEqual(parse_config("run.output_dir = here").run.output_root(), Path("here"))
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(RunConfig().run.output_root(), Path("runs"))

    @number("8.6")
    def test_load_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.cfg"
            path.write_text(TOY)
            self.assertEqual(load_config(path).crfp.base_channels, 16)
            with self.assertRaises(ConfigurationError):
                load_config(Path(tmp) / "missing.cfg")


class TestCommands(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        write_clip(self.root / "data" / "clip0")
        self.out = self.root / "out"

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, extra=""):
        path = self.root / "run.cfg"
        path.write_text(TOY + f"data.train_dir = {self.root / 'data'}\n"
                              f"data.eval_dir = {self.root / 'data'}\n"
                              f"run.output_dir = {self.out}\n" + extra)
        return str(path)

    @number("8.7")
    def test_usage_errors(self):
        cfg = self.config()
        self.assertEqual(main(["eval", str(self.root / "nope.cfg"), "--checkpoint", "x"]),
                         EXIT_USAGE)
        self.assertEqual(main(["baseline", cfg, "--trace", "raster", "--sigma", "10"]), EXIT_USAGE)
        self.assertEqual(main(["baseline", cfg, "--trace", "tracker", "--sigma", "-1"]),
                         EXIT_USAGE)
        self.assertEqual(main(["baseline", cfg, "--jobs", "0"]), EXIT_USAGE)
        missing = self.config("data.eval_dir = " + str(self.root / "absent") + "\n")
        self.assertEqual(main(["baseline", missing]), EXIT_USAGE)
        (self.root / "bad.cfg").write_text("crfp.depth = 3\n")
        self.assertEqual(main(["baseline", str(self.root / "bad.cfg")]), EXIT_USAGE)
        with self.assertRaises(SystemExit) as raised:
            main(["eval", cfg])
        self.assertEqual(raised.exception.code, 2)

    @number("8.8")
    def test_baseline(self):
        cfg = self.config()
        self.assertEqual(main(["baseline", cfg, "--trace", "tracker", "--sigma", "10",
                               "--jobs", "2"]), EXIT_OK)
        self.assertTrue((self.out / "baseline" / "report.csv").is_file())
        self.assertTrue((self.out / "baseline" / "summary.json").is_file())
        resolved = (self.out / "baseline" / "resolved.cfg").read_text()
        self.assertIn("crfp.dsv_split = 12/4", resolved)

    @number("8.9")
    def test_runtime_failure(self):
        (self.root / "data" / "clip0" / "0003.png").write_bytes(b"corrupt")
        self.assertEqual(main(["baseline", self.config()]), EXIT_FAILURE)

    @number("8.10")
    def test_train_infer_simulate(self):
        cfg = self.config()
        self.assertEqual(main(["train", cfg]), EXIT_OK)
        checkpoint = self.out / "train" / "checkpoint.crfp"
        self.assertTrue(checkpoint.is_file())
        self.assertTrue((self.out / "train" / "loss.csv").is_file())

        trace = self.root / "trace.txt"
        trace.write_text("0 0 0 32\n1 32 0 32\n2 32 32 32\n")
        clip = str(self.root / "data" / "clip0")
        self.assertEqual(main(["infer", cfg, "--checkpoint", str(checkpoint), "--clip", clip,
                               "--trace-file", str(trace)]), EXIT_OK)
        self.assertEqual(len(list((self.out / "infer" / "frames").iterdir())), 3)

        self.assertEqual(main(["simulate", cfg, "--checkpoint", str(checkpoint), "--clip", clip,
                               "--sigma", "10"]), EXIT_OK)
        self.assertTrue((self.out / "simulate" / "report.csv").is_file())

        self.assertEqual(main(["eval", cfg, "--checkpoint", str(checkpoint)]), EXIT_OK)
        self.assertTrue((self.out / "eval" / "report.csv").is_file())

        self.assertEqual(main(["train", cfg, "--resume", str(checkpoint)]), EXIT_OK)

        other = self.config("crfp.res_blocks = 2\n")
        self.assertEqual(main(["eval", other, "--checkpoint", str(checkpoint)]), EXIT_USAGE)
        (self.root / "junk.crfp").write_bytes(b"junk")
        self.assertEqual(main(["eval", cfg, "--checkpoint", str(self.root / "junk.crfp")]),
                         EXIT_USAGE)


class TestTimeout(unittest.TestCase):

    @number("8.11")
    def test_timeout_decorator(self):
        release = threading.Event()

        @timeout(0.2)
        def stalls():
            release.wait(5)

        @timeout(5)
        def returns(x):
            return x * 2

        @timeout(5)
        def fails():
            raise TimeoutError("raised by the body")

        with self.assertRaisesRegex(TimeoutError, "stalls timed out after 0.2 seconds"):
            stalls()
        release.set()
        self.assertEqual(returns(21), 42)
        self.assertEqual(returns.__name__, "returns")
        with self.assertRaisesRegex(TimeoutError, "raised by the body"):
            fails()


if __name__ == '__main__':
    unittest.main()
