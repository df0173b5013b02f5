import dataclasses
import unittest

import numpy as np

from config import CrfpConfig
from crfp import CrfpModel, RecurrentState, reset_state
from ed_utils.decorators import number
from errors import ConfigurationError, UsageError
from tensor_engine import GradientTape, Tensor, bilinear_resize
from utils import Box, centered_window

LR = 8
HR = 64
FOVEA = 32


def toy_model(**overrides):
    return CrfpModel(dataclasses.replace(CrfpConfig.toy(), **overrides))


def clip(seed, n=3, batch=1):
    rng = np.random.Generator(np.random.PCG64(seed))
    return [Tensor(rng.uniform(size=(batch, 3, LR, LR))) for _ in range(n)]


def fovea_crop(seed, batch=1):
    rng = np.random.Generator(np.random.PCG64(seed))
    return Tensor(rng.uniform(size=(batch, 3, FOVEA, FOVEA)))


def run(model, lrs, box=Box(8, 16, FOVEA), probes=None):
    state = model.reset_state(lrs[0])
    outputs = []
    for t, x_lr in enumerate(lrs):
        probe = {} if probes is not None else None
        x_hat, state = model.step(state, x_lr, fovea_crop(100 + t), box, probe)
        outputs.append(x_hat)
        if probes is not None:
            probes.append(probe)
    return outputs, state


class TestConfigSplit(unittest.TestCase):

    @number("3.1")
    def test_hr_split(self):
        self.assertEqual(CrfpConfig().hr_split, (3, 1))
        self.assertEqual(CrfpConfig(dsv_split=(32, 0)).hr_split, (4, 0))
        self.assertEqual(CrfpConfig.toy().hr_split, (3, 1))
        with self.assertRaises(ConfigurationError):
            CrfpModel(CrfpConfig(dsv_split=(24, 4)))
        with self.assertRaises(ConfigurationError):
            CrfpModel(CrfpConfig(scale=4))


class TestStep(unittest.TestCase):

    @number("3.2")
    def test_shapes(self):
        model = toy_model()
        lrs = clip(0, n=2)
        outputs, state = run(model, lrs)
        self.assertEqual(outputs[0].shape, (1, 3, HR, HR))
        self.assertEqual(state.feedback.shape, (1, 4, HR, HR))
        self.assertEqual([z.shape for z in state.dsv],
                         [(1, 4, 16, 16)] * 3 + [(1, 1, HR, HR)])
        self.assertEqual(state.prev_lr.shape, (1, 3, LR, LR))
        self.assertEqual(len(state.boxes), 2)

    @number("3.3")
    def test_reset_state(self):
        first = clip(1, n=1)[0]
        state = reset_state(CrfpConfig.toy(), first)
        self.assertTrue(all(not np.any(z.data) for z in state.dsv))
        self.assertFalse(np.any(state.feedback.data))
        np.testing.assert_array_equal(state.prev_lr.data, first.data)
        self.assertEqual(state.shapes()[0], (1, 4, HR, HR))

    @number("3.4")
    def test_residual_on_bilinear(self):
        model = toy_model()
        model.out.weight.data[...] = 0
        model.out.bias.data[...] = 0
        lrs = clip(2, n=2)
        outputs, _ = run(model, lrs)
        for x_hat, x_lr in zip(outputs, lrs):
            np.testing.assert_array_equal(x_hat.data, bilinear_resize(x_lr, 8).data)

    @number("3.5")
    def test_initial_aggregation_state_is_zero(self):
        probes = []
        run(toy_model(), clip(3, n=3), probes=probes)
        for probe in probes:
            self.assertFalse(np.any(probe["d0"].data))
            self.assertEqual(probe["flow"].shape, (1, 2, LR, LR))
            self.assertEqual(len(probe["h_dot"]), 4)

    @number("3.6")
    def test_causal(self):
        model = toy_model()
        lrs = clip(4, n=3)
        base, _ = run(model, lrs)
        changed_last = lrs[:2] + [Tensor(lrs[2].data * 0.5)]
        later, _ = run(model, changed_last)
        for t in range(2):
            np.testing.assert_array_equal(base[t].data, later[t].data)
        changed_first = [Tensor(lrs[0].data * 0.5)] + lrs[1:]
        earlier, _ = run(model, changed_first)
        self.assertFalse(np.array_equal(base[1].data, earlier[1].data))

    @number("3.7")
    def test_deterministic(self):
        lrs = clip(5, n=2)
        first, _ = run(toy_model(), lrs)
        second, _ = run(toy_model(), lrs)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.data, b.data)

    @number("3.8")
    def test_state_layout_is_stable(self):
        def layout(state):
            return [(t.shape, t.data.dtype) for t in [state.feedback, *state.dsv, state.prev_lr]]

        model = toy_model()
        lrs = clip(6, n=50)
        state = model.reset_state(lrs[0])
        expected = layout(state)
        for t, x_lr in enumerate(lrs):
            x_hat, state = model.step(state, x_lr, fovea_crop(100 + t), Box(8, 16, FOVEA))
            self.assertEqual(layout(state), expected, f"step {t}")
            self.assertTrue(np.all(np.isfinite(x_hat.data)))
        self.assertEqual(len(state.boxes), 50)
        self.assertTrue(np.all(np.isfinite(state.feedback.data)))
        self.assertLess(np.abs(state.feedback.data).max(), 1e3)

    @number("3.9")
    def test_detach(self):
        model = toy_model()
        lrs = clip(7, n=1)
        with GradientTape() as tape:
            tape.watch_all(model.params)
            _, state = model.step(model.reset_state(lrs[0]), lrs[0], fovea_crop(0),
                                  Box(0, 0, FOVEA))
        self.assertTrue(state.feedback.requires_grad)
        cut = state.detach()
        self.assertIsInstance(cut, RecurrentState)
        self.assertFalse(cut.feedback.requires_grad)
        self.assertFalse(any(z.requires_grad for z in cut.dsv))
        np.testing.assert_array_equal(cut.feedback.data, state.feedback.data)


class TestFovea(unittest.TestCase):

    @number("3.10")
    def test_fovea_influence_is_local(self):
        model = toy_model()
        x_lr = clip(8, n=1)[0]
        box = Box(8, 16, FOVEA)
        state = model.reset_state(x_lr)
        a, _ = model.step(state, x_lr, fovea_crop(1), box)
        b, _ = model.step(state, x_lr, fovea_crop(2), box)
        differs = np.any(a.data != b.data, axis=(0, 1))
        allowed = np.zeros((HR, HR), dtype=bool)
        allowed[max(box.y0 - 2, 0):box.y1 + 2, max(box.x0 - 2, 0):box.x1 + 2] = True
        self.assertFalse(np.any(differs & ~allowed))
        self.assertTrue(np.any(differs[box.y0:box.y1, box.x0:box.x1]))

    @number("3.11")
    def test_fovea_errors(self):
        model = toy_model()
        x_lr = clip(9, n=1)[0]
        state = model.reset_state(x_lr)
        with self.assertRaises(UsageError):
            model.step(state, x_lr, fovea_crop(0), Box(40, 0, FOVEA))
        with self.assertRaises(UsageError):
            model.step(state, x_lr, fovea_crop(0), Box(0, 0, 16))
        with self.assertRaises(UsageError):
            model.step(state, x_lr, None, Box(0, 0, FOVEA))

    @number("3.12")
    def test_without_fovea(self):
        model = toy_model(use_fovea=False)
        x_lr = clip(10, n=1)[0]
        x_hat, _ = model.step(model.reset_state(x_lr), x_lr, None, Box(0, 0, FOVEA))
        self.assertEqual(x_hat.shape, (1, 3, HR, HR))

    @number("3.13")
    def test_batch_with_distinct_boxes(self):
        model = toy_model()
        lrs = clip(11, n=1, batch=2)
        state = model.reset_state(lrs[0])
        x_hat, state = model.step(state, lrs[0], fovea_crop(3, batch=2),
                                  [Box(0, 0, FOVEA), Box(32, 32, FOVEA)])
        self.assertEqual(x_hat.shape, (2, 3, HR, HR))
        self.assertEqual(state.boxes[0], (Box(0, 0, FOVEA), Box(32, 32, FOVEA)))


class TestAlignment(unittest.TestCase):

    @number("3.14")
    def test_fast_mode_window(self):
        model = toy_model(fast_region=16)
        probes = []
        run(model, clip(12, n=2), probes=probes)
        h_dot = probes[1]["h_dot"]
        for tensor, side in ((h_dot[0], 4), (h_dot[-1], 16)):
            height, width = tensor.shape[2:]
            y0, x0, h, w = centered_window(height, width, side)
            inside = np.zeros((height, width), dtype=bool)
            inside[y0:y0 + h, x0:x0 + w] = True
            values = np.abs(tensor.data).sum(axis=(0, 1))
            self.assertFalse(np.any(values[~inside]))
            self.assertTrue(np.any(values[inside]))

    @number("3.15")
    def test_closed_mask_drops_alignment(self):
        lrs = clip(13, n=2)
        probes = []
        run(toy_model(), lrs, probes=probes)
        self.assertTrue(np.any(probes[1]["h_dot"][0].data))

        model = toy_model()
        mask = model.aggregators[0].mask
        mask.weight.data[...] = 0
        mask.bias.data[...] = -1e4
        probes = []
        outputs, _ = run(model, lrs, probes=probes)
        self.assertFalse(np.any(probes[1]["h_dot"][0].data))
        self.assertTrue(np.all(np.isfinite(outputs[1].data)))

    @number("3.16")
    def test_gradients_reach_every_group(self):
        model = toy_model()
        lrs = clip(14, n=2)
        target = Tensor(np.full((1, 3, HR, HR), 0.5))
        with GradientTape() as tape:
            tape.watch_all(model.params)
            outputs, _ = run(model, lrs)
            loss = (outputs[0] - target).square().mean() + (outputs[1] - target).square().mean()
        grads = tape.backward(loss)
        self.assertEqual(len(grads), len(model.params))
        for g in grads.values():
            self.assertTrue(np.all(np.isfinite(g)))
        self.assertTrue(np.any(grads["crfp.out.weight"]))
        self.assertTrue(any(np.any(g) for name, g in grads.items() if name.startswith("flow.")))
        self.assertTrue(np.any(grads["crfp.fa0.dcn.weight"]))


class TestCapacity(unittest.TestCase):

    @number("3.17")
    def test_full_size_counts(self):
        model = CrfpModel(CrfpConfig.full_scale())
        self.assertGreaterEqual(model.param_count(), 1_500_000)
        self.assertLessEqual(model.param_count(), 3_000_000)
        self.assertEqual(model.flow.param_count(), 35922)

    @number("3.18")
    def test_forward_path_by_split(self):
        counts = {split: CrfpModel(CrfpConfig(dsv_split=split)).forward_path_count()
                  for split in ((32, 0), (24, 8), (16, 16))}
        self.assertGreater(counts[(32, 0)], counts[(24, 8)])
        self.assertGreater(counts[(24, 8)], counts[(16, 16)])

    @number("3.19")
    def test_flow_propagation_switch(self):
        rng = np.random.Generator(np.random.PCG64(19))
        lrs = clip(19, n=2)
        plain = toy_model(flow_propagation=False)
        full = toy_model()
        shape = plain.encode_lr(lrs[0]).shape
        flow = Tensor(rng.normal(scale=0.5, size=(1, 2) + shape[2:]))
        first = Tensor(rng.normal(size=shape))
        second = Tensor(rng.normal(size=shape))

        def aggregate(model, d_prev):
            state = model.reset_state(lrs[0])
            h = model.encode_lr(lrs[1])
            feedback_ds = model.downsample(state.feedback)
            return model.feature_aggregate(0, h, feedback_ds, feedback_ds, flow, d_prev,
                                           state.dsv[0])

        for a, b in zip(aggregate(plain, first), aggregate(plain, second)):
            np.testing.assert_array_equal(a.data, b.data)
        self.assertFalse(np.array_equal(aggregate(full, first)[1].data,
                                        aggregate(full, second)[1].data))

        self.assertLess(plain.param_count(), full.param_count())
        self.assertNotIn("crfp.up4_d.weight", plain.params)
        self.assertIn("crfp.up4_d.weight", full.params)
        outputs, state = run(plain, clip(20, n=3))
        self.assertEqual(outputs[-1].shape, (1, 3, HR, HR))
        self.assertTrue(np.all(np.isfinite(state.feedback.data)))


if __name__ == '__main__':
    unittest.main()
