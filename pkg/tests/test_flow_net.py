import unittest

import numpy as np

from ed_utils.decorators import number
from errors import ConfigurationError
from flow_net import FLOW_GROUP, FlowNet, build_flow_net, flow_forward, padded_flow
from tensor_engine import GradientTape, ParameterSet, Tensor


def frames(seed, shape=(1, 3, 8, 8)):
    rng = np.random.Generator(np.random.PCG64(seed))
    return Tensor(rng.uniform(size=shape)), Tensor(rng.uniform(size=shape))


class TestFlowNet(unittest.TestCase):

    @number("2.1")
    def test_parameter_count(self):
        net = build_flow_net(channels=16)
        self.assertEqual(net.param_count(), 35922)
        self.assertEqual(len(net.params.group(FLOW_GROUP)), 28)

    @number("2.2")
    def test_shape_and_bound(self):
        net = build_flow_net(channels=8, flow_range=3.0)
        x_t, x_prev = frames(0, (2, 3, 16, 8))
        flow = net(x_t, x_prev)
        self.assertEqual(flow.shape, (2, 2, 16, 8))
        self.assertTrue(np.all(np.abs(flow.data) <= 3.0))
        self.assertTrue(np.all(np.isfinite(flow.data)))

    @number("2.3")
    def test_rejects_bad_frames(self):
        net = build_flow_net(channels=4)
        x_t, x_prev = frames(1, (1, 3, 12, 8))
        with self.assertRaises(ConfigurationError):
            flow_forward(net, x_t, x_prev)
        with self.assertRaises(ConfigurationError):
            flow_forward(net, frames(2)[0], Tensor(np.zeros((1, 3, 16, 8))))
        with self.assertRaises(ConfigurationError):
            flow_forward(net, Tensor(np.zeros((1, 1, 8, 8))), Tensor(np.zeros((1, 1, 8, 8))))
        with self.assertRaises(ConfigurationError):
            build_flow_net(channels=4, flow_range=0.0)

    @number("2.4")
    def test_padded_flow_any_size(self):
        net = build_flow_net(channels=4)
        x_t, x_prev = frames(3, (1, 3, 6, 10))
        self.assertEqual(padded_flow(net, x_t, x_prev).shape, (1, 2, 6, 10))
        x_t, x_prev = frames(4)
        np.testing.assert_array_equal(padded_flow(net, x_t, x_prev).data,
                                      flow_forward(net, x_t, x_prev).data)

    @number("2.5")
    def test_seeded(self):
        x_t, x_prev = frames(5)
        first = build_flow_net(channels=4, seed=11)(x_t, x_prev).data
        second = build_flow_net(channels=4, seed=11)(x_t, x_prev).data
        other = build_flow_net(channels=4, seed=12)(x_t, x_prev).data
        np.testing.assert_array_equal(first, second)
        self.assertFalse(np.array_equal(first, other))

    @number("2.6")
    def test_shared_registry_and_gradients(self):
        params = ParameterSet(seed=0)
        params.conv("crfp.other", 3, 3)
        net = FlowNet(params, 4, 10.0)
        self.assertEqual(net.param_count(), params.count() - params.count("crfp"))
        x_t, x_prev = frames(6)
        with GradientTape() as tape:
            tape.watch_all(params.group(FLOW_GROUP))
            loss = net(x_t, x_prev).square().mean()
        grads = tape.backward(loss)
        self.assertEqual(set(grads), set(params.group(FLOW_GROUP)))
        for g in grads.values():
            self.assertTrue(np.all(np.isfinite(g)))
        self.assertTrue(np.any(grads["flow.head.1.weight"] != 0))


if __name__ == '__main__':
    unittest.main()
