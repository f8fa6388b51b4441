import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from moe import autodiff as ad
from moe.exceptions import ContractError, DimensionError, NonFiniteError
from moe.gradcheck import check_gradients, relative_error


def weighted(out, rng):
    """A scalar that depends on every output entry with a distinct weight."""
    return ad.sum(ad.mul(out, ad.Tensor(rng.normal(size=out.shape))))


def frozen(fn, rng):
    """Fix the random projection so FD and backward see the same loss."""
    state = rng.bit_generator.state

    def loss():
        rng.bit_generator.state = state
        return fn()
    return loss


def _case(rng, name):
    t = lambda *shape: ad.Tensor(rng.normal(size=shape), name=name)  # noqa: E731
    if name == 'matmul2d':
        a, b = t(3, 4), t(4, 2)
        return lambda: ad.matmul(a, b), [a, b]
    if name == 'matmul3d':
        a, b = t(2, 3, 4), t(2, 4, 3)
        return lambda: ad.matmul(a, b), [a, b]
    if name == 'matmul3d2d':
        a, b = t(2, 3, 4), t(4, 2)
        return lambda: ad.matmul(a, b), [a, b]
    if name == 'add':
        a, b = t(3, 4), t(4)
        return lambda: ad.add(a, b), [a, b]
    if name == 'sub':
        a, b = t(2, 3, 4), t(3, 4)
        return lambda: ad.sub(a, b), [a, b]
    if name == 'mul':
        a, b = t(3, 4), t(3, 4)
        return lambda: ad.mul(a, b), [a, b]
    if name == 'scale':
        a = t(5)
        return lambda: ad.scale(a, -2.5), [a]
    if name == 'sigmoid':
        a = t(3, 3)
        return lambda: ad.sigmoid(a), [a]
    if name == 'silu':
        a = t(3, 3)
        return lambda: ad.silu(a), [a]
    if name == 'softmax':
        a = t(3, 4)
        return lambda: ad.softmax(a, axis=0), [a]
    if name == 'normalize_rows':
        a = ad.Tensor(rng.uniform(0.5, 2.0, size=(3, 4)))
        return lambda: ad.normalize_rows(a), [a]
    if name == 'sum':
        a = t(3, 4)
        return lambda: ad.sum(a, axis=1), [a]
    if name == 'mean':
        a = t(2, 3, 4)
        return lambda: ad.mean(a, axis=1), [a]
    if name == 'layer_norm':
        a, g, b = t(4, 5), t(5), t(5)
        return lambda: ad.layer_norm(a, g, b), [a, g, b]
    if name == 'embedding_lookup':
        table = t(6, 3)
        ids = rng.integers(0, 6, size=8)
        return lambda: ad.embedding_lookup(table, ids), [table]
    if name == 'take_rows':
        a = t(5, 3)
        index = rng.integers(0, 5, size=7)
        return lambda: ad.take_rows(a, index), [a]
    if name == 'take':
        a = t(4, 3)
        rows, cols = rng.integers(0, 4, size=6), rng.integers(0, 3, size=6)
        return lambda: ad.take(a, rows, cols), [a]
    if name == 'scale_rows':
        a, w = t(4, 3), t(4)
        return lambda: ad.scale_rows(a, w), [a, w]
    if name == 'scatter_rows':
        a = t(4, 3)
        index = rng.integers(0, 6, size=4)
        return lambda: ad.scatter_rows(a, index, 6), [a]
    if name == 'reshape':
        a = t(2, 6)
        return lambda: ad.reshape(a, (3, 4)), [a]
    if name == 'transpose':
        a = t(2, 3, 4)
        return lambda: ad.transpose(a, (1, 2, 0)), [a]
    raise AssertionError(name)


OPS = ['matmul2d', 'matmul3d', 'matmul3d2d', 'add', 'sub', 'mul', 'scale', 'sigmoid', 'silu', 'softmax',
       'normalize_rows', 'sum', 'mean', 'layer_norm', 'embedding_lookup', 'take_rows', 'take', 'scale_rows',
       'scatter_rows', 'reshape', 'transpose']


class ForwardValueTests(SimpleTestCase):

    def test_matmul_identity(self):
        out = ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor([[1, 2], [3, 4]]))
        assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_matmul_annihilating(self):
        out = ad.matmul(ad.Tensor([[1, 0], [0, 0]]), ad.Tensor([[0, 0], [0, 1]]))
        assert_array_equal(out.data, np.zeros((2, 2)))

    def test_sigmoid_of_zero(self):
        self.assertEqual(ad.sigmoid(ad.Tensor(0.0)).item(), 0.5)

    def test_softmax_of_constant_row_is_uniform(self):
        for c in (-50.0, 0.0, 3.7, 800.0):
            assert_allclose(ad.softmax(ad.Tensor([c, c, c])).data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_cross_entropy_matches_scalar_loop(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(5, 7))
        targets = rng.integers(0, 7, size=5)
        expected = np.mean([np.log(np.exp(row).sum()) - row[y] for row, y in zip(logits, targets)])
        self.assertAlmostEqual(ad.cross_entropy(ad.Tensor(logits), targets).item(), expected, places=12)

    def test_ops_without_tape_are_constants(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        out = ad.sum(ad.mul(x, x))
        self.assertFalse(out.requires_grad)


class BackwardTests(SimpleTestCase):

    def test_sum_gradient_is_ones(self):
        x = ad.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with ad.Tape():
            loss = ad.sum(x)
        ad.backward(loss)
        assert_array_equal(x.grad, np.ones((2, 3)))

    def test_sum_of_squares_gradient(self):
        x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with ad.Tape():
            loss = ad.sum(ad.mul(x, x))
        ad.backward(loss)
        assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_reused_tensor_accumulates_single_use_gradients(self):
        rng = np.random.default_rng(11)
        x = ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        weights = [ad.Tensor(rng.normal(size=(3, 2))) for _ in range(3)]
        singles = []
        for w in weights:
            x.zero_grad()
            with ad.Tape():
                loss = ad.sum(ad.mul(x, w))
            ad.backward(loss)
            singles.append(x.grad.copy())
        x.zero_grad()
        with ad.Tape():
            loss = ad.sum(ad.mul(x, weights[0]))
            for w in weights[1:]:
                loss = ad.add(loss, ad.sum(ad.mul(x, w)))
        ad.backward(loss)
        assert_allclose(x.grad, singles[0] + singles[1] + singles[2], rtol=0, atol=1e-15)

    def test_backward_requires_scalar(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        with ad.Tape():
            out = ad.scale(x, 2.0)
        with self.assertRaises(ContractError):
            ad.backward(out)

    def test_tape_visits_each_operation_once(self):
        x = ad.Tensor([1.0, -1.0], requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum(ad.sigmoid(ad.scale(x, 3.0)))
        self.assertEqual(len(tape), 3)
        ad.backward(loss)
        s = 1 / (1 + np.exp(-3.0 * x.data))
        assert_allclose(x.grad, 3.0 * s * (1 - s), rtol=1e-12)

    def test_identical_seeds_give_identical_buffers(self):
        grads = []
        for _ in range(2):
            rng = np.random.default_rng(5)
            a, b = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True), ad.Tensor(rng.normal(size=(3, 2)))
            with ad.Tape():
                loss = ad.cross_entropy(ad.matmul(a, b), [0, 1, 1, 0])
            ad.backward(loss)
            grads.append((loss.item(), a.grad.copy()))
        self.assertEqual(grads[0][0], grads[1][0])
        assert_array_equal(grads[0][1], grads[1][1])


class GradientCheckTests(SimpleTestCase):

    def test_wrong_small_entry_is_flagged(self):
        self.assertGreater(relative_error([1.0, 1e-6], [1.0, -1e-6]), 1e-6)
        self.assertGreater(relative_error([1.0, 0.05], [1.0, 0.04]), 0.1)

    def test_relative_error_is_per_entry(self):
        self.assertEqual(relative_error([2.0, -3.0], [2.0, -3.0]), 0.0)
        self.assertAlmostEqual(relative_error([100.0, 0.5], [100.0, 0.501]), 0.001 / 0.501, places=12)
        self.assertLess(relative_error([0.0, 1e-12], [1e-11, 0.0]), 1e-6)
        with self.assertRaises(DimensionError):
            relative_error([1.0], [1.0, 2.0])

    def test_matmul_gradient_against_finite_differences(self):
        rng = np.random.default_rng(0)
        a, b = ad.Tensor(rng.normal(size=(3, 3))), ad.Tensor(rng.normal(size=(3, 3)))
        self.assertLess(check_gradients(lambda: ad.sum(ad.matmul(a, b)), [a, b]), 1e-6)

    def test_cross_entropy_gradient_against_finite_differences(self):
        rng = np.random.default_rng(1)
        logits = ad.Tensor(rng.normal(size=(6, 5)))
        targets = rng.integers(0, 5, size=6)
        self.assertLess(check_gradients(lambda: ad.cross_entropy(logits, targets), [logits]), 1e-6)

    def test_every_op_on_random_inputs(self):
        rng = np.random.default_rng(2024)
        cases = 0
        for trial in range(5):
            for name in OPS:
                build, tensors = _case(rng, name)
                loss = frozen(lambda: weighted(build(), rng), rng)
                with self.subTest(op=name, trial=trial):
                    self.assertLess(check_gradients(loss, tensors), 1e-6)
                cases += 1
        self.assertGreaterEqual(cases, 100)


class ContractTests(SimpleTestCase):

    def test_non_finite_values_are_rejected(self):
        with self.assertRaises(NonFiniteError):
            ad.Tensor([1.0, np.nan])

    def test_non_finite_checks_can_be_disabled(self):
        ad.set_finite_checks(False)
        try:
            self.assertTrue(np.isinf(ad.Tensor([np.inf]).data[0]))
        finally:
            ad.set_finite_checks(True)

    def test_overflow_in_an_op_surfaces(self):
        with self.assertRaises(NonFiniteError):
            ad.mul(ad.Tensor([1e200]), ad.Tensor([1e200]))

    def test_shape_errors(self):
        with self.assertRaises(DimensionError):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))
        with self.assertRaises(DimensionError):
            ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones(2)))
        with self.assertRaises(DimensionError):
            ad.softmax(ad.Tensor(np.ones(3)), axis=2)
        with self.assertRaises(DimensionError):
            ad.embedding_lookup(ad.Tensor(np.ones((4, 2))), [4])
