import numpy as np
import pytest

from fftmix import numerics as nx
from fftmix.numerics import GradTape, Tensor, circular_convolve, fft, grad_check


def dft_direct(x: np.ndarray) -> np.ndarray:
    """O(N^2) reference DFT."""
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * kk * k / n)) for kk in range(n)])


def circ_direct_1d(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    y = np.zeros_like(x)
    for s in range(len(x)):
        y += x[s] * np.roll(h, s)
    return y


def circ_direct_2d(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    ny, nxx = x.shape
    y = np.zeros_like(x)
    for sy in range(ny):
        for sx in range(nxx):
            y += x[sy, sx] * np.roll(np.roll(h, sy, axis=0), sx, axis=1)
    return y


class TestFFT:
    def test_impulse_spectrum_all_ones(self):
        spec = fft(np.array([1.0, 0.0, 0.0, 0.0]), dims=[0])
        assert np.allclose(spec.values, 1.0, atol=1e-14)

    def test_constant_dc_bin(self):
        n, c = 9, 2.5
        spec = fft(np.full(n, c), dims=[0])
        assert abs(spec.values[0] - n * c) < 1e-12
        assert np.abs(spec.values[1:]).max() < 1e-12

    @pytest.mark.parametrize("n", [63, 111, 127])
    def test_matches_direct_dft(self, rng, n):
        x = rng.normal(size=n)
        spec = fft(x, dims=[0]).values
        assert np.abs(spec - dft_direct(x)).max() < 1e-10

    @pytest.mark.parametrize("n", [8, 63, 111, 127])
    def test_inverse_roundtrip(self, rng, n):
        x = rng.normal(size=n)
        back = fft(fft(x, dims=[0]), dims=[0], inverse=True).values
        assert np.abs(back - x).max() / np.abs(x).max() < 1e-12

    @pytest.mark.parametrize("n", [8, 63, 111, 127])
    def test_parseval(self, rng, n):
        x = rng.normal(size=n)
        spec = fft(x, dims=[0]).values
        lhs = np.sum(x**2)
        rhs = np.sum(np.abs(spec) ** 2) / n
        assert abs(lhs - rhs) / lhs < 1e-10

    def test_interleaved_layout(self, rng):
        x = rng.normal(size=10)
        spec = fft(x, dims=[0])
        inter = spec.interleaved()
        assert inter.shape == (10, 2)
        assert np.array_equal(inter[:, 0], spec.values.real)
        assert np.array_equal(inter[:, 1], spec.values.imag)

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            fft(rng.normal(size=4), dims=[])
        with pytest.raises(ValueError):
            fft(rng.normal(size=4), dims=[3])


class TestCircularConvolve:
    def test_impulse_reproduces_kernel(self):
        y = circular_convolve(Tensor([1.0, 0, 0, 0]), Tensor([1.0, 2, 3, 4]), dims=[0])
        assert np.allclose(y.data, [1, 2, 3, 4], atol=1e-13)

    def test_all_ones(self):
        y = circular_convolve(Tensor([1.0, 1, 1, 1]), Tensor([1.0, 1, 1, 1]), dims=[0])
        assert np.allclose(y.data, 4.0, atol=1e-13)

    def test_random_1d_vs_direct(self, rng):
        x, h = rng.normal(size=64), rng.normal(size=64)
        y = circular_convolve(Tensor(x), Tensor(h), dims=[0]).data
        assert np.abs(y - circ_direct_1d(x, h)).max() < 1e-10

    def test_random_2d_vs_direct(self, rng):
        x, h = rng.normal(size=(9, 13)), rng.normal(size=(9, 13))
        y = circular_convolve(Tensor(x), Tensor(h), dims=[0, 1]).data
        assert np.abs(y - circ_direct_2d(x, h)).max() < 1e-10

    @pytest.mark.parametrize("n", [111, 6271])
    def test_paper_lengths_vs_direct(self, rng, n):
        # Odd lengths used by the stage kernels (6271 is prime).
        x, h = rng.normal(size=n), rng.normal(size=n)
        y = circular_convolve(Tensor(x), Tensor(h), dims=[0]).data
        assert np.abs(y - circ_direct_1d(x, h)).max() < 1e-9

    def test_commutative(self, rng):
        x, h = rng.normal(size=33), rng.normal(size=33)
        a = circular_convolve(Tensor(x), Tensor(h), dims=[0]).data
        b = circular_convolve(Tensor(h), Tensor(x), dims=[0]).data
        assert np.abs(a - b).max() < 1e-12

    def test_linear(self, rng):
        x, z, h = rng.normal(size=17), rng.normal(size=17), rng.normal(size=17)
        a, b = 1.7, -0.3
        lhs = circular_convolve(Tensor(a * x + b * z), Tensor(h), dims=[0]).data
        rhs = a * circular_convolve(Tensor(x), Tensor(h), dims=[0]).data
        rhs = rhs + b * circular_convolve(Tensor(z), Tensor(h), dims=[0]).data
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_batch_broadcasting(self, rng):
        x = rng.normal(size=(5, 12, 3))
        h = rng.normal(size=(12, 3))
        y = circular_convolve(Tensor(x), Tensor(h), dims=[-2]).data
        for b in range(5):
            for c in range(3):
                ref = circ_direct_1d(x[b, :, c], h[:, c])
                assert np.abs(y[b, :, c] - ref).max() < 1e-10

    def test_length_mismatch_error(self, rng):
        with pytest.raises(ValueError):
            circular_convolve(Tensor(rng.normal(size=8)), Tensor(rng.normal(size=7)), dims=[0])


class TestTapeAndVjp:
    def test_scaling_vjp(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with GradTape() as tape:
            y = nx.mul(x, 2.0)
        node = tape.nodes[-1]
        grads = node.vjp(np.ones(3))
        assert np.array_equal(grads[0], np.full(3, 2.0))

    def test_conv_with_impulse_passes_gradient(self, rng):
        x = Tensor(rng.normal(size=6), requires_grad=True)
        h = Tensor([1.0, 0, 0, 0, 0, 0])
        g = rng.normal(size=6)
        with GradTape() as tape:
            y = circular_convolve(x, h, dims=[0])
        (gx,) = [t.data for t in tape.gradient(y, [x], upstream=g)]
        assert np.abs(gx - g).max() < 1e-12

    def test_unused_input_gets_exact_zero(self, rng):
        x = Tensor(rng.normal(size=4), requires_grad=True)
        z = Tensor(rng.normal(size=4), requires_grad=True)
        with GradTape() as tape:
            y = nx.tensor_sum(nx.square(x))
        gx, gz = tape.gradient(y, [x, z])
        assert np.abs(gx.data - 2 * x.data).max() < 1e-12
        assert np.array_equal(gz.data, np.zeros(4))

    def test_tape_consumed_twice_errors(self, rng):
        x = Tensor(rng.normal(size=4), requires_grad=True)
        with GradTape() as tape:
            y = nx.tensor_sum(x)
        tape.gradient(y, [x])
        with pytest.raises(RuntimeError):
            tape.gradient(y, [x])

    def test_reverse_topological_replay(self, rng):
        # Recording order is a topological order; replay must be its reverse.
        x = Tensor(rng.normal(size=3), requires_grad=True)
        with GradTape() as tape:
            a = nx.mul(x, 2.0)
            b = nx.add(a, 1.0)
            c = nx.tensor_sum(b)
        ops = [n.op for n in tape.nodes]
        assert ops == ["mul", "add", "sum"]
        (gx,) = tape.gradient(c, [x])
        assert np.allclose(gx.data, 2.0)

    def test_nested_tape_rejected(self):
        with GradTape():
            with pytest.raises(RuntimeError):
                with GradTape():
                    pass

    def test_non_finite_tensor_rejected(self):
        with pytest.raises(ValueError):
            Tensor([1.0, np.inf])
        with pytest.raises(ValueError):
            Tensor([np.nan])


class TestGradCheck:
    def test_quadratic_is_machine_exact(self, rng):
        err = grad_check(lambda x: nx.tensor_sum(nx.square(x)), [Tensor(rng.normal(size=20))])
        assert err < 1e-8

    def test_requires_scalar(self, rng):
        with pytest.raises(ValueError):
            grad_check(lambda x: nx.square(x), [Tensor(rng.normal(size=3))])

    def test_eps_validation(self, rng):
        with pytest.raises(ValueError):
            grad_check(lambda x: nx.tensor_sum(x), [Tensor(rng.normal(size=3))], eps=0.5)

    @pytest.mark.parametrize(
        "name,f,shapes",
        [
            ("add", lambda a, b: nx.tensor_sum(nx.square(nx.add(a, b))), [(4, 3), (3,)]),
            ("sub", lambda a, b: nx.tensor_sum(nx.square(nx.sub(a, b))), [(4,), (4,)]),
            ("mul", lambda a, b: nx.tensor_sum(nx.mul(a, b)), [(5,), (5,)]),
            ("div", lambda a, b: nx.tensor_sum(nx.div(a, b)), [(4,), (4,)]),
            ("exp", lambda a: nx.tensor_sum(nx.exp(a)), [(6,)]),
            ("log", lambda a: nx.tensor_sum(nx.log(nx.add(nx.square(a), 1.0))), [(6,)]),
            ("sin", lambda a: nx.tensor_sum(nx.sin(a)), [(6,)]),
            ("sqrt", lambda a: nx.tensor_sum(nx.sqrt(nx.add(nx.square(a), 0.5))), [(6,)]),
            ("matmul", lambda a, b: nx.tensor_sum(nx.square(nx.matmul(a, b))), [(3, 4), (4, 2)]),
            ("mean", lambda a: nx.mean(nx.square(a)), [(4, 5)]),
            ("sum_axis", lambda a: nx.tensor_sum(nx.square(nx.tensor_sum(a, axis=0))), [(3, 4)]),
            ("reshape", lambda a: nx.tensor_sum(nx.square(nx.reshape(a, (6,)))), [(2, 3)]),
            ("pad", lambda a: nx.tensor_sum(nx.square(nx.pad(a, [(1, 2)]))), [(5,)]),
            ("crop", lambda a: nx.tensor_sum(nx.square(nx.crop(a, [slice(1, 4)]))), [(6,)]),
            ("roll", lambda a: nx.tensor_sum(nx.mul(nx.roll(a, 2, 0), a)), [(5,)]),
            ("transpose", lambda a: nx.tensor_sum(nx.square(nx.transpose(a, (1, 0)))), [(3, 4)]),
        ],
    )
    def test_primitive_gradients(self, rng, name, f, shapes):
        inputs = [Tensor(rng.normal(size=s)) for s in shapes]
        assert grad_check(f, inputs) < 1e-5, name

    def test_relu_gradient_away_from_kink(self, rng):
        x = rng.normal(size=12)
        x[np.abs(x) < 0.1] += 0.3
        err = grad_check(lambda a: nx.tensor_sum(nx.square(nx.relu(a))), [Tensor(x)])
        assert err < 1e-5

    def test_conv_gradients(self, rng):
        f = lambda a, b: nx.tensor_sum(nx.square(circular_convolve(a, b, dims=[0])))
        assert grad_check(f, [Tensor(rng.normal(size=9)), Tensor(rng.normal(size=9))]) < 1e-5
        f2 = lambda a, b: nx.tensor_sum(nx.square(nx.causal_convolve(a, b, axis=-2)))
        assert grad_check(f2, [Tensor(rng.normal(size=(7, 2))), Tensor(rng.normal(size=(3, 2)))]) < 1e-5
        offs = [(-1,), (0,), (1,)]
        f3 = lambda a, w: nx.tensor_sum(nx.square(nx.shift_convolve(a, w, offs, (-2,))))
        assert grad_check(f3, [Tensor(rng.normal(size=(6, 2))), Tensor(rng.normal(size=(3, 2)))]) < 1e-5

    def test_strided_conv_gradient(self, rng):
        x = Tensor(rng.normal(size=(1, 8, 8, 2)))
        w = Tensor(rng.normal(size=(3, 3, 2, 4)))
        b = Tensor(rng.normal(size=4))
        f = lambda xx, ww, bb: nx.tensor_sum(nx.square(nx.strided_conv2d(xx, ww, bb, 2, 1)))
        assert grad_check(f, [x, w, b]) < 1e-5

    def test_subsampling_above_threshold_is_seeded(self, rng):
        x = Tensor(rng.normal(size=30))
        f = lambda a: nx.tensor_sum(nx.square(a))
        e1 = grad_check(f, [x], max_coords=10)
        e2 = grad_check(f, [x], max_coords=10)
        assert e1 == e2
