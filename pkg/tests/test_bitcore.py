import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bibit import bitcore as bc
from bibit.errors import DomainError, ShapeError

PM1 = st.sampled_from([-1.0, 1.0])


def pm1_matrix(rows, cols):
    return hnp.arrays(np.float64, (rows, cols), elements=PM1)


@st.composite
def gemm_operands(draw, max_dim=130):
    m = draw(st.integers(1, 12))
    k = draw(st.integers(1, max_dim))
    n = draw(st.integers(1, 12))
    a = draw(pm1_matrix(m, k))
    b = draw(pm1_matrix(n, k))
    return a, b


@st.composite
def bamm_operands(draw, max_dim=130):
    m = draw(st.integers(1, 10))
    k = draw(st.integers(1, max_dim))
    n = draw(st.integers(1, 10))
    a = draw(hnp.arrays(np.float64, (m, k), elements=st.sampled_from([0.0, 1.0])))
    v = draw(pm1_matrix(k, n))
    return a, v


class TestPacking:
    @given(st.integers(1, 5).flatmap(lambda r: st.integers(0, 200).flatmap(lambda c: pm1_matrix(r, c))))
    def test_roundtrip_pm1(self, x):
        assert np.array_equal(bc.pack(x).unpack(), x)

    @given(st.integers(1, 5).flatmap(lambda r: st.integers(1, 200).flatmap(
        lambda c: hnp.arrays(np.float64, (r, c), elements=st.sampled_from([0.0, 1.0])))))
    def test_roundtrip_zero_one(self, x):
        assert np.array_equal(bc.pack(x, bc.Encoding.ZERO_ONE).unpack(), x)

    def test_layout_lsb_first(self):
        x = -np.ones((1, 70))
        x[0, 0] = x[0, 65] = 1.0
        m = bc.pack(x)
        assert m.words.shape == (1, 2)
        assert int(m.words[0, 0]) == 1
        assert int(m.words[0, 1]) == 2

    def test_padding_bits_zero(self):
        m = bc.pack(np.ones((3, 65)))
        assert int(m.words[0, 1]) == 1

    def test_sign_of_real_values(self):
        m = bc.pack(np.array([[-0.5, 0.0, 2.0]]))
        assert np.array_equal(m.unpack(), [[-1.0, 1.0, 1.0]])

    def test_bool_input(self):
        m = bc.pack(np.array([[True, False]]), bc.Encoding.ZERO_ONE)
        assert np.array_equal(m.unpack(), [[1.0, 0.0]])

    def test_transpose(self, rng):
        x = rng.choice([-1.0, 1.0], size=(7, 131))
        assert np.array_equal(bc.transpose(bc.pack(x)).unpack(), x.T)

    def test_words_read_only(self):
        m = bc.pack(np.ones((2, 3)))
        with pytest.raises(ValueError):
            m.words[0, 0] = 0

    def test_equality(self):
        x = np.ones((2, 3))
        assert bc.pack(x) == bc.pack(x)
        assert bc.pack(x) != bc.pack(-x)

    @pytest.mark.parametrize("bad", [np.ones(3), np.ones((2, 2, 2))])
    def test_rejects_non_matrix(self, bad):
        with pytest.raises(ShapeError):
            bc.pack(bad)

    def test_rejects_nan(self):
        with pytest.raises(DomainError):
            bc.pack(np.array([[np.nan]]))

    def test_zero_one_rejects_other_values(self):
        with pytest.raises(DomainError):
            bc.pack(np.array([[0.5]]), bc.Encoding.ZERO_ONE)

    def test_bad_word_shape(self):
        with pytest.raises(ShapeError):
            bc.PackedBitMatrix(2, 65, bc.Encoding.PLUS_MINUS_ONE, np.zeros((2, 1), dtype=np.uint64))


class TestXnorMatmul:
    @given(gemm_operands())
    def test_equals_float_gemm(self, ab):
        a, b = ab
        for backend in bc.available_backends():
            got = bc.xnor_matmul(bc.pack(a), bc.pack(b), backend=backend)
            assert got.dtype == np.int32
            assert np.array_equal(got, (a @ b.T).astype(np.int32))

    @pytest.mark.parametrize("k", [1, 63, 64, 65, 128, 129, 256])
    def test_word_boundaries(self, backend, rng, k):
        a = rng.choice([-1.0, 1.0], size=(5, k))
        b = rng.choice([-1.0, 1.0], size=(4, k))
        assert np.array_equal(bc.xnor_matmul(bc.pack(a), bc.pack(b), backend), a @ b.T)

    def test_self_product_diagonal(self, backend, rng):
        a = rng.choice([-1.0, 1.0], size=(6, 77))
        out = bc.xnor_matmul(bc.pack(a), bc.pack(a), backend)
        assert np.all(np.diag(out) == 77)

    def test_inner_mismatch(self, backend):
        with pytest.raises(ShapeError):
            bc.xnor_matmul(bc.pack(np.ones((2, 3))), bc.pack(np.ones((2, 4))), backend)

    def test_encoding_checked(self, backend):
        z = bc.pack(np.ones((2, 3)), bc.Encoding.ZERO_ONE)
        with pytest.raises(DomainError):
            bc.xnor_matmul(z, bc.pack(np.ones((2, 3))), backend)

    def test_unknown_backend(self):
        with pytest.raises(DomainError):
            bc.xnor_matmul(bc.pack(np.ones((1, 1))), bc.pack(np.ones((1, 1))), backend="gpu")


class TestBamm:
    @given(bamm_operands())
    def test_equals_bool_product(self, av):
        a, v = av
        for backend in bc.available_backends():
            got = bc.bamm(bc.pack(a, bc.Encoding.ZERO_ONE), bc.pack(v), backend=backend)
            assert np.array_equal(got, a @ v)

    @given(bamm_operands())
    def test_presum_is_even_and_twice_product(self, av):
        a, v = av
        pre = bc.bamm_presum(bc.pack(a, bc.Encoding.ZERO_ONE), bc.pack(v))
        assert np.all(pre % 2 == 0)
        assert np.array_equal(pre, 2 * (a @ v))

    def test_all_zero_attention(self, backend, rng):
        v = rng.choice([-1.0, 1.0], size=(9, 3))
        out = bc.bamm(bc.pack(np.zeros((2, 9)), bc.Encoding.ZERO_ONE), bc.pack(v), backend)
        assert np.all(out == 0)

    def test_all_one_attention_is_column_sum(self, backend, rng):
        v = rng.choice([-1.0, 1.0], size=(70, 3))
        out = bc.bamm(bc.pack(np.ones((2, 70)), bc.Encoding.ZERO_ONE), bc.pack(v), backend)
        assert np.array_equal(out[0], bc.column_sums(bc.pack(v)))

    def test_encodings_checked(self, backend):
        with pytest.raises(DomainError):
            bc.bamm(bc.pack(np.ones((2, 3))), bc.pack(np.ones((3, 2))), backend)
        with pytest.raises(DomainError):
            bc.bamm(bc.pack(np.ones((2, 3)), bc.Encoding.ZERO_ONE),
                    bc.pack(np.ones((3, 2)), bc.Encoding.ZERO_ONE), backend)

    def test_inner_mismatch(self, backend):
        with pytest.raises(ShapeError):
            bc.bamm(bc.pack(np.ones((2, 3)), bc.Encoding.ZERO_ONE), bc.pack(np.ones((4, 2))), backend)


class TestBackends:
    def test_python_always_available(self):
        assert "python" in bc.available_backends()
        assert bc.BACKEND in bc.available_backends()

    def test_backends_agree_on_large_input(self, rng):
        a = rng.choice([-1.0, 1.0], size=(64, 256))
        b = rng.choice([-1.0, 1.0], size=(48, 256))
        outs = [bc.xnor_matmul(bc.pack(a), bc.pack(b), be) for be in bc.available_backends()]
        for o in outs[1:]:
            assert np.array_equal(o, outs[0])
