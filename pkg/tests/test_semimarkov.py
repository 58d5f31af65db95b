import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wismc.errors import UnreachableBackwardState
from wismc.index_process import IndexBins
from wismc.semimarkov import (BackwardState, IndexedKernel, KernelSampler, conditional_g,
                              embedded_p, kernel_increment, load_kernel, one_step_probs,
                              save_kernel, sojourn_cdf)
from wismc.synthetic import geometric_kernel


def half_geometric():
    """Uniform destinations, geometric(0.5) sojourn truncated at 8."""
    P = [[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]]
    return geometric_kernel(P, (0.5, 0.5, 0.5), 8)


def point_mass(s=3, t_max=6, j_of=lambda i: (i + 1) % 3, t=3):
    q = np.zeros((s, 1, s, t_max))
    for i in range(s):
        q[i, 0, j_of(i), t - 1] = 1.0
    return IndexedKernel.from_increments(q)


@st.composite
def kernels(draw, max_s=4, max_levels=3, max_t=6):
    s = draw(st.integers(2, max_s))
    levels = draw(st.integers(1, max_levels))
    t_max = draw(st.integers(1, max_t))
    seed = draw(st.integers(0, 2**32 - 1))
    q = np.random.default_rng(seed).random((s, levels, s, t_max))
    q *= np.random.default_rng(seed + 1).random(q.shape) < 0.7
    for i in range(s):
        q[i, :, i] = 0.0
        q[i, :, (i + 1) % s, -1] += 1e-3  # every row populated
    bins = IndexBins(np.arange(1, levels, dtype=float))
    return IndexedKernel.from_increments(q, bins)


class TestDerived:
    def test_point_mass_embedded(self):
        k = point_mass()
        p = embedded_p(k)
        assert p[0, 0, 1] == 1.0 and p[2, 0, 0] == 1.0

    def test_point_mass_cdf(self):
        assert sojourn_cdf(point_mass())[0, 0].tolist() == [0, 0, 1, 1, 1, 1]

    def test_half_geometric(self):
        k = half_geometric()
        norm = 1 - 0.5 ** 8
        assert np.allclose(embedded_p(k)[0, 0], [0, 0.5, 0.5])
        H = sojourn_cdf(k)[1, 0]
        assert H[0] == pytest.approx(0.5 / norm) and H[1] == pytest.approx(0.75 / norm)
        assert H[-1] == pytest.approx(1.0, abs=1e-15)
        t = np.arange(1, 9)
        G = conditional_g(k)[0, 0, 2]
        assert np.allclose(G, (1 - 0.5 ** t) / norm)
        for tt in t:
            assert kernel_increment(k, 0, 0, 1, int(tt)) == pytest.approx(0.5 * 0.5 ** tt / norm)

    def test_g_is_one_without_mass(self):
        q = np.zeros((3, 1, 3, 4))
        q[0, 0, 1, 1] = 1
        q[1, 0, 0, 0] = 1
        q[2, 0, 0, 3] = 1
        G = conditional_g(IndexedKernel.from_increments(q))
        assert np.all(G[0, 0, 2] == 1.0)

    def test_g_equals_h_when_factorized(self):
        k = geometric_kernel()
        G, H = conditional_g(k), sojourn_cdf(k)
        for i in range(3):
            for j in range(3):
                if j != i:
                    assert np.allclose(G[i, 0, j], H[i, 0])

    def test_increment_t1(self):
        k = half_geometric()
        assert kernel_increment(k, 0, 0, 1, 1) == k.Q[0, 0, 1, 0]
        with pytest.raises(ValueError):
            kernel_increment(k, 0, 0, 1, 9)


class TestValidation:
    def test_virtual_transition(self):
        q = np.zeros((2, 1, 2, 2))
        q[0, 0, 0, 0] = 1
        with pytest.raises(ValueError, match="virtual"):
            IndexedKernel.from_increments(q)

    def test_levels_must_match(self):
        with pytest.raises(ValueError):
            IndexedKernel(half_geometric().Q, IndexBins(np.array([1.0])))


class TestOneStep:
    def test_deterministic_three(self):
        k = point_mass(t=3)
        assert one_step_probs(k, BackwardState(0, 0, 0)).stay_prob == 1.0
        assert one_step_probs(k, BackwardState(0, 1, 0)).stay_prob == 1.0
        d = one_step_probs(k, BackwardState(0, 2, 0))
        assert d.stay_prob == 0.0 and d.change_probs[1] == 1.0

    def test_unreachable(self):
        with pytest.raises(UnreachableBackwardState):
            one_step_probs(point_mass(t=3), BackwardState(0, 3, 0))

    def test_last_minute_forces_exit(self):
        k = half_geometric()
        assert one_step_probs(k, BackwardState(1, 7, 0)).stay_prob == 0.0

    def test_geometric_hazard(self):
        k = half_geometric()
        norm = 1 - 0.5 ** 8
        d = one_step_probs(k, BackwardState(0, 0, 0))
        # stay = P(T > 1) = (0.5 - 0.5**8) / norm
        assert d.stay_prob == pytest.approx((0.5 - 0.5 ** 8) / norm, abs=1e-15)
        assert d.change_probs[0] == 0.0

    @given(kernels())
    def test_normalized(self, k):
        for i in range(k.s):
            for v in range(k.levels):
                for u in range(k.t_max):
                    try:
                        d = one_step_probs(k, BackwardState(i, u, v))
                    except UnreachableBackwardState:
                        continue
                    assert abs(d.total - 1.0) < 1e-12
                    assert d.stay_prob >= 0 and np.all(d.change_probs >= 0)
                    assert d.as_vector()[i] == d.stay_prob

    @given(kernels())
    def test_rows_sum_to_one(self, k):
        assert np.allclose(embedded_p(k).sum(axis=2), 1.0, atol=1e-12)
        assert np.allclose(sojourn_cdf(k)[..., -1], 1.0, atol=1e-12)


class TestFallback:
    def counted(self, n):
        k = half_geometric()
        return IndexedKernel(k.Q, k.index_bins, np.array([[n], [n], [n]], dtype=float))

    def test_exact(self):
        d = KernelSampler(self.counted(1000)).query(BackwardState(0, 0, 0))
        assert d.tier == 0

    def test_pooled_over_levels(self):
        base = geometric_kernel()
        Q = np.repeat(base.Q, 2, axis=1)
        k = IndexedKernel(Q, IndexBins(np.array([1.0])), np.array([[0, 50], [50, 50], [50, 50]], float))
        d = KernelSampler(k).query(BackwardState(0, 0, 0))
        assert d.tier == 2
        assert d.total == pytest.approx(1.0, abs=1e-12)
        ref = one_step_probs(base, BackwardState(0, 0, 0))
        assert d.stay_prob == pytest.approx(ref.stay_prob)

    def test_global(self):
        d = KernelSampler(self.counted(1), min_count=5).query(BackwardState(2, 1, 0))
        assert d.tier == 4
        assert d.change_probs[2] == 0.0 and d.total == pytest.approx(1.0, abs=1e-12)

    def test_unreachable_backs_off(self):
        k = point_mass(t=3)
        d = KernelSampler(k).query(BackwardState(0, 4, 0))
        assert d.tier == 3 and d.total == pytest.approx(1.0, abs=1e-12)


class TestIO:
    @given(kernels())
    def test_roundtrip(self, k):
        import tempfile
        from pathlib import Path
        with tempfile.TemporaryDirectory() as d:
            path = save_kernel(k, Path(d) / "m.kernel", {"symbol": "X"})
            assert path.name == "m.kernel.json"
            k2, env = load_kernel(path)
        assert np.array_equal(k.Q, k2.Q)
        assert np.array_equal(k.index_bins.boundaries, k2.index_bins.boundaries)
        assert np.array_equal(k.n_context, k2.n_context)
        assert env["symbol"] == "X" and k.digest() == k2.digest()

    def test_checksum(self, tmp_path):
        path = save_kernel(half_geometric(), tmp_path / "k")
        b = tmp_path / "k.bin"
        raw = bytearray(b.read_bytes())
        raw[0] ^= 1
        b.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="checksum"):
            load_kernel(path)
