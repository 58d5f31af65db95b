import numpy as np
import pytest

from wismc.estimation import FollowerKernel
from wismc.index_process import IndexBins, IndexSpec, index_at_minutes, index_at_transitions
from wismc.market_data import BinSpec, StatePath
from wismc.semimarkov import IndexedKernel, sojourn_cdf
from wismc.simulation import (IndexTracker, SimConfig, SimTrace, default_warmup,
                              paths_to_returns, simulate_bivariate, simulate_event,
                              simulate_stepwise, streams)
from wismc.synthetic import (REPS3, clustering_model, copy_sign_follower, geometric_kernel,
                             independent_follower, truncated_geometric)

SP3 = IndexSpec(0.9, REPS3 ** 2)


def cycle_kernel(t=3):
    q = np.zeros((3, 1, 3, 5))
    for i in range(3):
        q[i, 0, (i + 1) % 3, t - 1] = 1.0
    return IndexedKernel.from_increments(q)


def sojourn_lengths(path: StatePath) -> np.ndarray:
    return np.diff(path.times)


def tv(a, b, support):
    pa = np.bincount(a, minlength=support) / len(a)
    pb = np.bincount(b, minlength=support) / len(b)
    return 0.5 * np.abs(pa - pb).sum()


class TestDeterministic:
    def test_periodic_event(self):
        z = simulate_event(cycle_kernel(), SP3, SimConfig(30, initial_state=1))
        assert z.states.tolist() == [1, 1, 1, 2, 2, 2, 0, 0, 0] * 3 + [1, 1, 1]

    def test_samplers_agree(self):
        for cfg in (SimConfig(31), SimConfig(17, seed=4, initial_state=2)):
            a = simulate_event(cycle_kernel(), SP3, cfg)
            b = simulate_stepwise(cycle_kernel(), SP3, cfg)
            assert np.array_equal(a.states, b.states)

    def test_forced_exit_at_t_max(self):
        q = np.zeros((2, 1, 2, 4))
        q[0, 0, 1] = [0.0, 0.0, 0.0, 1.0]
        q[1, 0, 0] = [0.0, 0.0, 0.0, 1.0]
        z = simulate_stepwise(IndexedKernel.from_increments(q), IndexSpec(0.9, np.array([0.0, 1.0])),
                              SimConfig(40))
        assert np.all(sojourn_lengths(z) == 4)


class TestSeeds:
    def test_same_seed(self):
        k = geometric_kernel()
        for sim in (simulate_event, simulate_stepwise):
            assert np.array_equal(sim(k, SP3, SimConfig(2000, seed=5)).states,
                                  sim(k, SP3, SimConfig(2000, seed=5)).states)
            assert not np.array_equal(sim(k, SP3, SimConfig(2000, seed=5)).states,
                                      sim(k, SP3, SimConfig(2000, seed=6)).states)

    def test_streams_independent(self):
        a, b = streams(1)
        assert a.random() != b.random()

    def test_warmup(self):
        assert default_warmup(0.97) == 334
        assert default_warmup(1.0) == 0


class TestLaws:
    def test_event_matches_kernel(self):
        k = geometric_kernel()
        z = simulate_event(k, SP3, SimConfig(700_000, seed=1))
        d = sojourn_lengths(z)[:100_000]
        # sojourn law mixes the per-state laws by visit frequency
        starts = z.jumps[:100_000]
        H = sojourn_cdf(k)[:, 0]
        freq = np.bincount(starts, minlength=3) / len(starts)
        law = sum(freq[i] * np.diff(H[i], prepend=0.0) for i in range(3))
        emp = np.bincount(d, minlength=9)[1:] / len(d)
        assert 0.5 * np.abs(emp - law).sum() < 0.01

    def test_index_tracker_matches_batch(self):
        m = clustering_model()
        z = simulate_stepwise(m.kernel, m.spec, SimConfig(5000, seed=2))
        tr = IndexTracker(m.spec, len(z))
        vals = []
        for s in z.states:
            vals.append(tr.value())
            tr.push(int(s))
        assert np.allclose(vals, index_at_minutes(z, m.spec), rtol=1e-9, atol=1e-15)

    def test_trace_records_index(self):
        m = clustering_model()
        trace = SimTrace()
        z = simulate_stepwise(m.kernel, m.spec, SimConfig(3000, seed=2), trace)
        assert np.allclose(trace.u_at_transitions, index_at_transitions(z, m.spec), rtol=1e-9)
        assert trace.tier_counts[0] == z.n_transitions

    def test_truncated_geometric(self):
        g = truncated_geometric(0.5, 8)
        assert g.sum() == pytest.approx(1.0)
        assert g[0] == pytest.approx(0.5 / (1 - 0.5 ** 8))


class TestBivariate:
    def test_perfect_copy(self):
        def fn(i, u, v, sign):
            out = np.zeros(3)
            out[1 + sign] = 1.0
            return out
        fk = FollowerKernel.from_function(3, 8, fn)
        bp = simulate_bivariate(geometric_kernel(), fk, SP3, SP3, SimConfig(5000, seed=3))
        assert np.array_equal(np.sign(bp.leader.states - 1), np.sign(bp.follower.states - 1))

    def test_leader_unaffected_by_follower(self):
        k = geometric_kernel()
        cfg = SimConfig(4000, seed=8)
        a = simulate_bivariate(k, copy_sign_follower(3, 8), SP3, SP3, cfg)
        b = simulate_bivariate(k, independent_follower(3, 8), SP3, SP3, cfg)
        assert np.array_equal(a.leader.states, b.leader.states)
        assert np.array_equal(a.leader.states, simulate_stepwise(k, SP3, cfg).states)

    def test_marginal_of_independent_follower(self):
        base = np.array([0.2, 0.5, 0.3])
        fk = independent_follower(3, 400, base)
        bp = simulate_bivariate(geometric_kernel(), fk, SP3, SP3, SimConfig(100_000, seed=4))
        # the same follower as a plain semi-Markov kernel: geometric exit 0.5 (1 - base_i)
        t_max = 400
        q = np.zeros((3, 1, 3, t_max))
        for i in range(3):
            exit_p = 0.5 * (1 - base[i])
            soj = (1 - exit_p) ** np.arange(t_max) * exit_p
            dest = base.copy()
            dest[i] = 0.0
            q[i, 0] = (dest / dest.sum())[:, None] * soj[None, :]
        solo = simulate_stepwise(IndexedKernel.from_increments(q), SP3, SimConfig(100_000, seed=5,
                                                                                    initial_state=1))
        assert tv(bp.follower.states, solo.states, 3) < 0.01

    def test_minute_mode_runs(self):
        bins = IndexBins(np.array([0.5e-6]))
        fk = copy_sign_follower(3, 8, 0.7, bins)
        fk = FollowerKernel(fk.counts, bins, "minute")
        bp = simulate_bivariate(geometric_kernel(), fk, SP3, SP3, SimConfig(2000, seed=1))
        assert len(bp.follower) == 2000


def test_paths_to_returns():
    b = BinSpec(np.array([-0.003, -0.0015, -0.0005, 0.0005, 0.0015, 0.003]),
                np.array([-0.002, -0.001, 0.0, 0.001, 0.002]))
    assert paths_to_returns(StatePath([0, 4]), b).values.tolist() == [-0.002, 0.002]
    assert np.all(paths_to_returns(StatePath([2] * 5), b).values == 0.0)
