import numpy as np
import pytest

from starwpcn.channel import (ChannelSet, FadingParams, Point3,
                              ScenarioGeometry, combine, generate_channels)
from starwpcn.model import (EsSolution, Scenario, StarEsProfile, StarTsProfile,
                            SystemParams, TsSolution, append_one, energy_es,
                            energy_ts, noise_normalized, rates_es, rates_ts,
                            validate, USER_R, USER_T)


def small_scenario(seed=0, n_antennas=2, n_elements=4):
    geo = ScenarioGeometry(
        hap=Point3(0, 0, 2), ris=Point3(10, 0, 0),
        users=((Point3(10.6, 0.3, 0.0), "T"), (Point3(9.5, -0.2, 0.0), "R")),
        n_antennas=n_antennas, n_elements=n_elements)
    return Scenario(geometry=geo, fading=FadingParams(), system=SystemParams(),
                    seed=seed)


def random_profile(rng, n_elements):
    beta = rng.uniform(0.05, 0.95, size=n_elements)
    th = rng.uniform(0, 2 * np.pi, size=(4, n_elements))
    u = np.stack([np.sqrt(beta) * np.exp(1j * th[0]),
                  np.sqrt(1 - beta) * np.exp(1j * th[1])])
    q = np.stack([np.sqrt(beta) * np.exp(1j * th[2]),
                  np.sqrt(1 - beta) * np.exp(1j * th[3])])
    return StarEsProfile(u=u, q=q)


class TestProfiles:
    def test_coupling_enforced(self):
        u = np.array([[0.9, 0.9], [0.9, 0.9]], dtype=complex)
        with pytest.raises(ValueError, match="coupling"):
            StarEsProfile(u=u, q=u)

    def test_unit_modulus_enforced(self):
        bad = np.array([[0.5, 1.0]], dtype=complex)
        with pytest.raises(ValueError, match="unit modulus"):
            StarTsProfile(u=bad, q=bad)

    def test_append_one(self):
        v = np.array([1j, 2.0])
        out = append_one(v)
        assert out[-1] == 1.0 and out.shape == (3,)


class TestEnergy:
    def test_no_charge_time(self):
        sc = small_scenario()
        comb = sc.combined()
        prof = random_profile(np.random.default_rng(0), 4)
        v = np.ones(2, dtype=complex)
        assert np.all(energy_es(0.0, 0.8, comb, prof.u_tilde(), v) == 0.0)

    def test_no_transmit_energy(self):
        sc = small_scenario()
        comb = sc.combined()
        prof = random_profile(np.random.default_rng(0), 4)
        v = np.zeros(2, dtype=complex)
        assert np.all(energy_es(0.5, 0.8, comb, prof.u_tilde(), v) == 0.0)

    def test_direct_only_scalar_hand_value(self):
        # N = 1, surface removed: E = tau0 * eta * |conj(g_a) v|^2
        g_a = 0.3 + 0.4j  # |g_a| = 0.5
        cs = ChannelSet(G=np.zeros((0, 1), dtype=complex),
                        g_a=np.array([[g_a], [g_a]]),
                        g_s=np.zeros((2, 0), dtype=complex),
                        H=np.zeros((1, 0), dtype=complex),
                        h_a=np.array([[np.conj(g_a)], [np.conj(g_a)]]),
                        h_s=np.zeros((2, 0), dtype=complex))
        comb = combine(cs)
        u_tilde = np.ones((2, 1), dtype=complex)
        v = np.array([2.0 + 0.0j])
        # |conj(0.3+0.4j) * 2|^2 = 1; E = 0.5 * 0.8 * 1 = 0.4
        E = energy_es(0.5, 0.8, comb, u_tilde, v)
        assert E == pytest.approx([0.4, 0.4])

    def test_ts_zero_slot(self):
        sc = small_scenario()
        comb = sc.combined()
        prof = random_profile(np.random.default_rng(1), 4)
        v = np.ones((2, 2), dtype=complex)
        E = energy_ts(np.array([0.0, 0.3]), 0.8, comb, prof.u_tilde(), v)
        assert E[0] == 0.0 and E[1] > 0.0

    def test_ts_matched_filter_identity(self):
        # MRT beam delivers tau0 * eta * P * ||Gk^H u~||^2
        sc = small_scenario()
        comb = sc.combined()
        rng = np.random.default_rng(2)
        u = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(2, 4)))
        u_tilde = append_one(u)
        P = 5.0
        eta = 0.8
        v = np.empty((2, 2), dtype=complex)
        for k in range(2):
            g = comb.Gk[k].conj().T @ u_tilde[k]
            v[k] = np.sqrt(P) * g / np.linalg.norm(g)
        tau0 = np.array([0.2, 0.3])
        E = energy_ts(tau0, eta, comb, u_tilde, v)
        for k in range(2):
            expect = tau0[k] * eta * P * np.linalg.norm(
                comb.Gk[k].conj().T @ u_tilde[k]) ** 2
            assert E[k] == pytest.approx(expect, rel=1e-12)


class TestRates:
    def setup_method(self):
        self.sc = small_scenario(seed=5)
        self.comb = self.sc.combined()
        rng = np.random.default_rng(7)
        self.prof = random_profile(rng, 4)
        w = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        self.w = w / np.linalg.norm(w, axis=1, keepdims=True)
        self.sigma2 = self.sc.system.sigma2

    def test_zero_powers(self):
        r_t, r_r = rates_es(0.6, np.zeros(2), self.w, self.comb,
                            self.prof.q_tilde(), self.sigma2)
        assert r_t == 0.0 and r_r == 0.0

    def test_no_interference_matches_tdma_form(self):
        p = np.array([0.0, 1e-6])
        _, r_r = rates_es(0.6, p, self.w, self.comb, self.prof.q_tilde(),
                          self.sigma2)
        tdma = rates_ts(np.array([0.6, 0.6]), p, self.w, self.comb,
                        self.prof.q_tilde(), self.sigma2)
        assert r_r == pytest.approx(tdma[USER_R], rel=1e-12)

    def test_trace_form_equivalence(self):
        # Tr(W Hk Q Hk^H) equals |w^H Hk q|^2 for lifted outer products
        rng = np.random.default_rng(11)
        for _ in range(25):
            q = rng.standard_normal(5) + 1j * rng.standard_normal(5)
            w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            H = rng.standard_normal((2, 5)) + 1j * rng.standard_normal((2, 5))
            W = np.outer(w, w.conj())
            Q = np.outer(q, q.conj())
            scalar = abs(w.conj() @ H @ q) ** 2
            trace = np.real(np.trace(W @ H @ Q @ H.conj().T))
            assert trace == pytest.approx(scalar, rel=1e-10)

    def test_rate_monotone_in_own_power(self):
        base = np.array([2e-6, 3e-6])
        r_t0, r_r0 = rates_es(0.6, base, self.w, self.comb,
                              self.prof.q_tilde(), self.sigma2)
        r_t1, _ = rates_es(0.6, base * np.array([2.0, 1.0]), self.w, self.comb,
                           self.prof.q_tilde(), self.sigma2)
        _, r_r1 = rates_es(0.6, base * np.array([1.0, 2.0]), self.w, self.comb,
                           self.prof.q_tilde(), self.sigma2)
        assert r_t1 > r_t0 and r_r1 > r_r0

    def test_sic_consistency(self):
        # killing the interference channel makes the interfered rate the
        # interference-free formula exactly
        p = np.array([2e-6, 3e-6])
        q_tilde = self.prof.q_tilde()
        h_t = self.comb.Hk[USER_T] @ q_tilde[USER_T]
        w = self.w.copy()
        # receiver orthogonal to the interference
        w[USER_R] -= (h_t.conj() @ w[USER_R]) / np.linalg.norm(h_t) ** 2 * h_t
        w[USER_R] /= np.linalg.norm(w[USER_R])
        _, r_r = rates_es(0.6, p, w, self.comb, q_tilde, self.sigma2)
        free = rates_ts(np.array([0.6, 0.6]), p, w, self.comb, q_tilde,
                        self.sigma2)
        assert r_r == pytest.approx(free[USER_R], rel=1e-9)

    def test_ts_zero_slot_and_symmetry(self):
        rates = rates_ts(np.array([0.0, 0.4]), np.array([1e-6, 1e-6]), self.w,
                         self.comb, self.prof.q_tilde(), self.sigma2)
        assert rates[0] == 0.0
        # identical configuration for both users gives equal rates
        comb2 = type(self.comb)(Gk=np.stack([self.comb.Gk[0]] * 2),
                                Hk=np.stack([self.comb.Hk[0]] * 2))
        q2 = np.stack([self.prof.q_tilde()[0]] * 2)
        w2 = np.stack([self.w[0]] * 2)
        rr = rates_ts(np.array([0.4, 0.4]), np.array([1e-6, 1e-6]), w2, comb2,
                      q2, self.sigma2)
        assert rr[0] == pytest.approx(rr[1], rel=1e-12)

    def test_high_snr_doubling_slope(self):
        p = np.array([0.1, 0.1])  # deep in the high-SNR regime
        tau1 = np.array([0.5, 0.5])
        r0 = rates_ts(tau1, p, self.w, self.comb, self.prof.q_tilde(),
                      self.sigma2)
        r1 = rates_ts(tau1, 2 * p, self.w, self.comb, self.prof.q_tilde(),
                      self.sigma2)
        assert np.allclose(r1 - r0, tau1, rtol=1e-3)


class TestValidate:
    def test_zero_power_solution_feasible(self):
        sc = small_scenario()
        prof = random_profile(np.random.default_rng(3), 4)
        w = np.zeros((2, 2), dtype=complex)
        w[:, 0] = 1.0
        sol = EsSolution(tau0=0.5, tau1=0.5, v=np.zeros(2, dtype=complex), w=w,
                         profile=prof, p=np.zeros(2), gamma=0.0)
        report = validate(sol, sc)
        assert report.feasible, str(report)

    def test_energy_causality_violation_flagged(self):
        sc = small_scenario()
        comb = sc.combined()
        prof = random_profile(np.random.default_rng(3), 4)
        w = np.zeros((2, 2), dtype=complex)
        w[:, 0] = 1.0
        v = np.sqrt(sc.system.P_A) * np.ones(2, dtype=complex) / np.sqrt(2)
        energies = energy_es(0.5, sc.system.eta, comb, prof.u_tilde(), v)
        p = 1.01 * energies / 0.5  # 1% over the harvest cap
        sol = EsSolution(tau0=0.5, tau1=0.5, v=v, w=w, profile=prof, p=p,
                         gamma=0.0)
        report = validate(sol, sc)
        bad = [c.name for c in report.violations()]
        assert "energy_causality_t" in bad and "energy_causality_r" in bad

    def test_rate_floor_violation_flagged(self):
        sc = small_scenario()
        prof = random_profile(np.random.default_rng(3), 4)
        w = np.zeros((2, 2), dtype=complex)
        w[:, 0] = 1.0
        sol = EsSolution(tau0=0.5, tau1=0.5, v=np.zeros(2, dtype=complex), w=w,
                         profile=prof, p=np.zeros(2), gamma=1.0)
        report = validate(sol, sc)
        assert not report.feasible
        assert any(c.name.startswith("rate_floor") for c in report.violations())

    def test_report_printable(self):
        sc = small_scenario()
        prof = random_profile(np.random.default_rng(3), 4)
        w = np.zeros((2, 2), dtype=complex)
        w[:, 0] = 1.0
        sol = EsSolution(tau0=0.5, tau1=0.5, v=np.zeros(2, dtype=complex), w=w,
                         profile=prof, p=np.zeros(2), gamma=0.0)
        text = str(validate(sol, sc))
        assert "feasible=True" in text


class TestNoiseNormalization:
    def test_rates_invariant(self):
        sc = small_scenario(seed=9)
        comb = sc.combined()
        scaled, s = noise_normalized(comb, sc.system.sigma2)
        rng = np.random.default_rng(1)
        prof = random_profile(rng, 4)
        w = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        p = np.array([3e-6, 5e-6])
        physical = rates_es(0.6, p, w, comb, prof.q_tilde(), sc.system.sigma2)
        scaled_rates = rates_es(0.6, p * s ** 2, w, scaled, prof.q_tilde(), 1.0)
        assert physical == pytest.approx(scaled_rates, rel=1e-10)
