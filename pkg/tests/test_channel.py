import numpy as np
import pytest

from starwpcn.channel import (FadingParams, Point3, ScenarioGeometry, combine,
                              generate_channels, path_gain,
                              place_users_semicircle, strip_surface,
                              ChannelSet)
from starwpcn.model import append_one


def default_geometry(n_antennas=4, n_elements=8):
    return ScenarioGeometry(
        hap=Point3(0, 0, 2), ris=Point3(10, 0, 0),
        users=((Point3(10.7, 0.2, 0.0), "T"), (Point3(9.4, -0.1, 0.0), "R")),
        n_antennas=n_antennas, n_elements=n_elements)


class TestPathGain:
    def test_reference_distance(self):
        params = FadingParams(reference_gain_db=-30.0)
        assert path_gain(1.0, 2.2, params) == pytest.approx(1e-3)
        assert path_gain(1.0, 3.4, params) == pytest.approx(1e-3)

    def test_direct_evaluation(self):
        # 10^(-3) * 10^(-2.2) evaluated independently
        params = FadingParams(reference_gain_db=-30.0)
        assert path_gain(10.0, 2.2, params) == pytest.approx(
            6.309573444801933e-06, rel=1e-12)

    def test_paper_exponents_accepted(self):
        params = FadingParams(pathloss_exponent_hap_ris=2.2,
                              pathloss_exponent_ris_user=2.2,
                              pathloss_exponent_direct=3.4)
        assert params.pathloss_exponent_hap_ris == 2.2
        assert params.pathloss_exponent_direct == 3.4

    def test_strictly_decreasing_in_distance(self):
        params = FadingParams()
        gains = [path_gain(d, 2.2, params) for d in np.linspace(0.5, 30, 50)]
        assert all(b < a for a, b in zip(gains, gains[1:]))

    def test_nonpositive_distance_rejected(self):
        with pytest.raises(ValueError):
            path_gain(0.0, 2.2, FadingParams())
        with pytest.raises(ValueError):
            path_gain(-1.0, 2.2, FadingParams())


class TestGenerate:
    def test_deterministic(self):
        geo, params = default_geometry(), FadingParams()
        a = generate_channels(geo, params, seed=7)
        b = generate_channels(geo, params, seed=7)
        for name in ("G", "g_a", "g_s", "H", "h_a", "h_s"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_seed_changes_draws(self):
        geo, params = default_geometry(), FadingParams()
        a = generate_channels(geo, params, seed=7)
        b = generate_channels(geo, params, seed=8)
        assert not np.array_equal(a.G, b.G)

    def test_pure_los_limit(self):
        geo = default_geometry()
        params = FadingParams(rician_k_factor=np.inf)
        cs = generate_channels(geo, params, seed=0)
        d = geo.hap.distance_to(geo.ris)
        expected = np.sqrt(path_gain(d, params.pathloss_exponent_hap_ris, params))
        assert np.allclose(np.abs(cs.G), expected)

    def test_mean_power_matches_path_gain(self):
        # Monte-Carlo check of the variance contract on the direct link
        geo = default_geometry(n_antennas=4)
        params = FadingParams()
        user = geo.users[0][0]
        gain = path_gain(geo.hap.distance_to(user),
                         params.pathloss_exponent_direct, params)
        total = 0.0
        n_draws = 10_000
        for seed in range(n_draws):
            cs = generate_channels(geo, params, seed=seed)
            total += float(np.mean(np.abs(cs.g_a[0]) ** 2))
        assert total / n_draws == pytest.approx(gain, rel=0.03)

    def test_reciprocal_uplink(self):
        cs = generate_channels(default_geometry(), FadingParams(), seed=4)
        assert np.array_equal(cs.H, cs.G.conj().T)
        assert np.array_equal(cs.h_a, cs.g_a.conj())
        assert np.array_equal(cs.h_s, cs.g_s.conj())

    def test_independent_uplink_differs(self):
        cs = generate_channels(default_geometry(), FadingParams(), seed=4,
                               reciprocal=False)
        assert not np.allclose(cs.H, cs.G.conj().T)


class TestCombine:
    def test_zero_cascade_leaves_direct_row(self):
        cs = generate_channels(default_geometry(), FadingParams(), seed=1)
        zeroed = ChannelSet(G=np.zeros_like(cs.G), g_a=cs.g_a,
                            g_s=np.zeros_like(cs.g_s), H=np.zeros_like(cs.H),
                            h_a=cs.h_a, h_s=np.zeros_like(cs.h_s))
        comb = combine(zeroed)
        M = cs.n_elements
        assert np.all(comb.Gk[0][:M] == 0)
        assert np.array_equal(comb.Gk[0][M], cs.g_a[0].conj())

    def test_scalar_hand_computation(self):
        # M = N = 1 single user, literal values
        g_s = 0.6 + 0.8j
        G = 0.5 - 0.5j
        g_a = 0.1 + 0.2j
        cs = ChannelSet(G=np.array([[G]]), g_a=np.array([[g_a]]),
                        g_s=np.array([[g_s]]),
                        H=np.array([[np.conj(G)]]), h_a=np.array([[np.conj(g_a)]]),
                        h_s=np.array([[np.conj(g_s)]]))
        comb = combine(cs)
        # conj(0.6+0.8j) * (0.5-0.5j) = -0.1 - 0.7j
        assert comb.Gk[0][0, 0] == pytest.approx(-0.1 - 0.7j)
        assert comb.Gk[0][1, 0] == pytest.approx(0.1 - 0.2j)

    def test_matches_raw_channel_computation(self):
        # cascaded + direct via the combined matrix vs the elementwise model
        geo, params = default_geometry(), FadingParams()
        rng = np.random.default_rng(99)
        worst = 0.0
        for seed in range(100):
            cs = generate_channels(geo, params, seed=seed)
            comb = combine(cs)
            M, N = cs.n_elements, cs.n_antennas
            u = rng.standard_normal(M) + 1j * rng.standard_normal(M)
            v = rng.standard_normal(N) + 1j * rng.standard_normal(N)
            for k in range(2):
                lhs = append_one(u).conj() @ comb.Gk[k] @ v
                theta = np.diag(u.conj())
                rhs = cs.g_s[k].conj() @ theta @ cs.G @ v + cs.g_a[k].conj() @ v
                worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
        assert worst <= 1e-12

    def test_combined_reciprocity(self):
        cs = generate_channels(default_geometry(), FadingParams(), seed=2)
        comb = combine(cs)
        for k in range(2):
            assert np.array_equal(comb.Hk[k], comb.Gk[k].conj().T)

    def test_strip_surface(self):
        cs = generate_channels(default_geometry(), FadingParams(), seed=2)
        bare = strip_surface(cs)
        assert bare.n_elements == 0
        comb = combine(bare)
        assert comb.Gk.shape == (2, 1, cs.n_antennas)
        assert np.array_equal(comb.Gk[0][0], cs.g_a[0].conj())


class TestGeometry:
    def test_wrong_side_tag_rejected(self):
        with pytest.raises(ValueError, match="wrong side"):
            ScenarioGeometry(hap=Point3(0, 0, 2), ris=Point3(10, 0, 0),
                             users=((Point3(9.5, 0, 0), "T"),
                                    (Point3(9.4, 0, 0), "R")),
                             n_antennas=2, n_elements=4)

    def test_reflect_only_skips_side_check(self):
        geo = ScenarioGeometry(hap=Point3(0, 0, 2), ris=Point3(10, 1, 0),
                               users=((Point3(10.7, 0, 0), "T"),
                                      (Point3(9.4, 0, 0), "R")),
                               n_antennas=2, n_elements=4,
                               surface="reflect_only")
        assert geo.surface == "reflect_only"

    def test_placement_sides_and_radius(self):
        rng = np.random.default_rng(5)
        ris = Point3(10, 0, 0)
        for _ in range(50):
            (pt, tag_t), (pr, tag_r) = place_users_semicircle(rng, ris)
            assert tag_t == "T" and tag_r == "R"
            assert pt.x >= ris.x and pr.x <= ris.x
            assert pt.distance_to(ris) <= 1.0 + 1e-12
            assert pr.distance_to(ris) <= 1.0 + 1e-12
            assert pt.z == 0.0

    def test_placement_deterministic(self):
        ris = Point3(10, 0, 0)
        a = place_users_semicircle(np.random.default_rng(3), ris)
        b = place_users_semicircle(np.random.default_rng(3), ris)
        assert a == b
