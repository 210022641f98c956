import json
import math

import numpy as np
import pytest

from driftlab import rates


class TestConstructors:
    def test_polynomial_values(self):
        r = rates.make_polynomial(1.0, 2.0)
        assert r(0) == 2.0
        assert r(1) == 4.0
        assert r(1) >= 2.0

    def test_polynomial_constant_case(self):
        r = rates.make_polynomial(0.0, 2.0)
        assert all(r(n) == 2.0 for n in range(10))

    def test_polynomial_submultiplicative_point(self):
        # direct arithmetic: r(5) = 12 <= r(2) r(3) = 6 * 8
        r = rates.make_polynomial(1.0, 2.0)
        assert r(5) == 12.0
        assert r(2) * r(3) == 48.0
        assert r(5) <= r(2) * r(3)

    def test_polynomial_rejects_bad_params(self):
        with pytest.raises(ValueError):
            rates.make_polynomial(-0.5, 2.0)
        with pytest.raises(ValueError):
            rates.make_polynomial(1.0, 0.0)

    def test_geometric_values(self):
        assert rates.make_geometric(2.0, 1.0)(3) == 8.0
        assert rates.make_geometric(1.1, 1.0)(0) == 1.0

    def test_geometric_rejects_zeta_at_most_one(self):
        with pytest.raises(ValueError):
            rates.make_geometric(1.0, 1.0)
        with pytest.raises(ValueError):
            rates.make_geometric(0.9, 1.0)

    def test_subexponential_domain(self):
        r = rates.make_subexponential(1.0, 0.5)
        assert r(0) == 1.0
        assert r(4) == pytest.approx(math.exp(2.0))
        with pytest.raises(ValueError):
            rates.make_subexponential(1.0, 1.0)

    def test_table_rate(self):
        r = rates.make_table([2.0, 8.0, 10.0])
        assert r(2) == 10.0
        with pytest.raises(ValueError):
            r.eval(3)

    def test_negative_n_rejected(self):
        with pytest.raises(ValueError):
            rates.make_polynomial(1, 2).eval(-1)


class TestRateClassMembership:
    def test_polynomial_passes(self):
        # log(2(n+1))/n decreases to 0
        rep = rates.lambda0_membership(rates.make_polynomial(1.0, 2.0), 1000)
        assert rep["passes"], rep["failures"]

    def test_geometric_fails_vanishing_slope(self):
        # log r(n)/n = log 2, constant
        rep = rates.lambda0_membership(rates.make_geometric(2.0, 1.0), 100)
        assert not rep["passes"]
        assert any(f["clause"] == "log_slope_vanishes" for f in rep["failures"])

    def test_r1_below_two_fails(self):
        rep = rates.lambda0_membership(rates.make_table([1.0, 1.5, 2.0, 2.5]), 3)
        assert any(f["clause"] == "r1_at_least_2" for f in rep["failures"])

    def test_non_monotone_table_fails(self):
        rep = rates.lambda0_membership(rates.make_table([2.0, 4.0, 3.0, 5.0]), 3)
        assert any(f["clause"] == "non_decreasing" for f in rep["failures"])

    def test_small_c_polynomial_fails_slope_monotonicity(self):
        # c < 1 breaks submultiplicativity and the slope monotonicity with it:
        # log(0.5 (n+1)^2)/n rises from n=1 to n=2
        rep = rates.lambda0_membership(rates.make_polynomial(2.0, 0.5), 100)
        assert not rep["passes"]

    def test_requires_two_points(self):
        with pytest.raises(ValueError):
            rates.lambda0_membership(rates.make_polynomial(1, 2), 1)


class TestSubmultiplicativity:
    def test_polynomial_sampled(self):
        assert rates.submultiplicativity_check(rates.make_polynomial(2.0, 2.0), 1000, 50)

    def test_geometric_equality_case(self):
        # zeta^(m+n) = zeta^m zeta^n exactly when M = 1
        assert rates.submultiplicativity_check(rates.make_geometric(2.0, 1.0), 200, 30)

    def test_table_exhaustive(self):
        r = rates.make_table([2.0, 8.0, 10.0])
        # all pairs within the table domain
        for m in range(3):
            for n in range(3 - m):
                assert r(m + n) <= r(m) * r(n) * (1 + 1e-12)
        assert rates.submultiplicativity_check(r, 500, 2)

    def test_violating_rate_detected(self):
        r = rates.make_table([1.0, 1.0, 100.0])
        assert not rates.submultiplicativity_check(r, 2000, 2)


class TestConvolve:
    def test_counting(self):
        assert rates.convolve(lambda k: 1.0, lambda k: 1.0, 4) == 5.0

    def test_identity_element(self):
        delta0 = [1.0, 0.0, 0.0, 0.0, 0.0]
        g = [3.0, 1.0, 4.0, 1.0, 5.0]
        for n in range(5):
            assert rates.convolve(delta0, g, n) == g[n]

    def test_geometric_weights(self):
        # sum_{k=0}^{3} 2^(-k-1) = 15/16
        val = rates.convolve(lambda k: 2.0 ** (-k - 1), lambda k: 1.0, 3)
        assert val == pytest.approx(15.0 / 16.0, abs=1e-15)

    def test_commutative(self):
        rng = np.random.default_rng(3)
        f = rng.uniform(0.1, 2.0, 8)
        g = rng.uniform(0.1, 2.0, 8)
        for n in range(8):
            assert rates.convolve(f, g, n) == pytest.approx(rates.convolve(g, f, n), rel=1e-12)

    def test_negative_index(self):
        with pytest.raises(ValueError):
            rates.convolve(lambda k: 1.0, lambda k: 1.0, -1)


class TestYoungPairs:
    def test_points(self):
        pair = rates.young_pair(2.0)
        assert pair.psi1(4.0) * pair.psi2(9.0) == pytest.approx(6.0)
        assert 6.0 <= 13.0
        assert pair.psi1(1.0) * pair.psi2(1.0) <= 2.0
        p3 = rates.young_pair(3.0)
        assert p3.psi1(8.0) * p3.psi2(1.0) == pytest.approx(2.0)

    def test_product_inequality_sweep(self):
        rng = np.random.default_rng(7)
        for p in (1.5, 2.0, 3.0, 10.0):
            pair = rates.young_pair(p)
            x = 10.0 ** rng.uniform(0, 6, 5000)
            y = 10.0 ** rng.uniform(0, 6, 5000)
            assert np.all(pair.psi1(x) * pair.psi2(y) <= x + y)

    def test_rejects_p_at_most_one(self):
        with pytest.raises(ValueError):
            rates.young_pair(1.0)

    def test_degenerate_pair_rejected(self):
        with pytest.raises(ValueError):
            rates.UndPair(psi1=lambda x: 1.0, psi2=lambda y: 1.0)


class TestSerialization:
    def test_round_trip_exact_params(self):
        for r in list(rates.builtin_rates().values()) + [rates.make_geometric(1.5, 2.0),
                                                         rates.make_table([2.0, 4.0])]:
            blob = json.dumps(r.to_config())
            back = rates.RateFunction.from_config(json.loads(blob))
            assert back.to_config() == r.to_config()
            for n in range(min(5, (r.domain_end or 5) + 1)):
                assert back(n) == r(n)


class TestComposition:
    def _cert(self, chain_id, f, r):
        from driftlab.drift import DriftCertificate
        return DriftCertificate(theorem="harris", verdict="pass", constants={},
                                clauses=[], grid=[], seeds=[], sample_sizes={},
                                censor_rates={}, chain_id=chain_id,
                                claim={"f": f, "r": r})

    def test_compose_claims(self):
        pair = rates.young_pair(2.0)
        combined = rates.compose_ergodicity(self._cert("k1", "V", "1"),
                                            self._cert("k1", "1", "poly"), pair)
        assert combined.verdict == "pass"
        assert "psi1" in combined.claim["f"] and "psi2" in combined.claim["r"]

    def test_chain_mismatch(self):
        pair = rates.young_pair(2.0)
        with pytest.raises(ValueError):
            rates.compose_ergodicity(self._cert("k1", "V", "1"),
                                     self._cert("k2", "1", "poly"), pair)
