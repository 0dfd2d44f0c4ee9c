import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fldelay.model import (
    LN2,
    LearningConfig,
    NetworkConfig,
    Scenario,
    ScenarioFormatError,
    UserProfile,
    achievable_rate,
    db_to_linear,
    dbm_to_watts,
    derive_constants,
    generate_scenario,
    local_computation_time,
    path_loss_db,
    user_delay,
)
from fldelay.numerics import DomainError


def _user(c=1e4, d=500):
    return UserProfile(c, d, 2e9, 0.01, 1e-10)


class TestDerivedConstants:
    def test_unit_a(self):
        lc = LearningConfig(1, 1, 1, 0.1, math.exp(-1))
        assert lc.a == pytest.approx(2.0, rel=1e-15)

    def test_unit_v(self):
        assert LearningConfig(1, 1, 0.1, 1.0, 1e-3).v == pytest.approx(2.0)

    def test_default_setup(self):
        dc = derive_constants(LearningConfig(), [_user()])
        assert dc.a == pytest.approx(138.15510557964274, rel=1e-14)
        assert dc.v == pytest.approx(10.526315789473685, rel=1e-14)
        assert dc.workload == pytest.approx((dc.v * 1e4 * 500,))

    def test_step_too_large(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lc = LearningConfig(1, 1, 0.1, 2.0, 1e-3)
        with pytest.raises(DomainError):
            derive_constants(lc, [_user()])

    def test_warnings(self):
        with pytest.warns(UserWarning, match="xi"):
            LearningConfig(2, 1, 0.9, 0.1, 1e-3)
        with pytest.warns(UserWarning, match="step"):
            LearningConfig(1, 1, 0.1, 2.5, 1e-3)

    @pytest.mark.parametrize("kw", [dict(strong_convexity=2.0), dict(global_accuracy=1.0), dict(xi=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            LearningConfig(**kw)

    def test_doubling_cycles_doubles_workload(self):
        lc = LearningConfig()
        one = derive_constants(lc, [_user(1.3e4), _user(2.2e4)]).workload
        two = derive_constants(lc, [_user(2.6e4), _user(4.4e4)]).workload
        assert two == tuple(2 * w for w in one)


class TestRate:
    def test_zero_power(self):
        assert achievable_rate(1e6, 0.0, 1.0, 1.0) == 0.0

    def test_zero_bandwidth(self):
        assert achievable_rate(0.0, 1.0, 1.0, 1.0) == 0.0

    def test_unit_snr(self):
        assert achievable_rate(5e5, 1.0, 5e5, 1.0) == pytest.approx(5e5, rel=1e-15)

    def test_snr_three(self):
        assert achievable_rate(1e6, 1.0, 3e6, 1.0) == pytest.approx(2e6, rel=1e-15)

    def test_ceiling(self):
        c = 1e6
        assert achievable_rate(1e12, 1.0, c, 1.0) == pytest.approx(c / LN2, rel=1e-3)
        assert achievable_rate(1e12, 1.0, c, 1.0) < c / LN2

    def test_concave_increasing(self):
        b = np.logspace(0, 12, 400)
        r = achievable_rate(b, 1.0, 1e6, 1.0)
        assert np.all(np.diff(r) > 0)
        # second differences on the log grid, rescaled to a uniform-grid check
        b = np.linspace(1e3, 1e8, 2001)
        r = achievable_rate(b, 1.0, 1e6, 1.0)
        assert np.all(np.diff(r, 2) <= 1e-9 * r[1:-1])

    @given(st.floats(min_value=1e-3, max_value=1e3), st.floats(min_value=1e-3, max_value=1e3))
    def test_increasing_in_power(self, p, scale):
        assert achievable_rate(1e6, p * (1 + scale), 1e3, 1e-3) > achievable_rate(1e6, p, 1e3, 1e-3)


class TestDelay:
    def test_local_time(self):
        assert local_computation_time(1e9, 2e9, 1.0) == 0.0
        assert local_computation_time(3e9, 2e9, 0.5) == pytest.approx(1.5)
        assert local_computation_time(1e9, 2e9, 0.25) == pytest.approx(1.0)

    def test_local_time_domain(self):
        with pytest.raises(DomainError):
            local_computation_time(1e9, 2e9, 0.0)

    def test_user_delay(self):
        assert user_delay(1.0, 0.5, 0.0, 0.0) == 0.0
        assert user_delay(1.0, 0.5, 1.0, 1.0) == 4.0
        assert user_delay(138.155, 0.5, 0.1, 0.01) == pytest.approx(30.3941, rel=1e-5)

    def test_user_delay_domain(self):
        with pytest.raises(DomainError):
            user_delay(1.0, 1.0, 1.0, 1.0)


class TestUnits:
    def test_dbm(self):
        assert dbm_to_watts(0.0) == pytest.approx(1e-3)
        assert dbm_to_watts(10.0) == pytest.approx(1e-2)
        assert dbm_to_watts(-174.0) == pytest.approx(3.981071705534972e-21, rel=1e-12)

    def test_db(self):
        assert db_to_linear(20.0) == pytest.approx(100.0)
        assert db_to_linear(-3.0) == pytest.approx(0.5011872336272722)

    def test_path_loss(self):
        assert path_loss_db(1.0) == pytest.approx(128.1)
        assert path_loss_db(0.1) == pytest.approx(90.5)
        assert db_to_linear(-path_loss_db(1.0)) == pytest.approx(10**-12.81)
        assert path_loss_db(1.0, 8.0) == pytest.approx(136.1)


class TestGenerate:
    def test_defaults(self):
        sc = generate_scenario(0)
        assert sc.K == 50
        assert sc.net.bandwidth == 20e6 and sc.net.upload_bits == 28.1e3
        assert sc.net.noise_psd == pytest.approx(dbm_to_watts(-174.0))
        assert np.all(sc.p_max == pytest.approx(0.01))
        assert np.all(sc.f_max == 2e9)
        c = np.array([u.cycles_per_sample for u in sc.users])
        assert np.all((c >= 1e4) & (c <= 3e4))
        assert all(u.samples == 500 for u in sc.users)

    def test_deterministic(self):
        assert generate_scenario(7, 10).to_json() == generate_scenario(7, 10).to_json()
        assert generate_scenario(7, 10).to_json() != generate_scenario(8, 10).to_json()

    def test_gain_range(self):
        g = generate_scenario(3, 500, shadowing_std_db=0.0).gain
        # no shadowing: gains between the 1 m clamp and the square's corner
        lo = db_to_linear(-path_loss_db(math.hypot(250, 250) / 1000))
        hi = db_to_linear(-path_loss_db(1e-3))
        assert np.all((g >= lo * (1 - 1e-12)) & (g <= hi))

    def test_overrides(self):
        sc = generate_scenario(0, 4, p_max_dbm=20.0, bandwidth_hz=1e6)
        assert sc.p_max == pytest.approx(0.1) and sc.net.bandwidth == 1e6

    def test_bad_override(self):
        with pytest.raises(ValueError, match="unknown"):
            generate_scenario(0, 4, nonsense=1)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            generate_scenario(0, 0)


class TestSerialisation:
    def test_roundtrip(self):
        sc = generate_scenario(5, 6)
        back = Scenario.from_json(sc.to_json())
        assert back == sc
        assert back.derived == sc.derived

    def test_derived_not_serialised(self):
        doc = json.loads(generate_scenario(0, 2).to_json())
        assert set(doc) == {"users", "network", "learning", "seed"}

    def _doc(self):
        return json.loads(generate_scenario(0, 3).to_json())

    @pytest.mark.parametrize(
        "mutate, pointer",
        [
            (lambda d: d["users"][1].pop("gain_linear"), "/users/1/gain_linear"),
            (lambda d: d["users"][2].__setitem__("f_max_hz", -1.0), "/users/2/f_max_hz"),
            (lambda d: d["users"][0].__setitem__("d_samples", 2.5), "/users/0/d_samples"),
            (lambda d: d["network"].__setitem__("bandwidth_hz", "wide"), "/network/bandwidth_hz"),
            (lambda d: d["learning"].__setitem__("epsilon0", 2.0), "/learning/epsilon0"),
            (lambda d: d.pop("learning"), "/learning"),
            (lambda d: d.__setitem__("users", []), "/users"),
            (lambda d: d.__setitem__("seed", "x"), "/seed"),
        ],
    )
    def test_pointer(self, mutate, pointer):
        doc = self._doc()
        mutate(doc)
        with pytest.raises(ScenarioFormatError) as err:
            Scenario.from_dict(doc)
        assert err.value.pointer == pointer

    def test_invalid_json(self):
        with pytest.raises(ScenarioFormatError, match="invalid JSON"):
            Scenario.from_json("{not json")


def test_profile_validation():
    with pytest.raises(ValueError):
        UserProfile(1e4, 0, 2e9, 0.01, 1e-10)
    with pytest.raises(ValueError):
        NetworkConfig(0.0, 1e-20, 1e3)
