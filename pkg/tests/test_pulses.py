import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectralqc.controls import CavityCoupling, Envelope, PulseSpec
from spectralqc.hilbert import CAVITY, LEVEL_INDEX, LevelScheme, Space, fidelity, partial_trace, product_state
from spectralqc.pulses import (
    AdiabaticityError,
    Primitive,
    _calibrate_raman,
    apply_cavity_transfer,
    calibrate_raman_pi,
    cavity_raman_transfer,
    fit_local_phases,
    local_unitary,
    raman_primitive,
    run_primitive,
    stirap_exchange,
    stirap_report,
    wire_detunings,
)

R2 = 1 / math.sqrt(2)


class TestControls:
    def test_envelope_shapes(self):
        for shape in ("rect", "gaussian", "blackman"):
            env = Envelope.starting_at(shape, 4.0, 1.0)
            assert env(env.center) == pytest.approx(1.0)
            assert env(0.5) == 0.0 and env(5.5) == 0.0
        assert Envelope.starting_at("blackman", 10.0).area() == pytest.approx(4.2)

    def test_invalid_envelope(self):
        with pytest.raises(ValueError):
            Envelope("triangle", 1.0, 0.0)
        with pytest.raises(ValueError):
            Envelope("rect", 0.0, 0.0)

    def test_pulse_round_trip(self):
        p = PulseSpec(2, (("a", "g"), ("b", "h")), (1.0, 2.0), Envelope.starting_at("gaussian", 3.0, 1.0), (5.0, 6.0), 0.7)
        assert PulseSpec.from_dict(p.to_dict()) == p

    def test_pulse_validation(self):
        with pytest.raises(ValueError):
            PulseSpec(0, (("g", "a"),), 1.0, Envelope.starting_at("rect", 1.0))
        with pytest.raises(ValueError):
            PulseSpec(0, (("a", "g"),), (1.0, 2.0), Envelope.starting_at("rect", 1.0))
        with pytest.raises(ValueError):
            CavityCoupling(0, -1.0, (("a", "g"),))


class TestRaman:
    def test_pi_pulse_transfer(self):
        p = calibrate_raman_pi(0, ("e", "a"))
        u = local_unitary(p)
        assert abs(u[LEVEL_INDEX["a"], LEVEL_INDEX["e"]]) ** 2 > 1 - 1e-4
        assert p.envelope.shape == "rect"

    def test_retrieval_example(self):
        prim = raman_primitive(0, ("e", "a"))
        space = Space(1, 2)
        out = run_primitive(product_state(space, [{"e": 0.6, "f": 0.8}]), prim)
        target = product_state(space, [{"a": 0.6, "f": 0.8}])
        assert fidelity(out, target.data) > 1 - 1e-6

    def test_twice_returns_population(self):
        p = calibrate_raman_pi(0, ("a", "b"))
        u = local_unitary(p)
        u2 = u @ u
        a = LEVEL_INDEX["a"]
        assert abs(u2[a, a]) ** 2 > 1 - 4e-4

    def test_forward_then_inverse_within_twice_single_infidelity(self):
        prim = raman_primitive(0, ("f", "c"))
        space = Space(1, 2)
        psi = product_state(space, [{"f": 0.6, "c": 0.8j}])
        once = run_primitive(psi, prim)
        single = 1 - fidelity(once, product_state(space, [{"c": 0.6, "f": 0.8j}]).data)
        back = run_primitive(once, prim.inverse())
        assert fidelity(back, psi.data) >= 1 - 2 * single - 1e-10

    def test_twice_accumulates_coherent_error(self):
        # a second identical pulse is also a swap back, but its error adds in amplitude
        prim = raman_primitive(0, ("f", "c"))
        space = Space(1, 2)
        psi = product_state(space, [{"f": 0.6, "c": 0.8j}])
        back = run_primitive(run_primitive(psi, prim), prim)
        assert fidelity(back, psi.data) > 1 - 1e-6

    def test_deterministic(self):
        first = calibrate_raman_pi(0, ("b", "d"))
        _calibrate_raman.cache_clear()
        assert calibrate_raman_pi(0, ("b", "d")) == first

    def test_small_detuning_warns(self):
        with pytest.warns(UserWarning, match="below 10"):
            calibrate_raman_pi(0, ("e", "a"), omega_peak=10.0, detuning=90.0)

    def test_unconnected_pair(self):
        scheme = LevelScheme(optical_links=frozenset({("a", "g"), ("c", "g"), ("b", "h"), ("d", "h")}))
        with pytest.raises(ValueError, match="Lambda-connected"):
            calibrate_raman_pi(0, ("a", "b"), scheme=scheme)

    def test_retarget(self):
        prim = raman_primitive(0, ("e", "a"))
        moved = prim.retarget({0: 5})
        assert moved.atoms == (5,) and moved.phase_correction[0][0] == 5


class TestCavityTransfer:
    def test_full_emission(self):
        space = Space(1, 2)
        out = run_primitive(product_state(space, ["a"], 0), cavity_raman_transfer(0))
        assert out.photon_number() >= 0.999

    def test_dark_input(self):
        space = Space(1, 2)
        psi = product_state(space, ["c"], 0)
        out = run_primitive(psi, cavity_raman_transfer(0))
        assert out.photon_number() < 1e-6
        assert fidelity(out, psi.data) > 1 - 1e-6

    def test_superposition_to_photon(self):
        space = Space(1, 2)
        out = run_primitive(product_state(space, [{"a": R2, "c": R2}], 0), cavity_raman_transfer(0))
        cav = partial_trace(out, [CAVITY])
        assert np.allclose(np.diag(cav).real, [0.5, 0.5], atol=1e-3)
        target = product_state(space, ["c"], [R2, R2])
        assert fidelity(out, target.data) > 1 - 1e-3

    def test_round_trip(self):
        space = Space(1, 2)
        psi = product_state(space, [{"a": 0.6, "c": 0.8}], 0)
        out = run_primitive(run_primitive(psi, cavity_raman_transfer(0)), cavity_raman_transfer(0, "cavity->atom"))
        assert fidelity(out, psi.data) > 1 - 1e-3

    @pytest.mark.parametrize("direction", ["atom->cavity", "cavity->atom"])
    def test_forward_then_inverse(self, direction):
        space = Space(1, 2)
        prim = cavity_raman_transfer(0, direction)
        if direction == "atom->cavity":
            psi, ideal = product_state(space, [{"a": 0.6, "c": 0.8j}], 0), product_state(space, ["c"], [0.8j, 0.6])
        else:
            psi, ideal = product_state(space, ["c"], [0.8j, 0.6]), product_state(space, [{"a": 0.6, "c": 0.8j}], 0)
        once = run_primitive(psi, prim)
        single = 1 - fidelity(once, ideal.data)
        back = run_primitive(once, prim.inverse())
        assert fidelity(back, psi.data) >= 1 - 2 * single - 1e-10

    def test_occupied_cavity(self):
        space = Space(1, 2)
        with pytest.raises(ValueError, match="vacuum"):
            apply_cavity_transfer(product_state(space, ["a"], 1), cavity_raman_transfer(0))

    def test_bad_direction(self):
        with pytest.raises(ValueError):
            cavity_raman_transfer(0, "sideways")


class TestStirap:
    def test_sender_superposition_exchange(self):
        space = Space(2, 2)
        prim = stirap_exchange(0, 1)
        out = run_primitive(product_state(space, [{"a": 0.6, "c": 0.8}, "a"]), prim)
        target = product_state(space, ["c", {"c": 0.6, "a": 0.8}])
        assert fidelity(out, target.data) > 0.999
        assert out.photon_number() < 1e-3

    def test_classical_input(self):
        space = Space(2, 2)
        out = run_primitive(product_state(space, ["a", "a"]), stirap_exchange(0, 1))
        assert out.population(0, "c") > 0.999 and out.population(1, "c") > 0.999
        assert out.photon_number() < 1e-3

    def test_b_register_rides_along(self):
        space = Space(2, 2)
        out = run_primitive(product_state(space, ["a", "b"]), stirap_exchange(0, 1))
        assert out.population(0, "c") > 0.999 and out.population(1, "d") > 0.999

    @settings(max_examples=6, deadline=None)
    @given(st.floats(0.0, 2 * math.pi), st.floats(0.0, 2 * math.pi))
    def test_amplitudes_preserved(self, theta, phi):
        alpha, beta = math.cos(theta / 2), math.sin(theta / 2) * np.exp(1j * phi)
        space = Space(2, 2)
        out = run_primitive(product_state(space, [{"a": alpha, "c": beta}, "a"]), stirap_exchange(0, 1))
        amp_c = out.data[space.index(["c", "c"])]
        amp_a = out.data[space.index(["c", "a"])]
        assert abs(abs(amp_c) - abs(alpha)) < 1e-3
        assert abs(abs(amp_a) - abs(beta)) < 1e-3

    def test_forward_then_inverse(self):
        space = Space(2, 2)
        psi = product_state(space, [{"a": 0.6, "c": 0.8j}, {"a": R2, "b": R2}])
        fwd = stirap_exchange(0, 1)
        single = stirap_report()["infidelity"]
        back = run_primitive(run_primitive(psi, fwd), fwd.inverse())
        assert fidelity(back, psi.data) >= 1 - 2 * single - 1e-10

    def test_reverse_exchange_returns_register(self):
        space = Space(2, 2)
        psi = product_state(space, [{"a": 0.6, "c": 0.8j}, "a"])
        back = run_primitive(run_primitive(psi, stirap_exchange(0, 1)), stirap_exchange(0, 1, reverse=True))
        assert fidelity(back, psi.data) > 1 - 1e-4

    def test_short_pulses_fail_adiabaticity(self):
        with pytest.raises(AdiabaticityError) as err:
            stirap_exchange(0, 1, duration=12.5)
        assert err.value.peak > 1e-2

    def test_report_at_default(self):
        rep = stirap_report()
        assert rep["peak_excited"] < 1e-2 and rep["infidelity"] < 1e-4 and rep["final_photons"] < 1e-3

    def test_argument_checks(self):
        with pytest.raises(ValueError):
            stirap_exchange(1, 1)
        with pytest.raises(ValueError):
            stirap_exchange(0, 1, overlap_fraction=1.5)
        with pytest.raises(ValueError):
            stirap_exchange(0, 1, g=0.0)

    def test_wire_detunings_follow_level_scheme(self):
        det = wire_detunings(LevelScheme(), 0.0)
        assert det[("sender", ("c", "g"))] == 0.0 and det[("receiver", ("a", "g"))] == 0.0
        assert det[("receiver", ("b", "h"))] == pytest.approx(0.0)
        assert det[("sender", ("d", "h"))] == pytest.approx(4.6 - 2.4)


class TestPhaseFit:
    def test_cancels_branch_phases_up_to_global(self):
        truth = {(0, "c"): 0.3, (1, "c"): -0.7, (1, "a"): 1.1, (0, "a"): 0.0}
        combos = [((0, "c"), (1, "c")), ((0, "c"), (1, "a")), ((0, "a"), (1, "a")), ((0, "a"), (1, "c"))]
        branches = [(levels, sum(truth[k] for k in levels) + 0.25) for levels in combos]
        fitted = fit_local_phases(branches)
        residual = [ph + sum(fitted.get(k, 0.0) for k in levels) for levels, ph in branches]
        assert np.allclose(residual, residual[0], atol=1e-12)

    def test_empty(self):
        assert fit_local_phases([]) == {}


class TestRunPrimitive:
    def test_trace_samples(self):
        space = Space(2, 2)
        out, tr = run_primitive(product_state(space, ["a", "a"]), stirap_exchange(0, 1), samples=20)
        assert len(tr["t"]) == 21 and tr["t"][-1] == pytest.approx(75.0)
        assert tr["excited"].max() < 1e-2

    def test_virtual_primitive(self):
        prim = Primitive("z", (), (), 0.0, ((0, (("f", math.pi),)),))
        space = Space(1, 2)
        out = run_primitive(product_state(space, [{"e": R2, "f": R2}]), prim)
        assert fidelity(out, product_state(space, [{"e": R2, "f": -R2}]).data) == pytest.approx(1)

    def test_noisy_laser_only_path_keeps_trace(self):
        from spectralqc.dynamics import NoiseParams

        space = Space(2, 2)
        psi = product_state(space, [{"e": R2, "f": R2}, "e"], 1)
        out = run_primitive(psi, raman_primitive(0, ("e", "a")), NoiseParams.nv_default())
        out.check()
        assert out.photon_number() < 1.0
        assert out.population(0, "a") > 0.45
