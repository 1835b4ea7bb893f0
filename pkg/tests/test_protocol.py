import math

import numpy as np
import pytest

from conftest import storage_pair
from spectralqc.dynamics import NoiseParams
from spectralqc.hilbert import LEVEL_INDEX, Space, fidelity, partial_trace, product_state
from spectralqc.protocol import (
    CHECKPOINT_LABELS,
    StageError,
    apply_retrieve,
    apply_store,
    cnot,
    cnot_stages,
    cnot_target,
    ideal_cnot,
    intermediate_state_checks,
    merge_parallel,
    parity,
    readout,
    run_stages,
    storage_h,
    storage_x,
    storage_z,
    wire_roles,
    working_levels,
)
from spectralqc.pulses import raman_primitive, run_primitive, stirap_exchange

R2 = 1 / math.sqrt(2)


class TestConventions:
    def test_parity_and_roles(self):
        assert parity(1) == "odd" and parity(2) == "even"
        assert wire_roles(0, 1) == (1, 0) and wire_roles(4, 3) == (4, 3)
        with pytest.raises(ValueError):
            wire_roles(0, 2)
        assert working_levels("odd") == ("a", "c") and working_levels("even") == ("a", "b")

    def test_ideal_cnot_truth_table(self):
        u = ideal_cnot()
        e, f = LEVEL_INDEX["e"], LEVEL_INDEX["f"]
        idx = [c * 8 + t for c in (e, f) for t in (e, f)]
        perm = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
        assert np.array_equal(u[np.ix_(idx, idx)], perm)
        assert np.allclose(u @ u, np.eye(64))


class TestRetrieveStore:
    def test_odd_pattern_basis(self):
        out = apply_retrieve(product_state(Space(2, 2), ["e", "e"]), 1, "odd")
        assert out.population(1, "a") > 1 - 1e-6

    def test_even_pattern_superposition(self):
        space = Space(1, 2)
        out = apply_retrieve(product_state(space, [{"e": R2, "f": R2}]), 0, "even")
        assert fidelity(out, product_state(space, [{"a": R2, "b": R2}]).data) > 1 - 1e-3

    def test_odd_pattern_superposition(self):
        space = Space(1, 2)
        out = apply_retrieve(product_state(space, [{"e": 0.6, "f": 0.8}]), 0, "odd")
        assert fidelity(out, product_state(space, [{"a": 0.6, "c": 0.8}]).data) > 1 - 1e-3

    def test_store_entangled_working_state(self):
        # target (channel 0, even) holds B; control (channel 1, odd) holds A
        space = Space(2, 2)
        psi = (product_state(space, ["a", "a"]).data + product_state(space, ["b", "c"]).data) * R2
        from spectralqc.hilbert import CompositeState

        st = CompositeState(space, psi)
        st = apply_store(apply_store(st, 0, "even"), 1, "odd")
        ideal = (product_state(space, ["e", "e"]).data + product_state(space, ["f", "f"]).data) * R2
        assert fidelity(st, ideal) > 0.999

    @pytest.mark.parametrize("parity", ["odd", "even"])
    def test_retrieve_then_store_round_trip(self, parity):
        st = product_state(Space(1, 2), [{"e": 0.6, "f": 0.8j}])
        back = apply_store(apply_retrieve(st, 0, parity), 0, parity)
        assert fidelity(back, st.data) > 1 - 2e-3

    def test_store_rejects_storage_input(self):
        with pytest.raises(StageError):
            apply_store(product_state(Space(1, 2), ["e"]), 0, "odd")

    def test_retrieve_rejects_working_input(self):
        with pytest.raises(StageError):
            apply_retrieve(product_state(Space(1, 2), ["a"]), 0, "odd")

    def test_merge_parallel_guards(self):
        a, b = raman_primitive(0, ("e", "a")), raman_primitive(0, ("f", "c"))
        with pytest.raises(ValueError, match="disjoint"):
            merge_parallel([a, b], "x")
        with pytest.raises(ValueError, match="laser-only"):
            merge_parallel([stirap_exchange(0, 1)], "x")


class TestCnot:
    @pytest.mark.parametrize("control,target", [("e", "e"), ("e", "f"), ("f", "e"), ("f", "f")])
    def test_basis_inputs(self, control, target):
        st = storage_pair(control, target)
        res = cnot(1, 0, state=st)
        assert res.fidelity >= 0.99
        flipped = {"e": "f", "f": "e"}[target] if control == "f" else target
        assert res.state.population(0, flipped) > 0.99
        assert res.state.photon_number() <= 1e-3

    def test_control_off_is_identity(self):
        st = storage_pair("e", "e")
        res = cnot(1, 0, state=st)
        assert fidelity(res.state, st.data) >= 0.999

    def test_superposition_entangles(self):
        st = storage_pair({"e": R2, "f": R2}, "e")
        state, fid, stages = cnot(1, 0, state=st)
        assert fid >= 0.99
        assert [s.name for s in stages] == ["retrieve", "exchange", "gate", "exchange back", "store"]
        red = partial_trace(state, [0])
        e, f = LEVEL_INDEX["e"], LEVEL_INDEX["f"]
        assert red[e, e].real == pytest.approx(0.5, abs=1e-3)
        assert abs(red[e, f]) < 1e-3

    def test_receiver_as_control(self):
        # control on the lower (receiving) channel uses the b <-> d gate
        st = storage_pair("e", {"e": 0.6, "f": 0.8})
        res = cnot(0, 1, state=st)
        assert res.fidelity >= 0.99

    def test_cnot_twice_is_identity(self):
        st = storage_pair({"e": 0.6, "f": 0.8j}, {"e": R2, "f": -R2})
        once = cnot(1, 0, state=st)
        twice = cnot(1, 0, state=once.state)
        assert fidelity(twice.state, st.data) >= 0.98

    def test_spectator_unchanged(self):
        space = Space(3, 2)
        spectator = {"e": 0.6, "f": 0.8j}
        st = product_state(space, ["e", {"e": R2, "f": R2}, spectator])
        res = cnot(1, 0, state=st)
        v = np.zeros(8, dtype=complex)
        v[LEVEL_INDEX["e"]], v[LEVEL_INDEX["f"]] = 0.6, 0.8j
        red = partial_trace(res.state, [2])
        assert np.real(v.conj() @ red @ v) >= 0.999

    def test_checkpoints_classical_branch(self):
        res = cnot(1, 0, state=storage_pair("e", "e"))
        space = res.state.space
        expect = [["a", "a"], ["c", "c"], ["c", "c"], ["a", "a"]]
        for rec, levels in zip(res.trace[:4], expect):
            # atom order is (target = channel 0, control = channel 1)
            assert fidelity(rec["state"], product_state(space, levels[::-1]).data) > 0.99

    def test_checkpoints_superposition(self):
        res = cnot(1, 0, state=storage_pair({"e": R2, "f": R2}, "e"))
        checks = intermediate_state_checks(res)
        assert checks["passed"]
        assert [r["checkpoint"] for r in checks["checkpoints"]] == list(CHECKPOINT_LABELS)
        space = res.state.space
        # the four checkpoint states, atoms listed as (channel 0, channel 1)
        ket = lambda *lv: product_state(space, list(lv)).data
        states = [
            (ket("a", "a") + ket("a", "c")) * R2,
            (ket("c", "c") + ket("a", "c")) * R2,
            (ket("c", "c") + ket("b", "c")) * R2,
            (ket("a", "a") + ket("b", "c")) * R2,
        ]
        for rec, target in zip(res.trace[:4], states):
            assert fidelity(rec["state"], target) >= 0.99

    def test_stage_timing(self):
        stages = cnot_stages(1, 0)
        for a, b in zip(stages, stages[1:]):
            assert b.start == pytest.approx(a.start + a.duration)
        assert all(p.envelope.start >= stages[1].start - 1e-9 for p in stages[1].pulses)

    def test_run_stages_matches_cnot(self):
        st = storage_pair({"e": R2, "f": R2}, "e")
        out = run_stages(st, cnot_stages(1, 0))
        assert fidelity(out, cnot_target(st, 1, 0)) >= 0.99

    def test_preconditions(self):
        with pytest.raises(StageError):
            cnot(0, 2, state=product_state(Space(3, 2), ["e", "e", "e"]))
        with pytest.raises(StageError):
            cnot(1, 0, state=product_state(Space(2, 2), ["a", "e"]))
        with pytest.raises(ValueError):
            cnot(1, 0)


@pytest.fixture(scope="module")
def noisy_default():
    return cnot(1, 0, noise=NoiseParams.nv_default(), state=storage_pair({"e": R2, "f": R2}, "e"))


@pytest.mark.slow
class TestNoisyCnot:
    def test_trace_and_positivity(self, noisy_default):
        noisy_default.state.check(atol_norm=1e-8)

    def test_more_noise_lowers_fidelity(self, noisy_default):
        worse = cnot(1, 0, noise=NoiseParams.nv_default().scaled(10),
                     state=storage_pair({"e": R2, "f": R2}, "e"))
        assert noisy_default.fidelity > worse.fidelity

    def test_strong_cavity_loss_breaks_a_checkpoint(self):
        res = cnot(1, 0, noise=NoiseParams(kappa_width=140.0), state=storage_pair({"e": R2, "f": R2}, "e"))
        overlaps = [r["overlap"] for r in intermediate_state_checks(res)["checkpoints"]]
        assert min(overlaps) < 0.99


class TestSingleQubitGates:
    @pytest.mark.parametrize("make,matrix", [
        (storage_x, np.array([[0, 1], [1, 0]])),
        (lambda a: storage_z(a), np.diag([1, -1])),
        (storage_h, np.array([[1, 1], [1, -1]]) / math.sqrt(2)),
    ])
    def test_storage_gate_matches_matrix(self, make, matrix):
        space = Space(1, 2)
        amps = np.array([0.6, 0.8j])
        out = run_primitive(product_state(space, [{"e": amps[0], "f": amps[1]}]), make(0))
        new = matrix @ amps
        target = product_state(space, [{"e": new[0], "f": new[1]}])
        assert fidelity(out, target.data) > 1 - 1e-6


class TestReadout:
    def test_certain_outcome_with_efficiency(self):
        st = product_state(Space(1, 2), ["e"])
        rng = np.random.default_rng(1)
        assert all(readout(st, 0, "e", rng)[0] == 1 for _ in range(50))
        clicks = [readout(st, 0, "e", rng, efficiency=0.7)[0] for _ in range(2000)]
        assert np.mean(clicks) == pytest.approx(0.7, abs=0.035)

    def test_superposition_statistics(self):
        st = product_state(Space(1, 2), [{"e": R2, "f": R2}])
        rng = np.random.default_rng(2024)
        bits = [readout(st, 0, "e", rng)[0] for _ in range(10_000)]
        assert np.mean(bits) == pytest.approx(0.5, abs=0.02)

    def test_repeatable(self):
        st = product_state(Space(1, 2), [{"e": R2, "f": R2}])
        rng = np.random.default_rng(5)
        for _ in range(20):
            bit, post = readout(st, 0, "e", rng)
            again, _ = readout(post, 0, "e", rng)
            assert again == bit
            assert post.population(0, "e") == pytest.approx(float(bit), abs=1e-6)

    def test_post_state_is_storage(self):
        st = product_state(Space(1, 2), [{"e": R2, "f": R2}])
        _, post = readout(st, 0, "e", np.random.default_rng(0))
        assert post.population(0, "g") < 1e-9

    def test_dark_counts(self):
        st = product_state(Space(1, 2), ["f"])
        rng = np.random.default_rng(3)
        clicks = [readout(st, 0, "e", rng, dark_count=0.1)[0] for _ in range(2000)]
        assert np.mean(clicks) == pytest.approx(0.1, abs=0.02)

    def test_rejects_bad_arguments(self):
        st = product_state(Space(1, 2), ["e"])
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            readout(st, 0, "g", rng)
        with pytest.raises(ValueError):
            readout(st, 0, "e", rng, efficiency=1.5)
