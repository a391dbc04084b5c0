import json

import numpy as np
import pytest

from nvmpuf import chains
from nvmpuf.chains import (
    ChainFormatError,
    ChainParams,
    ChainValidationError,
    MarkovChainSpec,
    OpTag,
    StateSpec,
    build_ampuf_chain,
    build_reap_nvm_chain,
    builtin_chain,
    validate,
)


def two_state(p_stay=0.0):
    return MarkovChainSpec(
        (StateSpec(0, "A"), StateSpec(1, "B")),
        np.array([[p_stay, 1.0 - p_stay], [0.0, 1.0]]),
        0,
        frozenset({1}),
    )


def test_minimal_absorbing_chain_is_valid():
    assert validate(two_state()) == []


def test_row_sum_violation_reported():
    spec = MarkovChainSpec(
        (StateSpec(0, "A"), StateSpec(1, "B")),
        np.array([[0.4, 0.5], [0.0, 1.0]]),
        0,
        frozenset({1}),
    )
    violations = validate(spec)
    assert any("row 0 sums to 0.9" in v for v in violations)


def test_terminal_with_self_loop_half_not_absorbing():
    spec = MarkovChainSpec(
        (StateSpec(0, "A"), StateSpec(1, "B")),
        np.array([[0.0, 1.0], [0.5, 0.5]]),
        0,
        frozenset({1}),
    )
    violations = validate(spec)
    assert any("not absorbing" in v for v in violations)


def test_terminal_must_be_untagged():
    spec = MarkovChainSpec(
        (StateSpec(0, "A"), StateSpec(1, "B", OpTag.SET)),
        np.array([[0.0, 1.0], [0.0, 1.0]]),
        0,
        frozenset({1}),
    )
    assert any("op tag" in v for v in validate(spec))


def test_unreachable_terminal_reported():
    spec = MarkovChainSpec(
        (StateSpec(0, "A"), StateSpec(1, "B"), StateSpec(2, "C")),
        np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        0,
        frozenset({2}),
    )
    violations = validate(spec)
    assert any("reach" in v for v in violations)


def test_dense_id_violation():
    spec = MarkovChainSpec(
        (StateSpec(0, "A"), StateSpec(2, "B")),
        np.array([[0.0, 1.0], [0.0, 1.0]]),
        0,
        frozenset({2}),
    )
    assert validate(spec)


class TestReapNvmChain:
    def test_branch_probabilities(self):
        chain = build_reap_nvm_chain()
        row = chain.transition[chain.initial_state]
        set_mass = row[sorted(chain.set_states)].sum()
        reset_mass = row[sorted(chain.reset_states)].sum()
        assert set_mass == pytest.approx(1 / 128)
        assert reset_mass == pytest.approx(1 / 128)

    def test_initial_row_sums_to_one_for_any_pair_count(self):
        for n_pairs in (2, 3, 16, 128, 999):
            chain = build_reap_nvm_chain(ChainParams(n_pairs=n_pairs))
            assert chain.transition[0].sum() == pytest.approx(1.0)

    def test_two_pairs_leaves_no_untouched_path(self):
        chain = build_reap_nvm_chain(ChainParams(n_pairs=2))
        terminal = next(iter(chain.terminal_states))
        assert chain.transition[0, terminal] == 0.0

    def test_single_pair_rejected(self):
        with pytest.raises(ValueError):
            build_reap_nvm_chain(ChainParams(n_pairs=1))

    def test_geometric_self_loop_matches_mean(self):
        chain = build_reap_nvm_chain(ChainParams(mean_set_pulses=3.5))
        (set_state,) = chain.set_states
        assert chain.transition[set_state, set_state] == pytest.approx(1 - 1 / 3.5)

    @pytest.mark.parametrize("level_expanded", [False, True])
    def test_always_valid(self, level_expanded):
        chain = build_reap_nvm_chain(level_expanded=level_expanded)
        assert validate(chain) == []

    def test_level_expanded_set_branch_mass(self):
        chain = build_reap_nvm_chain(level_expanded=True)
        row = chain.transition[0]
        assert row[sorted(chain.set_states)].sum() == pytest.approx(1 / 128)


class TestAmpufChain:
    def test_every_challenge_enters_set_branch(self):
        chain = build_ampuf_chain()
        row = chain.transition[chain.initial_state]
        assert row[sorted(chain.set_states)].sum() == pytest.approx(1.0)

    def test_degenerate_single_pulse_loop(self):
        chain = build_ampuf_chain(ChainParams(mean_set_pulses=1.0))
        (set_state,) = chain.set_states
        assert chain.transition[set_state, set_state] == 0.0

    @pytest.mark.parametrize("level_expanded", [False, True])
    def test_always_valid(self, level_expanded):
        assert validate(build_ampuf_chain(level_expanded=level_expanded)) == []


def test_tilted_weights_uniform_at_natural_mean():
    costs = chains.pulse_costs(8)
    weights = chains.tilted_level_weights(costs, costs.mean())
    assert np.allclose(weights, 1 / 8)


def test_tilted_weights_hit_requested_mean():
    costs = chains.pulse_costs(8)
    for target in (1.5, 2.826, 5.601, 6.5):
        weights = chains.tilted_level_weights(costs, target)
        assert weights @ costs == pytest.approx(target, abs=1e-9)
        assert weights.sum() == pytest.approx(1.0)


def test_tilted_weights_out_of_range():
    with pytest.raises(ValueError):
        chains.tilted_level_weights(chains.pulse_costs(8), 7.5)


def test_calibrated_builtin_uses_frozen_target():
    chain = builtin_chain("reap-nvm", calibrated=True)
    assert validate(chain) == []
    assert len(chain.set_states) > 1  # level-expanded countdown


def test_chain_params_validation():
    with pytest.raises(ValueError):
        ChainParams(n_levels=6)
    with pytest.raises(ValueError):
        ChainParams(mean_set_pulses=0.5)
    with pytest.raises(ValueError):
        ChainParams(n_pairs=0)


class TestChainFiles:
    def test_round_trip_is_identical(self, tmp_path):
        chain = build_reap_nvm_chain()
        path = tmp_path / "chain.json"
        chains.save_chain(chain, path)
        text = path.read_text()
        reloaded = chains.load_chain(path)
        assert chains.export_chain(reloaded) == text

    def test_missing_transition_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"states": [], "initial": 0, "terminal": []}))
        with pytest.raises(ChainFormatError, match="transition"):
            chains.load_chain(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(ChainFormatError):
            chains.load_chain(path)

    def test_hand_written_chain_validates_row_sums(self, tmp_path):
        doc = {
            "states": [
                {"id": 0, "label": "start", "op_tag": "none"},
                {"id": 1, "label": "work", "op_tag": "set"},
                {"id": 2, "label": "done", "op_tag": "none"},
            ],
            "transition": [[0.0, 0.9, 0.1], [0.0, 0.2, 0.8], [0.0, 0.0, 1.0]],
            "initial": 0,
            "terminal": [2],
        }
        path = tmp_path / "ok.json"
        path.write_text(json.dumps(doc))
        assert validate(chains.load_chain(path)) == []

        doc["transition"][0] = [0.0, 0.8, 0.1]
        path.write_text(json.dumps(doc))
        with pytest.raises(ChainValidationError) as err:
            chains.load_chain(path)
        assert any("sums" in v for v in err.value.violations)

    def test_loaded_chain_equals_builtin(self, tmp_path):
        chain = build_ampuf_chain(level_expanded=True)
        path = tmp_path / "amp.json"
        chains.save_chain(chain, path)
        loaded = chains.load_chain(path)
        assert np.array_equal(loaded.transition, chain.transition)
        assert loaded.states == chain.states
        assert loaded.terminal_states == chain.terminal_states


def test_spec_is_immutable():
    chain = build_reap_nvm_chain()
    with pytest.raises(ValueError):
        chain.transition[0, 0] = 0.5
