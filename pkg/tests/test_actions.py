import itertools
import json
import math

import numpy as np
import pytest

from primalign.actions import (
    AXES,
    GRIP_CLOSE,
    GRIP_OPEN,
    Action7,
    BinningConfig,
    ParseError,
    PrimitiveTriple,
    all_triples,
    class_indices,
    discretize,
    parse_language,
    render_language,
    representative_action,
    triple_from_indices,
)

REFERENCE_SENTENCE = (
    "move 0.5 meters forward, rotate 90 degrees around the z-axis, "
    "and close the gripper"
)


def random_triple(rng: np.random.Generator, cfg: BinningConfig) -> PrimitiveTriple:
    t_axis = rng.choice(list(AXES) + [None])
    r_axis = rng.choice(list(AXES) + [None])
    return PrimitiveTriple(
        trans_axis=t_axis,
        trans_bin=int(rng.integers(cfg.n_dist_bins)) if t_axis is not None else 0,
        rot_axis=r_axis,
        rot_bin=int(rng.integers(cfg.n_angle_bins)) if r_axis is not None else 0,
        grip=int(rng.integers(2)),
    )


class TestDiscretize:
    def test_reference_action(self, cfg):
        triple = discretize(Action7(0.5, 0, 0, 0, 0, 90, 1), cfg)
        assert triple == PrimitiveTriple("+x", 2, "+z", 2, GRIP_CLOSE)

    def test_all_zero_is_no_motion(self, cfg):
        triple = discretize(Action7(0, 0, 0, 0, 0, 0, 0), cfg)
        assert triple == PrimitiveTriple(None, 0, None, 0, GRIP_OPEN)

    def test_subthreshold_is_no_motion(self, cfg):
        a = Action7(0.004, -0.0049, 0.001, 1.9, -1.0, 0.5, 0)
        triple = discretize(a, cfg)
        assert triple.trans_axis is None and triple.rot_axis is None

    def test_threshold_is_motion(self, cfg):
        # exactly at epsilon counts as motion (strict < for the idle case)
        triple = discretize(Action7(cfg.epsilon_t, 0, 0, 0, 0, 0, 0), cfg)
        assert triple.trans_axis == "+x" and triple.trans_bin == 0

    def test_two_way_ties_follow_axis_priority(self, cfg):
        # oracle: enumerate every 2-way magnitude tie; the earlier axis in
        # x > y > z order must win, keeping its own sign
        mag = 0.05
        for i, j in itertools.combinations(range(3), 2):
            for si, sj in itertools.product((1, -1), repeat=2):
                vec = [0.0, 0.0, 0.0]
                vec[i], vec[j] = si * mag, sj * mag
                triple = discretize(Action7(*vec, 0, 0, 0, 0), cfg)
                expected = ("+" if si > 0 else "-") + "xyz"[i]
                assert triple.trans_axis == expected, (vec, triple)

    def test_rotation_ties(self, cfg):
        triple = discretize(Action7(0, 0, 0, 30, -30, 30, 0), cfg)
        assert triple.rot_axis == "+x"

    def test_gripper_threshold(self, cfg):
        assert discretize(Action7(0, 0, 0, 0, 0, 0, 0.5), cfg).grip == GRIP_CLOSE
        assert discretize(Action7(0, 0, 0, 0, 0, 0, 0.49), cfg).grip == GRIP_OPEN

    def test_non_finite_rejected_with_field_name(self, cfg):
        with pytest.raises(ValueError, match="'ry'"):
            discretize(Action7(0, 0, 0, 0, math.nan, 0, 0), cfg)
        with pytest.raises(ValueError, match="'dx'"):
            discretize(Action7(math.inf, 0, 0, 0, 0, 0, 1), cfg)

    def test_gripper_range_rejected(self, cfg):
        with pytest.raises(ValueError, match="'g'"):
            discretize(Action7(0, 0, 0, 0, 0, 0, 1.5), cfg)

    def test_deterministic_and_total_on_finite_inputs(self, cfg):
        rng = np.random.default_rng(0)
        for _ in range(500):
            a = Action7(*rng.normal(scale=0.2, size=3), *rng.normal(scale=50, size=3),
                        float(rng.integers(2)))
            assert discretize(a, cfg) == discretize(a, cfg)

    def test_scale_robust_within_bin(self, cfg):
        # perturbing the dominant component inside its bin leaves the triple alone
        base = Action7(0.05, 0.01, 0, 20, 0, 0, 1)
        ref = discretize(base, cfg)
        for delta in (-0.02, -0.01, 0.01, 0.04):
            moved = Action7(0.05 + delta, 0.01, 0, 20, 0, 0, 1)
            assert discretize(moved, cfg) == ref

    def test_bin_edges_are_right_open(self, cfg):
        t = discretize(Action7(cfg.dist_edges[0], 0, 0, 0, 0, 0, 0), cfg)
        assert t.trans_bin == 1


class TestRenderLanguage:
    def test_reference_sentence(self, cfg):
        triple = discretize(Action7(0.5, 0, 0, 0, 0, 90, 1), cfg)
        assert render_language(triple, cfg) == REFERENCE_SENTENCE

    def test_no_motion_sentence(self, cfg):
        triple = PrimitiveTriple(None, 0, None, 0, GRIP_OPEN)
        assert (
            render_language(triple, cfg)
            == "stay in place, keep orientation, and open the gripper"
        )

    def test_negative_axis_naming(self, cfg):
        triple = PrimitiveTriple("-y", 0, "-z", 1, GRIP_OPEN)
        text = render_language(triple, cfg)
        assert "meters right" in text
        assert "around the negative z-axis" in text

    def test_invalid_bin_rejected(self, cfg):
        with pytest.raises(ValueError, match="mag_bin"):
            render_language(PrimitiveTriple("+x", 7, None, 0, GRIP_OPEN), cfg)

    def test_round_trip_all_triples(self, cfg):
        for triple in all_triples(cfg):
            assert parse_language(render_language(triple, cfg), cfg) == triple


class TestParseLanguage:
    def test_reference_sentence(self, cfg):
        assert parse_language(REFERENCE_SENTENCE, cfg) == PrimitiveTriple(
            "+x", 2, "+z", 2, GRIP_CLOSE
        )

    def test_empty_input(self, cfg):
        with pytest.raises(ParseError) as exc:
            parse_language("", cfg)
        assert exc.value.offset == 0

    def test_whitespace_tolerated(self, cfg):
        assert parse_language("   " + REFERENCE_SENTENCE + " \n", cfg) is not None

    def test_unknown_direction_offset(self, cfg):
        bad = "move 0.5 meters sideways, keep orientation, and open the gripper"
        with pytest.raises(ParseError) as exc:
            parse_language(bad, cfg)
        assert exc.value.offset == bad.index("sideways")

    def test_unlabeled_magnitude(self, cfg):
        bad = "move 0.123 meters forward, keep orientation, and open the gripper"
        with pytest.raises(ParseError, match="unlabeled distance"):
            parse_language(bad, cfg)

    def test_malformed_clause(self, cfg):
        with pytest.raises(ParseError):
            parse_language("stay in place, and open the gripper", cfg)

    def test_trailing_text_rejected(self, cfg):
        with pytest.raises(ParseError, match="trailing"):
            parse_language(REFERENCE_SENTENCE + " now", cfg)

    def test_fuzz_round_trip(self, cfg):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            triple = random_triple(rng, cfg)
            assert parse_language(render_language(triple, cfg), cfg) == triple


class TestClassIndices:
    def test_reserved_index(self, cfg):
        triple = PrimitiveTriple(None, 0, None, 0, GRIP_OPEN)
        assert class_indices(triple, cfg) == (0, 0, 0)

    def test_bijective_over_full_range(self, cfg):
        seen = set()
        for triple in all_triples(cfg):
            idx = class_indices(triple, cfg)
            assert triple_from_indices(*idx, cfg) == triple
            seen.add(idx)
        assert len(seen) == cfg.n_trans_classes * cfg.n_rot_classes * 2

    def test_default_class_counts_by_enumeration(self, cfg):
        # count distinct ids per head over an exhaustive enumeration
        t_ids = {class_indices(p, cfg)[0] for p in all_triples(cfg)}
        r_ids = {class_indices(p, cfg)[1] for p in all_triples(cfg)}
        g_ids = {class_indices(p, cfg)[2] for p in all_triples(cfg)}
        assert (len(t_ids), len(r_ids), len(g_ids)) == (19, 19, 2)

    def test_out_of_range_rejected(self, cfg):
        with pytest.raises(ValueError):
            triple_from_indices(19, 0, 0, cfg)


class TestBinningConfig:
    def test_json_round_trip(self, cfg):
        assert BinningConfig.from_json(cfg.to_json()) == cfg
        doc = json.loads(cfg.to_json())
        assert set(doc) == {
            "epsilon_t", "epsilon_r", "dist_edges", "angle_edges",
            "dist_labels", "angle_labels", "axis_names",
        }

    def test_edges_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            BinningConfig(dist_edges=(0.1, 0.1), dist_labels=(0.01, 0.2, 0.5))

    def test_label_count_must_match(self):
        with pytest.raises(ValueError, match="labels"):
            BinningConfig(dist_labels=(0.01, 0.05))

    def test_labels_must_sit_inside_bins(self):
        with pytest.raises(ValueError, match="not inside"):
            BinningConfig(dist_labels=(0.03, 0.05, 0.5))

    def test_thresholds_positive(self):
        with pytest.raises(ValueError, match="thresholds"):
            BinningConfig(epsilon_t=0.0)

    def test_representative_action_round_trips(self, cfg):
        rng = np.random.default_rng(3)
        for _ in range(200):
            triple = random_triple(rng, cfg)
            assert discretize(representative_action(triple, cfg), cfg) == triple
