import json

import numpy as np
import pytest

from uar.errors import ParameterError, SequenceTooShortError
from uar.transforms import (DIRECTION_GROUP, LABEL_BY_KIND, SPEED_GROUP,
                            SPEED_RATIOS, double_flip, make_batch,
                            original_sequence, random_point_speed_up,
                            record_from_json, records_from_jsonl,
                            records_to_jsonl, shuffle, speed_up,
                            speed_up_length, temporal_crop, warp)


def indices(seq):
    return seq.indices.tolist()


def test_label_scheme_is_the_fixed_bijection():
    assert LABEL_BY_KIND == {
        "original": 1, "speed_half": 2, "speed_quarter": 3, "speed_eighth": 4,
        "random_point_speed_up": 5, "double_flip": 6, "shuffle": 7, "warp": 8,
    }
    assert set(SPEED_GROUP) == {"speed_half", "speed_quarter", "speed_eighth"}
    assert set(DIRECTION_GROUP) == {"random_point_speed_up", "double_flip",
                                    "shuffle", "warp"}


def test_original_sequence():
    seq = original_sequence(5, "clip")
    assert indices(seq) == [0, 1, 2, 3, 4]
    assert seq.t == 5 and seq.level == "clip"
    with pytest.raises(SequenceTooShortError):
        original_sequence(0)
    with pytest.raises(ParameterError):
        original_sequence(3, "chunk")


# -- speed-up --------------------------------------------------------------


def test_speed_up_goldens():
    s48 = original_sequence(48)
    assert indices(speed_up(s48, 0.5)) == list(range(0, 48, 2))
    assert indices(speed_up(s48, 0.25)) == list(range(0, 48, 4))
    assert indices(speed_up(s48, 0.125)) == [0, 8, 16, 24, 32, 40]
    assert indices(speed_up(original_sequence(7), 0.5)) == [0, 2, 4, 6]


def test_speed_up_length_is_ceil():
    for t in range(1, 200):
        for ratio in SPEED_RATIOS:
            if t >= round(1 / ratio):
                assert len(speed_up(original_sequence(t), ratio)) == \
                    speed_up_length(t, ratio) == -(-t * 1 // round(1 / ratio)) \
                    == int(np.ceil(t * ratio))


def test_speed_up_composes():
    # two half-speed passes equal one quarter-speed pass
    for t in (8, 48, 100):
        seq = original_sequence(t)
        twice = speed_up(speed_up(seq, 0.5), 0.5)
        assert indices(twice) == indices(speed_up(seq, 0.25))


def test_speed_up_rejects_bad_ratio_and_short_input():
    with pytest.raises(ParameterError):
        speed_up(original_sequence(10), 0.3)
    with pytest.raises(SequenceTooShortError):
        speed_up(original_sequence(7), 0.125)


# -- random-point speed-up -------------------------------------------------


def test_random_point_speed_up_worked_example():
    assert indices(random_point_speed_up(original_sequence(8), ri=3, rho=2)) == \
        [0, 1, 2, 4, 6]


def test_random_point_speed_up_edges():
    s = original_sequence(8)
    # ri = t is the identity
    assert indices(random_point_speed_up(s, ri=8, rho=4)) == list(range(8))
    # ri = 1 subsamples from the very start
    assert indices(random_point_speed_up(s, ri=1, rho=4)) == [0, 4]
    # no forced tail element
    assert indices(random_point_speed_up(original_sequence(10), ri=2, rho=8)) == [0, 1, 9]
    assert indices(random_point_speed_up(original_sequence(9), ri=2, rho=8)) == [0, 1]


def test_random_point_speed_up_validation():
    s = original_sequence(8)
    for ri in (0, 9):
        with pytest.raises(ParameterError):
            random_point_speed_up(s, ri=ri, rho=2)
    with pytest.raises(ParameterError):
        random_point_speed_up(s, ri=3, rho=3)


def test_random_point_prefix_property():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = int(rng.integers(4, 60))
        ri = int(rng.integers(1, t + 1))
        rho = int(rng.choice([2, 4, 8]))
        out = indices(random_point_speed_up(original_sequence(t), ri, rho))
        assert out[:ri] == list(range(ri))
        tail = out[ri:]
        assert tail == list(range(ri - 1 + rho, t, rho))


# -- double flip -----------------------------------------------------------


def test_double_flip_golden():
    assert indices(double_flip(original_sequence(3))) == [0, 1, 2, 1, 0]
    assert indices(double_flip(original_sequence(5))) == [0, 1, 2, 3, 4, 3, 2, 1, 0]


def test_double_flip_palindrome_property():
    for t in (2, 7, 16):
        out = indices(double_flip(original_sequence(t)))
        assert len(out) == 2 * t - 1
        assert out == out[::-1]
    with pytest.raises(SequenceTooShortError):
        double_flip(original_sequence(1))


# -- shuffle ---------------------------------------------------------------


def test_shuffle_golden_seed_42():
    out = shuffle(original_sequence(5), np.random.default_rng(42))
    assert indices(out) == [4, 2, 3, 1, 0]


def test_shuffle_never_identity():
    for seed in range(200):
        out = indices(shuffle(original_sequence(3), np.random.default_rng(seed)))
        assert sorted(out) == [0, 1, 2]
        assert out != [0, 1, 2]
    with pytest.raises(SequenceTooShortError):
        shuffle(original_sequence(2), np.random.default_rng(0))


# -- warp ------------------------------------------------------------------


def test_warp_golden_seed_42():
    out = warp(original_sequence(8), np.random.default_rng(42))
    assert indices(out) == [0, 3, 4, 6]


def test_warp_properties():
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = int(rng.integers(5, 80))
        out = indices(warp(original_sequence(t), rng))
        assert len(out) == round(t * 0.5)
        assert out == sorted(out)
        assert len(set(out)) == len(out)
    out = indices(warp(original_sequence(40), rng, keep_fraction=0.25))
    assert len(out) == 10
    with pytest.raises(ParameterError):
        warp(original_sequence(10), rng, keep_fraction=1.0)
    with pytest.raises(SequenceTooShortError):
        warp(original_sequence(2), rng)  # round(2 * 0.5) = 1 unit, too few


# -- temporal crop ---------------------------------------------------------


def test_temporal_crop_bounds_and_contiguity():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t = int(rng.integers(4, 120))
        seq = original_sequence(t)
        out = indices(temporal_crop(seq, rng))
        assert int(np.ceil(0.75 * t)) <= len(out) <= t
        assert out == list(range(out[0], out[0] + len(out)))
    with pytest.raises(SequenceTooShortError):
        temporal_crop(original_sequence(3), rng)


def test_temporal_crop_composes_with_transforms():
    rng = np.random.default_rng(3)
    flipped = double_flip(original_sequence(10))
    out = temporal_crop(flipped, rng)
    # crop selects a contiguous span of the transformed sequence
    full = indices(flipped)
    got = indices(out)
    start = full.index(got[0])
    for offset, value in enumerate(got):
        assert full[start + offset] == value


# -- make_batch ------------------------------------------------------------


def test_make_batch_frame_level_structure():
    recs = make_batch(original_sequence(96), np.random.default_rng(0), min_len=48)
    assert [r.label for r in recs] == [1, 2, 5, 6, 7, 8]
    assert [r.kind for r in recs] == ["original", "speed_half",
                                      "random_point_speed_up", "double_flip",
                                      "shuffle", "warp"]
    assert indices(recs[0].output) == list(range(96))
    assert recs[1].params == {"ratio": 0.5}
    # the change point stays in [n/4, n/2]: the extremes collapse onto the
    # original or the plain speed-up record, and anything before n/4 can be
    # cropped away entirely
    for seed in range(50):
        rec = make_batch(original_sequence(96), np.random.default_rng(seed), 48)[2]
        assert 24 <= rec.params["ri"] <= 48


def test_make_batch_ratio_filter():
    # 96 frames: only 1/2 survives (ceil(96/4) = 24 < 48)
    for seed in range(20):
        recs = make_batch(original_sequence(96), np.random.default_rng(seed), min_len=48)
        assert recs[1].label == 2
    # 192 frames: 1/2 and 1/4 survive, never 1/8 (24 < 48)
    labels = {make_batch(original_sequence(192), np.random.default_rng(s),
                         min_len=48)[1].label for s in range(40)}
    assert labels == {2, 3}
    # 384 frames: all three ratios survive
    labels = {make_batch(original_sequence(384), np.random.default_rng(s),
                         min_len=48)[1].label for s in range(60)}
    assert labels == {2, 3, 4}


def test_make_batch_too_short():
    # at 48 frames no ratio survives the 48-frame filter
    with pytest.raises(SequenceTooShortError):
        make_batch(original_sequence(48), np.random.default_rng(0), min_len=48)
    # 95 frames: ceil(95/2) = 48 >= 48 works
    recs = make_batch(original_sequence(95), np.random.default_rng(0), min_len=48)
    assert len(recs[1].output) == 48
    with pytest.raises(SequenceTooShortError):
        make_batch(original_sequence(2), np.random.default_rng(0), min_len=3)


def test_make_batch_clip_level():
    recs = make_batch(original_sequence(24, "clip"), np.random.default_rng(5), min_len=3)
    assert len(recs) == 6
    assert all(r.output.level == "clip" for r in recs)
    labels = {make_batch(original_sequence(24, "clip"), np.random.default_rng(s),
                         min_len=3)[1].label for s in range(60)}
    assert labels == {2, 3, 4}


def test_make_batch_group_exclusion():
    rng = np.random.default_rng(6)
    no_speed = make_batch(original_sequence(96), rng, 48, exclude=("speed_up",))
    assert [r.label for r in no_speed] == [1, 5, 6, 7, 8]
    no_direction = make_batch(original_sequence(96), np.random.default_rng(6), 48,
                              exclude=DIRECTION_GROUP)
    assert [r.label for r in no_direction] == [1, 2]
    one_out = make_batch(original_sequence(96), np.random.default_rng(6), 48,
                         exclude=("shuffle",))
    assert [r.label for r in one_out] == [1, 2, 5, 6, 8]
    with pytest.raises(ParameterError):
        make_batch(original_sequence(96), rng, 48, exclude=("speed_half",))


def test_make_batch_deterministic_per_seed():
    a = make_batch(original_sequence(96), np.random.default_rng(9), 48)
    b = make_batch(original_sequence(96), np.random.default_rng(9), 48)
    for ra, rb in zip(a, b):
        assert indices(ra.output) == indices(rb.output)
        assert ra.params == rb.params


# -- serialization ---------------------------------------------------------


def test_jsonl_round_trip():
    recs = make_batch(original_sequence(96), np.random.default_rng(7), 48)
    text = records_to_jsonl(recs)
    for line in text.strip().splitlines():
        json.loads(line)  # every line is standalone JSON
    back = records_from_jsonl(text)
    assert len(back) == len(recs)
    for orig, rec in zip(recs, back):
        assert rec.label == orig.label
        assert rec.kind == orig.kind
        assert rec.params == orig.params
        assert indices(rec.output) == indices(orig.output)
        assert rec.output.t == orig.output.t


def test_record_from_json_validates_indices():
    with pytest.raises(ParameterError):
        record_from_json({"kind": "original", "label": 1, "params": {},
                          "t": 4, "level": "frame", "indices": [0, 5]})
