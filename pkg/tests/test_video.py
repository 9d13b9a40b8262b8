import numpy as np
import pytest

from evclip.errors import ConfigError, DataError, DimensionError
from evclip.events import event_frame
from evclip.synth import Jitter, events_from_frames, gen_scene, jitter_sequence
from evclip.video import (
    build_event_instance,
    diff_counts,
    frame_diff,
    majority_vote_label,
    read_frame_dump,
    read_instances,
    segment_video,
    to_gray,
    write_frame_dump,
    write_instances,
)
from oracles import majority_by_count


def test_identical_frames_no_events():
    f = np.full((4, 4), 100, np.uint8)
    assert not frame_diff(f, f.copy()).any()


def test_threshold_is_strict():
    prev = np.full((3, 3), 100, np.uint8)
    for delta, fired in ((25, 0), (26, 1), (-25, 0), (-26, 1)):
        curr = prev.copy()
        curr[1, 2] = 100 + delta
        m = frame_diff(prev, curr, 25)
        assert m[1, 2] == fired and m.sum() == fired


def test_window_of_16_gives_15_diffs():
    frames = [np.full((2, 2), 0 if k % 2 else 200, np.uint8) for k in range(16)]
    assert diff_counts(frames).max() == 15
    with pytest.raises(ConfigError):
        diff_counts(frames[:1])


def test_instance_examples():
    still = [np.full((4, 4), 50, np.uint8)] * 16
    assert not build_event_instance(still).any()
    flip = [np.where(np.arange(16).reshape(4, 4) == 5, 200 * (k % 2), 0).astype(np.uint8) for k in range(16)]
    f = build_event_instance(flip)
    assert f.reshape(-1)[5] == pytest.approx(15 / 16)
    assert (f > 0).sum() == 1


def test_alternating_disjoint_pixels():
    frames = []
    a = b = 0
    for k in range(16):
        # pixel 0 changes on even transitions, pixel 1 on odd ones
        if k and k % 2 == 1:
            a = 200 - a
        elif k:
            b = 200 - b
        frames.append(np.array([[a, b]], np.uint8))
    f = build_event_instance(frames)
    assert sorted(f.ravel().tolist()) == pytest.approx([7 / 9, 8 / 9])


def test_majority_examples():
    assert majority_vote_label([0] * 16) == 0
    assert majority_vote_label([1] * 9 + [0] * 7) == 1
    assert majority_vote_label([1] * 8 + [0] * 8) == 1
    with pytest.raises(DataError):
        majority_vote_label([0, 2])


def test_majority_matches_recount(rng):
    for _ in range(1000):
        w = int(rng.integers(1, 33))
        labels = rng.integers(0, 2, size=w).tolist()
        assert majority_vote_label(labels) == majority_by_count(labels)


def clip(n, h=6, w=6, seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(n, h, w), dtype=np.uint8)


@pytest.mark.parametrize("n,stride,expected", [(48, 16, 3), (47, 16, 2), (32, 8, 3)])
def test_segment_counts(n, stride, expected):
    inst = segment_video(clip(n), stride=stride)
    assert len(inst) == expected
    assert all(b - a == 16 for a, b in (i.source_range for i in inst))


def test_segment_ranges_and_labels():
    labels = [0] * 20 + [1] * 28
    inst = segment_video(clip(48), labels)
    assert [i.source_range for i in inst] == [(0, 16), (16, 32), (32, 48)]
    assert [i.label for i in inst] == [majority_by_count(labels[a:b]) for a, b in (i.source_range for i in inst)]


def test_segment_errors():
    with pytest.raises(DataError):
        segment_video(clip(10))
    with pytest.raises(ConfigError):
        segment_video(clip(20), window=1)
    with pytest.raises(DataError):
        segment_video(clip(20), labels=[0] * 19)
    with pytest.raises(DimensionError):
        segment_video([np.zeros((4, 4), np.uint8)] * 8 + [np.zeros((4, 5), np.uint8)] * 8)


def test_segment_deterministic_and_threshold_255():
    c = clip(32)
    a, b = segment_video(c), segment_video(c.copy())
    assert all(x.frame.tobytes() == y.frame.tobytes() for x, y in zip(a, b))
    assert all(not i.frame.any() for i in segment_video(c, threshold=255))


def test_instance_frames_obey_frame_invariants():
    for inst in segment_video(clip(64, seed=3), stride=4):
        assert inst.frame.min() >= 0 and inst.frame.max() < 1


def test_color_frames_use_luma():
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[0, 0] = (255, 0, 0)
    rgb[1, 1] = (0, 0, 255)
    g = to_gray(rgb)
    assert g[0, 0] == 76 and g[1, 1] == 29 and g.dtype == np.uint8


def test_containers_round_trip(tmp_path):
    c = clip(40)
    write_frame_dump(c, tmp_path / "v.vid")
    np.testing.assert_array_equal(read_frame_dump(tmp_path / "v.vid"), c)
    inst = segment_video(c, [1] * 40, stride=8)
    write_instances(inst, tmp_path / "i.evf")
    back = read_instances(tmp_path / "i.evf")
    assert [(i.label, i.source_range) for i in back] == [(i.label, i.source_range) for i in inst]
    np.testing.assert_allclose(back[1].frame, inst[1].frame, atol=1e-7)
    (tmp_path / "bad.vid").write_bytes(b"VID1" + bytes(8) + b"x")
    with pytest.raises(DataError):
        read_frame_dump(tmp_path / "bad.vid")


def test_simulated_events_match_frame_differencing():
    """Events from the simulator and frames through video differencing give one frame."""
    jit = Jitter(steps=8, shift_x=2, shift_y=2, brightness=0.2)
    for c in range(10):
        frames = jitter_sequence(gen_scene(c, seed=c, num_classes=10), jit, seed=c)
        via_events = event_frame(events_from_frames(frames, jit.threshold), cap=None)
        np.testing.assert_array_equal(via_events, build_event_instance(frames, jit.threshold))
