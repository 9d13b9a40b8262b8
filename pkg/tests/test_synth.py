import numpy as np
import pytest

from evclip.errors import ConfigError, DataError, NumericalError
from evclip.events import aggregate_events, event_frame, evt1_bytes, parse_evt1
from evclip.synth import (
    Jitter,
    SyntheticConfig,
    TeacherConfig,
    all_class_samples,
    class_names,
    gen_dataset,
    gen_scene,
    load_split,
    pretrain_teacher,
    read_pgm,
    simulate_events,
    split_classes,
    teacher_accuracy,
    write_dataset_dir,
    write_pgm,
)


def test_scene_contract():
    a = gen_scene(3, seed=11, num_classes=10)
    np.testing.assert_array_equal(a, gen_scene(3, seed=11, num_classes=10))
    assert a.min() >= 0 and a.max() <= 1 and a.shape == (32, 32)
    scenes = [gen_scene(c, seed=5, num_classes=20) for c in range(20)]
    for i in range(20):
        for j in range(i + 1, 20):
            assert np.abs(scenes[i] - scenes[j]).sum() > 0, (i, j)
    with pytest.raises(DataError):
        gen_scene(10, seed=0, num_classes=10)


def test_class_names():
    assert class_names(2) == ["solid triangle", "solid square"]
    assert len(set(class_names(20))) == 20
    with pytest.raises(ConfigError):
        class_names(21)


def test_zero_jitter_is_silent():
    img = gen_scene(0, seed=1, num_classes=10)
    assert len(simulate_events(img, Jitter(steps=0), seed=0)) == 0
    assert len(simulate_events(img, Jitter(shift_x=0, shift_y=0, brightness=0.0), seed=0)) == 0


def test_horizontal_shift_fires_on_vertical_edges():
    img = np.zeros((32, 32))
    img[8:24, 10:22] = 0.8
    counts = aggregate_events(simulate_events(img, Jitter(steps=6, shift_x=2, shift_y=0, brightness=0.0), seed=4))
    edge = np.zeros((32, 32), bool)
    edge[8:24, 8:12] = edge[8:24, 20:24] = True
    interior = np.zeros((32, 32), bool)
    interior[8:24, 13:19] = True
    assert counts[edge].sum() > 0 and counts[interior].sum() == 0


def test_simulation_deterministic_and_evt1_exact():
    img = gen_scene(7, seed=2, num_classes=10)
    a, b = simulate_events(img, seed=9), simulate_events(img, seed=9)
    assert evt1_bytes(a) == evt1_bytes(b)
    back = parse_evt1(evt1_bytes(a))
    assert evt1_bytes(back) == evt1_bytes(a)
    a.validate()


def test_dataset_split_shape(dataset):
    assert len(dataset.train_classes) == 8 and len(dataset.heldout_classes) == 2
    assert not set(dataset.train_classes) & set(dataset.heldout_classes)
    assert np.bincount(dataset.train.labels).tolist() == [200] * 8
    assert np.bincount(dataset.heldout.labels).tolist() == [200] * 2
    assert dataset.train.events.max() < 1


@pytest.mark.parametrize("seed", range(25))
def test_split_disjoint_for_every_seed(seed):
    cfg = SyntheticConfig(num_classes=int(2 + seed % 19), seed=seed, samples_per_class=1)
    tr, he = split_classes(cfg)
    assert sorted(tr + he) == list(range(cfg.num_classes)) and he and tr


def test_config_errors():
    with pytest.raises(DataError):
        SyntheticConfig(num_classes=1)
    with pytest.raises(ConfigError):
        SyntheticConfig(holdout_fraction=1.0)


def test_reference_teacher_is_accurate_and_frozen(teacher, fixture_cfg):
    image, text = teacher
    assert image.frozen and text.frozen
    assert teacher_accuracy(image, text, all_class_samples(fixture_cfg)) >= 0.9


def test_teacher_is_reproducible_and_reports_nonconvergence():
    cfg = SyntheticConfig(num_classes=3, samples_per_class=6)
    samples = all_class_samples(cfg)
    tc = TeacherConfig(epochs=1, min_accuracy=0.0, seed=4)
    a, b = pretrain_teacher(samples, tc), pretrain_teacher(samples, tc)
    assert a[0].checksum() == b[0].checksum() and a[1].checksum() == b[1].checksum()
    with pytest.raises(NumericalError, match="epochs"):
        pretrain_teacher(samples, TeacherConfig(epochs=0, min_accuracy=1.01))


def test_pgm_round_trip(tmp_path):
    img = gen_scene(4, seed=3, num_classes=10)
    img[0, 0] = 10 / 255  # a leading whitespace byte in the payload
    write_pgm(img, tmp_path / "x.pgm")
    np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), img)


def test_dataset_directory_round_trip(tmp_path):
    cfg = SyntheticConfig(num_classes=4, samples_per_class=3, seed=2)
    ds = gen_dataset(cfg, keep_streams=True)
    write_dataset_dir(ds, tmp_path)
    for split, part, ids in (("train", ds.train, ds.train_classes), ("heldout", ds.heldout, ds.heldout_classes)):
        back, class_ids = load_split(tmp_path, split, cfg.clamp, cfg.template)
        assert class_ids == ids and back.ids == part.ids and back.class_names == part.class_names
        np.testing.assert_array_equal(back.images, part.images)
        np.testing.assert_array_equal(back.events, part.events)
        np.testing.assert_array_equal(back.labels, part.labels)
    head = (tmp_path / "train_manifest.tsv").read_text().splitlines()[:2]
    assert head[0].split("\t") == ["sample_id", "split", "class_id", "class_name", "prompt", "image", "events"]
    assert "a photo of" in head[1]
    with pytest.raises(DataError):
        write_dataset_dir(gen_dataset(cfg), tmp_path / "x")
    with pytest.raises(DataError, match="gen-data"):
        load_split(tmp_path / "nowhere", "train")


def test_event_frames_come_from_streams():
    cfg = SyntheticConfig(num_classes=2, samples_per_class=2)
    ds = gen_dataset(cfg, keep_streams=True)
    for k, sid in enumerate(ds.train.ids):
        np.testing.assert_array_equal(ds.train.events[k], event_frame(ds.streams[sid], cfg.clamp))
