import numpy as np

from cohft.data import (FIELDS, PhantomSpec, TrainingPair, generate_dataset, load_pair,
                        make_pair, read_manifest, save_pair, synth_phantom, write_manifest)
from cohft.losses import gradient_map
from cohft.resample import degrade
from cohft.tensor import Tensor


def test_per_seed_determinism():
    spec = PhantomSpec(seed=21, side=48)
    a1, b1 = synth_phantom(spec)
    a2, b2 = synth_phantom(spec)
    assert np.array_equal(a1, a2)
    assert np.array_equal(b1, b2)


def test_different_seeds_differ():
    a, _ = synth_phantom(PhantomSpec(seed=0, side=48))
    b, _ = synth_phantom(PhantomSpec(seed=1, side=48))
    assert np.abs(a - b).max() > 1e-3


def test_phantom_range_and_modalities():
    t1, t2 = synth_phantom(PhantomSpec(seed=5, side=64))
    for img in (t1, t2):
        assert img.shape == (64, 64)
        assert img.min() >= 0.0 and img.max() <= 1.0
    # shared geometry, independent gray levels
    assert np.abs(t1 - t2).max() > 1e-3


def test_pair_fields_are_consistent():
    spec = PhantomSpec(seed=3, side=48)
    pair = make_pair(spec, 2)
    assert pair.t2_hr.shape == (48, 48, 1)
    assert pair.t2_lr.shape == (24, 24, 1)
    assert pair.t1_hr_grad.shape == (48, 48, 1)
    assert pair.t2_lr_grad.shape == (24, 24, 1)
    # the stored degraded image and gradient maps are recomputable
    _, t2_hr = synth_phantom(spec)
    assert np.array_equal(pair.t2_lr[:, :, 0], degrade(t2_hr, 2))
    assert np.array_equal(pair.t2_lr_grad,
                          gradient_map(Tensor(pair.t2_lr.astype(np.float64))).data)
    assert np.all(pair.t1_hr_grad >= 1e-3)


def test_pair_roundtrip(tmp_path):
    pair = make_pair(PhantomSpec(seed=9, side=24), 2)
    save_pair(tmp_path, "s0", pair)
    back = load_pair(tmp_path, "s0")
    for name in FIELDS:
        assert np.array_equal(getattr(back, name), getattr(pair, name))


def test_manifest_roundtrip(tmp_path):
    ids = ["sample_00003", "sample_00004"]
    write_manifest(tmp_path, ids)
    assert read_manifest(tmp_path) == ids


def test_generate_dataset(tmp_path):
    spec = PhantomSpec(seed=7, side=24)
    ids = generate_dataset(tmp_path, 3, 2, spec)
    assert ids == ["sample_00007", "sample_00008", "sample_00009"]
    assert read_manifest(tmp_path) == ids
    for sid in ids:
        pair = load_pair(tmp_path, sid)
        assert isinstance(pair, TrainingPair)
        assert pair.t2_lr.shape == (12, 12, 1)
