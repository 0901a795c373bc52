import numpy as np
import pytest

from deepssm.data import (
    DataFormatError,
    DatasetDescriptor,
    DescriptorError,
    SKELETON_17_PARENTS,
    baseline_constant_velocity,
    baseline_zero_velocity,
    gen_constant_velocity,
    gen_sinusoid_chain,
    generate_suite,
    load_sequence,
    load_sequences,
    make_windows,
    mpjpe,
    save_sequence,
    write_suite,
)
from deepssm.representation import MotionSequence, compute_velocities, depth_first_ordering
from oracles import mpjpe_loop


def test_round_trip_text(tmp_path):
    seq = MotionSequence(np.array([[[0.1, -2.5, 3e-7]], [[1 / 3, 2.0, -0.0]]]), frame_rate=50.0, unit="cm")
    path = tmp_path / "s.txt"
    save_sequence(path, seq)
    text = path.read_text()
    back = load_sequence(path)
    assert back.positions.tobytes() == seq.positions.tobytes()
    assert back.frame_rate == 50.0 and back.unit == "cm"
    save_sequence(path, back)
    assert path.read_text() == text


def test_comment_lines_are_skipped(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# hello\nJ=1 T=1 rate=25 unit=mm\n# between\n1 2 3\n")
    np.testing.assert_array_equal(load_sequence(path).positions, [[[1, 2, 3]]])


def test_nan_rejected_with_position(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("J=1 T=2 rate=25 unit=mm\n1 2 3\n4 nan 6\n")
    with pytest.raises(DataFormatError, match=r"bad.txt:3: non-finite value at column 2"):
        load_sequence(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("J=2 T=1 rate=25 unit=mm\n1 2 3\n")
    with pytest.raises(DataFormatError, match=":2:"):
        load_sequence(path)


def test_joint_count_mismatch_with_descriptor(tmp_path):
    save_sequence(tmp_path / "a.txt", MotionSequence(np.zeros((2, 2, 3))))
    desc = DatasetDescriptor("d", 3, [0, 1, 2])
    with pytest.raises(DescriptorError):
        load_sequence(tmp_path / "a.txt", desc)


def test_windowing_count():
    seq = gen_constant_velocity(2, 100, [1, 0, 0])
    assert len(make_windows([seq], 50, 25, 1)) == 26


def test_windows_are_adjacent_and_bounded():
    seqs = [gen_constant_velocity(1, 12, [1, 0, 0], seed=0), gen_constant_velocity(1, 7, [1, 0, 0], seed=1)]
    wins = make_windows(seqs, 3, 2, 2)
    for w in wins:
        assert w.inputs.shape == (3, 1, 3) and w.target.shape == (2, 1, 3)
        np.testing.assert_array_equal(w.target[0] - w.inputs[-1], [[1, 0, 0]])
    # frames covered at most (T1 + T2) / stride times
    counts = np.zeros(12)
    for w in wins:
        if w.source == seqs[0].name:
            counts[w.start:w.start + 5] += 1
    assert counts.max() <= 5 / 2 + 1


def test_constant_velocity_generator():
    seq = gen_constant_velocity(3, 6, [0, 0, 0], seed=4)
    assert np.all(seq.positions == seq.positions[0])
    seq = gen_constant_velocity(3, 6, [1, -2, 3], seed=4)
    v = compute_velocities(seq)
    assert np.all(v[1:] == np.array([1, -2, 3]))


def test_sinusoid_zero_amplitude_is_constant():
    seq = gen_sinusoid_chain(4, 10, 0.1, 0.0, seed=2)
    assert np.all(seq.positions == seq.positions[0])


def test_generators_deterministic_per_seed():
    a = gen_sinusoid_chain(4, 10, 0.1, 20.0, seed=2).positions
    b = gen_sinusoid_chain(4, 10, 0.1, 20.0, seed=2).positions
    c = gen_sinusoid_chain(4, 10, 0.1, 20.0, seed=3).positions
    assert a.tobytes() == b.tobytes() and not np.array_equal(a, c)
    s1 = generate_suite("constvel:count=3,seed=1")["train"]
    s2 = generate_suite("constvel:count=3,seed=1")["train"]
    s3 = generate_suite("constvel:count=3,seed=2")["train"]
    assert all(x.positions.tobytes() == y.positions.tobytes() for x, y in zip(s1, s2))
    assert any(not np.array_equal(x.positions, y.positions) for x, y in zip(s1, s3))


def test_baselines_exact_on_constant_sequence():
    seq = gen_constant_velocity(3, 20, [0, 0, 0])
    x, y = seq.positions[:10], seq.positions[10:]
    assert np.all(mpjpe(baseline_zero_velocity(x, 10), y) == 0)
    assert np.all(mpjpe(baseline_constant_velocity(x, 10), y) == 0)


def test_zero_velocity_error_grows_linearly():
    seq = gen_constant_velocity(4, 30, [3, 4, 0], seed=9)
    x, y = seq.positions[:10], seq.positions[10:25]
    err = mpjpe(baseline_zero_velocity(x, 15), y)
    np.testing.assert_array_equal(err, 5.0 * np.arange(1, 16))


def test_constant_velocity_baseline_exact_on_constant_velocity():
    seq = gen_constant_velocity(4, 30, [3, -1, 2], seed=9)
    pred = baseline_constant_velocity(seq.positions[:10], 20)
    assert np.all(mpjpe(pred, seq.positions[10:]) == 0)


def test_constant_velocity_single_frame_falls_back(caplog):
    x = np.ones((1, 2, 3))
    pred = baseline_constant_velocity(x, 3)
    np.testing.assert_array_equal(pred, np.ones((3, 2, 3)))
    assert "falling back" in caplog.text


def test_mpjpe_values():
    gt = np.zeros((1, 2, 3))
    pred = np.array([[[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]])
    assert mpjpe(pred, gt, [1])[0] == 2.5
    assert np.all(mpjpe(gt, gt) == 0)


def test_mpjpe_loop_oracle():
    rng = np.random.default_rng(0)
    pred, gt = rng.normal(size=(2, 6, 5, 3))
    np.testing.assert_allclose(mpjpe(pred, gt, [1, 3, 6]), mpjpe_loop(pred, gt, [1, 3, 6]), rtol=0, atol=1e-12)


def test_mpjpe_translation_invariant():
    rng = np.random.default_rng(1)
    pred, gt = rng.normal(size=(2, 4, 3, 3))
    shift = np.array([100.0, -20.0, 7.0])
    np.testing.assert_allclose(mpjpe(pred + shift, gt + shift), mpjpe(pred, gt), rtol=1e-12, atol=1e-12)


def test_mpjpe_horizon_out_of_range():
    with pytest.raises(ValueError):
        mpjpe(np.zeros((3, 1, 3)), np.zeros((3, 1, 3)), [4])


def test_descriptor_round_trip_and_splits(tmp_path):
    suite = generate_suite("sinusoid:count=2,test=1,joints=3,frames=12")
    path = write_suite(tmp_path, suite)
    desc = DatasetDescriptor.load(path)
    assert desc.joints == 3 and len(desc.splits["train"]) == 2 and len(desc.splits["test"]) == 1
    train = desc.split("train")
    assert train[0].positions.tobytes() == suite["train"][0].positions.tobytes()
    assert len(load_sequences(tmp_path)) == 3


def test_descriptor_with_parents(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text("name = h17\njoints = 17\nparents = " + ",".join(map(str, SKELETON_17_PARENTS)) + "\n")
    desc = DatasetDescriptor.load(path)
    assert desc.ordering == depth_first_ordering(SKELETON_17_PARENTS)
    # trunk first, then each limb as a contiguous chain
    assert desc.ordering[:5] == [0, 1, 2, 3, 4]


def test_descriptor_bad_ordering(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text("joints = 3\nordering = 0,0,1\n")
    with pytest.raises(ValueError):
        DatasetDescriptor.load(path)
