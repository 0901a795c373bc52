import numpy as np
import pytest

from deepssm import cli
from deepssm.data import load_sequence, mpjpe, save_sequence
from deepssm.train import CHECKPOINT, MANIFEST, load_checkpoint, resolve_dataset, save_checkpoint

GEN = "constvel:count=2,test=2,joints=3,frames=16,seed=2"
RUN = ["--t1", "4", "--t2", "4", "--channels", "3", "--steps", "2", "--seed", "5"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def suite(tmp_path, capsys):
    code, _, _ = run(capsys, "gen-data", "--generator", GEN, "--out", tmp_path / "data")
    assert code == 0
    return tmp_path / "data" / "dataset.txt"


@pytest.fixture
def trained(tmp_path, capsys, suite):
    out = tmp_path / "run"
    code, _, err = run(capsys, "train", "--dataset", suite, *RUN, "--out", out)
    assert code == 0, err
    return out / CHECKPOINT


def test_gen_data_writes_descriptor_and_manifest(tmp_path, suite):
    assert suite.exists() and (suite.parent / MANIFEST).exists()
    assert "generator = " + GEN in (suite.parent / MANIFEST).read_text()


def test_train_writes_manifest_with_seed(trained):
    text = (trained.parent / MANIFEST).read_text()
    assert text.startswith("# deepssm ")
    assert "seed = 5" in text and "t2 = 4" in text


def test_config_file_with_flag_override(tmp_path, capsys, suite):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"dataset = {suite}\nt1 = 4\nt2 = 4\nchannels = 3\nsteps = 1\nseed = 1\n")
    code, _, err = run(capsys, "train", "--config", cfg, "--seed", "9", "--out", tmp_path / "o")
    assert code == 0, err
    assert load_checkpoint(tmp_path / "o" / CHECKPOINT).config.seed == 9


def test_predict_writes_t2_frames_with_input_comments(tmp_path, capsys, trained, suite):
    src = suite.parent / "constvel_002.txt"
    code, out, err = run(capsys, "predict", "--checkpoint", trained, "--input", src, "--t2", 3,
                         "--out", tmp_path / "p")
    assert code == 0, err
    path = tmp_path / "p" / cli.PREDICTION
    pred = load_sequence(path)
    assert pred.frames == 3
    comments = [ln for ln in path.read_text().splitlines() if ln.startswith("# input")]
    assert len(comments) == 4
    assert (tmp_path / "p" / MANIFEST).exists()


def test_predict_rejects_horizon_beyond_model(tmp_path, capsys, trained, suite):
    code, _, err = run(capsys, "predict", "--checkpoint", trained, "--input", suite.parent / "constvel_002.txt",
                       "--t2", 5, "--out", tmp_path / "p")
    assert code != 0
    assert err.startswith("error: usage: ") and err.count("\n") == 1


def test_zero_model_predicts_constant_pose(tmp_path, capsys, trained, suite):
    state = load_checkpoint(trained)
    store = state.predictor.model.store
    for path, t in store.params.items():
        store.assign(path, np.zeros(t.shape))
    save_checkpoint(tmp_path / "zero.npz", state)
    src = suite.parent / "constvel_003.txt"
    code, _, err = run(capsys, "predict", "--checkpoint", tmp_path / "zero.npz", "--input", src,
                       "--out", tmp_path / "p")
    assert code == 0, err
    pred = load_sequence(tmp_path / "p" / cli.PREDICTION).positions
    last = load_sequence(src).positions[-1]
    np.testing.assert_allclose(pred, np.broadcast_to(last, pred.shape), rtol=0, atol=1e-9)


def test_predict_file_matches_in_process(tmp_path, capsys, trained, suite):
    seq = load_sequence(suite.parent / "constvel_002.txt")
    cut = seq.slice(0, 8)
    save_sequence(tmp_path / "window.txt", cut)
    code, _, err = run(capsys, "predict", "--checkpoint", trained, "--input", tmp_path / "window.txt",
                       "--out", tmp_path / "p")
    assert code == 0, err
    from_file = load_sequence(tmp_path / "p" / cli.PREDICTION).positions
    gt = seq.positions[8:12]
    in_process = load_checkpoint(trained).predictor.predict(cut.positions[None, -4:], 4)[0]
    assert from_file.tobytes() == in_process.tobytes()
    assert mpjpe(from_file, gt).tobytes() == mpjpe(in_process, gt).tobytes()


def test_evaluate_table_layout_and_purity(tmp_path, capsys, trained, suite):
    args = ["evaluate", "--checkpoint", trained, "--dataset", suite, "--horizons", "1,2,4",
            "--baseline", "zero", "--out", tmp_path / "e"]
    code, out1, err = run(capsys, *args)
    assert code == 0, err
    first = (tmp_path / "e" / cli.TABLE).read_bytes()
    code, out2, _ = run(capsys, *args)
    assert out1 == out2 and (tmp_path / "e" / cli.TABLE).read_bytes() == first
    lines = out1.splitlines()
    assert lines[0].split("\t") == ["sequence", "h1", "h2", "h4", "zero:h1", "zero:h2", "zero:h4"]
    test_count = len(resolve_dataset(load_checkpoint(trained).config).test)
    assert len(lines) == 1 + test_count + 1
    assert lines[-1].startswith("average\t")


def test_evaluate_baselines_closed_form(tmp_path, capsys, suite):
    code, out, err = run(capsys, "evaluate", "--baseline", "zero", "--baseline", "const", "--dataset", suite,
                         "--t1", 4, "--horizons", "1,2,3,4", "--out", tmp_path / "e")
    assert code == 0, err
    rows = [ln.split("\t") for ln in out.splitlines()[1:-1]]
    for row in rows:
        c = np.diff(load_sequence(suite.parent / f"{row[0]}.txt").positions[:2], axis=0)[0, 0]
        speed = np.linalg.norm(c)
        assert row[1:5] == [f"{t * speed:.4f}" for t in (1, 2, 3, 4)]
        assert row[5:9] == ["0.0000"] * 4


def test_evaluate_requires_source(tmp_path, capsys, suite):
    code, _, err = run(capsys, "evaluate", "--dataset", suite, "--out", tmp_path / "e")
    assert code != 0 and err.startswith("error: usage:")


def test_missing_checkpoint(tmp_path, capsys, suite):
    code, _, err = run(capsys, "evaluate", "--checkpoint", tmp_path / "none.npz", "--dataset", suite)
    assert code != 0 and err.startswith("error: missing-file:")


def test_both_branches_disabled_rejected(tmp_path, capsys, suite):
    code, _, err = run(capsys, "train", "--dataset", suite, "--no-pose-branch", "--no-velocity-branch",
                       "--out", tmp_path / "x")
    assert code != 0
    assert err.startswith("error: config: ") and err.count("\n") == 1


def test_malformed_data_reports_category(tmp_path, capsys, suite):
    (suite.parent / "constvel_000.txt").write_text("J=3 T=1 rate=25 unit=mm\n1 2 nan 4 5 6 7 8 9\n")
    code, _, err = run(capsys, "train", "--dataset", suite, *RUN, "--out", tmp_path / "x")
    assert code != 0 and err.startswith("error: data-format:")


def test_ablate_rows_and_full_row_identity(tmp_path, capsys, suite):
    code, out, err = run(capsys, "ablate", "--dataset", suite, *RUN, "--horizons", "1,4", "--out", tmp_path / "ab")
    assert code == 0, err
    lines = out.splitlines()
    assert lines[0] == "row\th1\th4" and len(lines) == 10
    assert [ln.split(" ")[0] for ln in lines[1:]] == [f"#{k}" for k in range(1, 10)]
    # row 9 must match a plain train + evaluate with the same seed
    code, _, err = run(capsys, "train", "--dataset", suite, *RUN, "--out", tmp_path / "plain")
    assert code == 0, err
    code, plain, _ = run(capsys, "evaluate", "--checkpoint", tmp_path / "plain" / CHECKPOINT,
                         "--horizons", "1,4", "--out", tmp_path / "pe")
    assert (tmp_path / "ab" / "row9" / cli.TABLE).read_text() == plain
    assert lines[-1].split("\t")[1:] == plain.splitlines()[-1].split("\t")[1:]
