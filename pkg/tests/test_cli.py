import numpy as np
import pytest

from dvae.cli import main
from dvae.data import load_binarized, synthetic_bars, write_idx
from dvae.distributions import Rng
from dvae.trainer import evaluate, load_checkpoint, save_checkpoint
from helpers import zero_init_model


def write_bars_idx(path, n, side, seed):
    ds = synthetic_bars(n, side, Rng(seed))
    raw = (ds.images.reshape(n, side, side) * 255).astype(np.uint8)
    write_idx(path, raw)
    return ds


@pytest.fixture
def bars_files(tmp_path):
    train = tmp_path / "train.idx3-ubyte"
    val = tmp_path / "val.idx3-ubyte"
    write_bars_idx(train, 60, 4, 100)
    write_bars_idx(val, 20, 4, 101)
    return train, val


def train_args(train, val, out, **over):
    flags = {"d": 2, "k": 4, "hidden": 8, "lr": 1e-2, "batch": 20, "epochs": 2,
             "patience": 5, "seed": 42, "threshold": 128}
    flags.update(over)
    argv = ["train", "--train-images", str(train), "--val-images", str(val),
            "--out", str(out)]
    for key, value in flags.items():
        argv += [f"--{key}", str(value)]
    return argv


def drop_seconds(csv_text):
    return ["," .join(line.split(",")[:-1]) for line in csv_text.splitlines()]


class TestUsageErrors:
    def test_missing_required_flag_exits_2(self, capsys):
        assert main(["train", "--val-images", "x", "--out", "y"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_rejected(self):
        assert main(["verify", "--nonsense"]) == 2

    def test_unknown_suite_exits_2(self):
        assert main(["verify", "--suite", "everything"]) == 2

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code = main(train_args(tmp_path / "nope", tmp_path / "nope2", tmp_path / "out"))
        assert code == 2
        assert "usage" in capsys.readouterr().err


class TestTrainCommand:
    def test_writes_outputs_and_prints_final_elbo(self, bars_files, tmp_path, capsys):
        train, val = bars_files
        out = tmp_path / "run"
        assert main(train_args(train, val, out)) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "model.ckpt").exists()
        assert "final validation ELBO:" in capsys.readouterr().out

    def test_zero_lr_rows_equal_epoch0(self, bars_files, tmp_path):
        train, val = bars_files
        out = tmp_path / "run"
        assert main(train_args(train, val, out, lr=0)) == 0
        lines = drop_seconds((out / "metrics.csv").read_text())
        first_values = lines[1].split(",")[1:]
        for line in lines[2:]:
            assert line.split(",")[1:] == first_values

    def test_fixed_seed_metrics_reproducible(self, bars_files, tmp_path):
        # byte-identical apart from the wall-clock seconds column
        train, val = bars_files
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(train_args(train, val, a)) == 0
        assert main(train_args(train, val, b)) == 0
        assert drop_seconds((a / "metrics.csv").read_text()) == \
               drop_seconds((b / "metrics.csv").read_text())


class TestEvalCommand:
    def test_prints_breakdown_matching_evaluate(self, bars_files, tmp_path, capsys):
        train, val = bars_files
        out = tmp_path / "run"
        main(train_args(train, val, out))
        assert main(["eval", "--model", str(out / "model.ckpt"),
                     "--images", str(val), "--seed", "7"]) == 0
        line = capsys.readouterr().out.strip().splitlines()[-1]
        ckpt = load_checkpoint(out / "model.ckpt")
        expected = evaluate(ckpt.model, load_binarized(val), Rng(7))
        assert line == (f"elbo={expected.total:.6f} entropy={expected.entropy_term:.6f} "
                        f"prior={expected.prior_term:.6f} recon={expected.recon_term:.6f}")


class TestReconstructCommand:
    def test_zero_init_model_renders_mid_gray(self, tmp_path):
        images = tmp_path / "img.idx3-ubyte"
        write_bars_idx(images, 5, 4, 200)
        ckpt_path = tmp_path / "zero.ckpt"
        save_checkpoint(zero_init_model(p=16, d=2, k=4), ckpt_path)
        out = tmp_path / "recs"
        assert main(["reconstruct", "--model", str(ckpt_path), "--images", str(images),
                     "--n", "3", "--seed", "1", "--out", str(out)]) == 0
        files = sorted(out.iterdir())
        assert len(files) == 6  # input/recon pair per example
        recon = (out / "recon_000.pgm").read_bytes()
        header = b"P5\n4 4\n255\n"
        assert recon.startswith(header)
        assert set(recon[len(header):]) == {128}  # round-half-even of 127.5

    def test_pgm_header_for_28x28(self, tmp_path):
        images = tmp_path / "img.idx3-ubyte"
        rng = Rng(4)
        raw = np.array([[[rng.randint(256) for _ in range(28)] for _ in range(28)]],
                       dtype=np.uint8)
        write_idx(images, raw)
        ckpt_path = tmp_path / "zero.ckpt"
        save_checkpoint(zero_init_model(p=784, d=2, k=2, hidden=2), ckpt_path)
        out = tmp_path / "recs"
        assert main(["reconstruct", "--model", str(ckpt_path), "--images", str(images),
                     "--n", "1", "--seed", "1", "--out", str(out)]) == 0
        assert (out / "input_000.pgm").read_bytes().startswith(b"P5\n28 28\n255\n")

    def test_pixel_count_mismatch_exits_1(self, tmp_path):
        images = tmp_path / "img.idx3-ubyte"
        write_bars_idx(images, 2, 3, 201)  # p = 9
        ckpt_path = tmp_path / "zero.ckpt"
        save_checkpoint(zero_init_model(p=16, d=2, k=4), ckpt_path)
        assert main(["reconstruct", "--model", str(ckpt_path), "--images", str(images),
                     "--n", "1", "--seed", "1", "--out", str(tmp_path / "o")]) == 1


class TestSampleCommand:
    @pytest.fixture
    def ckpt(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(zero_init_model(p=16, d=2, k=4), path)
        return path

    def test_n_zero_writes_nothing(self, ckpt, tmp_path):
        out = tmp_path / "s"
        assert main(["sample", "--model", str(ckpt), "--n", "0", "--out", str(out)]) == 0
        assert list(out.iterdir()) == []

    def test_fixed_seed_identical_images(self, ckpt, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["sample", "--model", str(ckpt), "--n", "4", "--seed", "9",
                         "--out", str(out)]) == 0
        for name in ("sample_000.pgm", "sample_003.pgm"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_dump_indices_are_valid_categories(self, ckpt, tmp_path, capsys):
        assert main(["sample", "--model", str(ckpt), "--n", "50", "--seed", "3",
                     "--dump-indices", "--out", str(tmp_path / "s")]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("sample")]
        assert len(lines) == 50
        for line in lines:
            indices = [int(tok) for tok in line.split(":")[1].split()]
            assert len(indices) == 2
            assert all(0 <= idx < 4 for idx in indices)


class TestVerifyCommand:
    def test_grads_suite_passes(self, capsys):
        assert main(["verify", "--suite", "grads", "--seed", "5"]) == 0
        out = capsys.readouterr().out
        assert "PASS decoder-grad-vs-finite-diff" in out
        assert "PASS encoder-grad-vs-finite-diff" in out
        assert "all checks passed" in out

    def test_bound_suite_passes(self, capsys):
        assert main(["verify", "--suite", "bound", "--seed", "6"]) == 0
        assert "PASS elbo-lower-bound-min-slack" in capsys.readouterr().out
