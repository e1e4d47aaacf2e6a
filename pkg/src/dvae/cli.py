"""Command-line surface: train, eval, reconstruct, sample, verify.

Exit codes: 0 on success, 1 on runtime or verification failure, 2 on usage
errors (bad flags or unreadable paths). Every command that takes --seed is
bit-reproducible. Images are written as binary PGM (P5, maxval 255);
reconstruction gray levels are round-half-to-even of 255 * mean, so an
all-0.5 reconstruction renders as 128.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from dvae import data, oracle, trainer
from dvae.distributions import Rng
from dvae.model import uniform_params


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary P5 image from a 2-D uint8 array."""
    with open(path, "wb") as f:
        f.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def _to_gray(values: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.rint(255.0 * values).astype(np.uint8).reshape(rows, cols)


def cmd_train(args) -> int:
    config = trainer.TrainConfig(
        d_latents=args.d, k_categories=args.k, hidden_width=args.hidden,
        learning_rate=args.lr, batch_size=args.batch, max_epochs=args.epochs,
        patience=args.patience, seed=args.seed, binarize_threshold=args.threshold,
        mc_samples=args.mc_samples,
    )
    train_set = data.load_binarized(args.train_images, args.train_labels, args.threshold)
    val_set = data.load_binarized(args.val_images, threshold=args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, history = trainer.train(config, train_set, val_set,
                                   checkpoint_path=out / "model.ckpt")
    trainer.write_metrics_csv(history, out / "metrics.csv")
    best = max(row.val_elbo for row in history)
    print(f"final validation ELBO: {best:.6f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = trainer.load_checkpoint(args.model)
    threshold = args.threshold
    if threshold is None:
        threshold = int(ckpt.config.get("binarize_threshold", 128))
    dataset = data.load_binarized(args.images, threshold=threshold)
    bd = trainer.evaluate(ckpt.model, dataset, Rng(args.seed))
    print(f"elbo={bd.total:.6f} entropy={bd.entropy_term:.6f} "
          f"prior={bd.prior_term:.6f} recon={bd.recon_term:.6f}")
    return 0


def cmd_reconstruct(args) -> int:
    ckpt = trainer.load_checkpoint(args.model)
    model = ckpt.model
    threshold = args.threshold
    if threshold is None:
        threshold = int(ckpt.config.get("binarize_threshold", 128))
    dataset = data.load_binarized(args.images, threshold=threshold)
    if dataset.p != model.p:
        raise ValueError(f"model expects {model.p} pixels, images have {dataset.p}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(args.seed)
    for i in range(args.n):
        x = dataset.images[i]
        z = model.sample_latent(model.encode(x), rng)
        xhat = model.decode(z)
        write_pgm(out / f"input_{i:03d}.pgm", _to_gray(x, dataset.rows, dataset.cols))
        write_pgm(out / f"recon_{i:03d}.pgm", _to_gray(xhat, dataset.rows, dataset.cols))
    return 0


def cmd_sample(args) -> int:
    ckpt = trainer.load_checkpoint(args.model)
    model = ckpt.model
    rows, cols = _raster_shape(model.p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(args.seed)
    prior = uniform_params(model.d, model.k)
    for i in range(args.n):
        z = model.sample_latent(prior, rng)
        if args.dump_indices:
            print(f"sample {i}: {' '.join(str(j) for j in z.indices)}")
        xhat = model.decode(z)
        write_pgm(out / f"sample_{i:03d}.pgm", _to_gray(xhat, rows, cols))
    return 0


def _raster_shape(p: int) -> tuple[int, int]:
    """Square raster if p is a perfect square, else a single row."""
    side = int(round(p ** 0.5))
    return (side, side) if side * side == p else (1, p)


def cmd_verify(args) -> int:
    names = list(oracle.SUITES) if args.suite == "all" else [args.suite]
    all_ok = True
    for name in names:
        for check in oracle.SUITES[name](args.seed):
            status = "PASS" if check.passed else "FAIL"
            all_ok &= check.passed
            print(f"{status} {check.name} measured={check.measured:.3e} "
                  f"tolerance={check.tolerance:.3e} ({check.note})")
    print("all checks passed" if all_ok else "VERIFICATION FAILED")
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on IDX images")
    p_train.add_argument("--train-images", required=True)
    p_train.add_argument("--train-labels", default=None)
    p_train.add_argument("--val-images", required=True)
    p_train.add_argument("--d", type=int, default=20)
    p_train.add_argument("--k", type=int, default=10)
    p_train.add_argument("--hidden", type=int, default=512)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--batch", type=int, default=100)
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--patience", type=int, default=5)
    p_train.add_argument("--seed", type=int, default=42)
    p_train.add_argument("--threshold", type=int, default=128)
    p_train.add_argument("--mc-samples", type=int, default=1)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="mean ELBO of a checkpoint on IDX images")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--images", required=True)
    p_eval.add_argument("--seed", type=int, default=42)
    p_eval.add_argument("--threshold", type=int, default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_rec = sub.add_parser("reconstruct", help="encode/sample/decode image pairs")
    p_rec.add_argument("--model", required=True)
    p_rec.add_argument("--images", required=True)
    p_rec.add_argument("--n", type=int, default=8)
    p_rec.add_argument("--seed", type=int, default=42)
    p_rec.add_argument("--threshold", type=int, default=None)
    p_rec.add_argument("--out", required=True)
    p_rec.set_defaults(func=cmd_reconstruct)

    p_sample = sub.add_parser("sample", help="decode latents drawn from the prior")
    p_sample.add_argument("--model", required=True)
    p_sample.add_argument("--n", type=int, default=8)
    p_sample.add_argument("--seed", type=int, default=42)
    p_sample.add_argument("--dump-indices", action="store_true")
    p_sample.add_argument("--out", required=True)
    p_sample.set_defaults(func=cmd_sample)

    p_verify = sub.add_parser("verify", help="run the enumeration-oracle checks")
    p_verify.add_argument("--suite", choices=["all", *oracle.SUITES], default="all")
    p_verify.add_argument("--seed", type=int, default=42)
    p_verify.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
