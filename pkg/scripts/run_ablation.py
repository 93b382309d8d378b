"""Train the four ablation rows (plain, +norm, +norm+aug, +norm+aug+balanced,
each optionally with VSCT) and print a top-1/top-5 table.

With no data files given, a synthetic task is generated in memory.
"""
import argparse
import time

from vsct_spoter.model import SpoterConfig, SpoterModel
from vsct_spoter.pose_data import Dataset, load_dataset
from vsct_spoter.preprocess import subsample_frames
from vsct_spoter.synthetic import make_synthetic_dataset
from vsct_spoter.training import TrainConfig, VsctConfig, evaluate, train

ROWS = [
    ("plain", dict(use_normalization=False, use_augmentation=False)),
    ("norm", dict(use_normalization=True, use_augmentation=False)),
    ("norm+aug", dict(use_normalization=True, use_augmentation=True)),
    ("norm+aug+bal", dict(use_normalization=True, use_augmentation=True, use_balanced_sampling=True)),
]


def fit(d: Dataset, max_frames: int) -> Dataset:
    return Dataset(d.vocabulary, tuple(subsample_frames(s, max_frames) for s in d.sequences))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-data")
    ap.add_argument("--test-data")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--layers", type=int, default=1, help="encoder and decoder depth")
    ap.add_argument("--ff-dim", type=int, default=256)
    ap.add_argument("--max-frames", type=int, default=64)
    ap.add_argument("--vsct", action="store_true", help="add VSCT to every row")
    args = ap.parse_args()

    if args.train_data:
        train_data = fit(load_dataset(args.train_data), args.max_frames)
        test_data = fit(load_dataset(args.test_data, vocabulary=train_data.vocabulary), args.max_frames)
    else:
        train_data = make_synthetic_dataset(20, 3, seed=args.seed, hard_classes=(2, 7, 11))
        test_data = make_synthetic_dataset(20, 2, seed=args.seed + 1, hard_classes=(2, 7, 11))

    c = train_data.num_classes
    model_cfg = SpoterConfig(num_classes=c, encoder_layers=args.layers, decoder_layers=args.layers,
                             ff_dim=args.ff_dim, max_frames=args.max_frames, init_mode="standard")
    ks = (1, min(5, c))
    print(f"{'row':<18} {'top-1':>7} {'top-5':>7} {'sec':>7}")
    for name, flags in ROWS:
        cfg = TrainConfig(epochs=args.epochs, seed=args.seed, use_vsct=args.vsct, eval_train=False, **flags)
        t0 = time.perf_counter()
        model, _ = train(SpoterModel.create(model_cfg, seed=args.seed), train_data, None, cfg,
                         VsctConfig() if args.vsct else None)
        acc = evaluate(model, test_data, ks).accuracy
        label = name + ("+vsct" if args.vsct else "")
        print(f"{label:<18} {acc[1]:>7.3f} {acc[ks[1]]:>7.3f} {time.perf_counter() - t0:>7.1f}")


if __name__ == "__main__":
    main()
