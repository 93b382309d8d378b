"""Write synthetic train/val/test pose files for trying the CLI."""
import argparse
from pathlib import Path

from vsct_spoter.pose_data import save_dataset
from vsct_spoter.synthetic import make_synthetic_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--classes", type=int, default=20)
    ap.add_argument("--train-per-class", type=int, default=3)
    ap.add_argument("--eval-per-class", type=int, default=2)
    ap.add_argument("--frames", type=int, default=12)
    ap.add_argument("--hard", type=int, nargs="*", default=[], help="class ids that get heavy noise")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    splits = {"train": args.train_per_class, "val": args.eval_per_class, "test": args.eval_per_class}
    for i, (name, per_class) in enumerate(splits.items()):
        d = make_synthetic_dataset(args.classes, per_class, seed=args.seed + i, frames=args.frames,
                                   hard_classes=tuple(args.hard))
        save_dataset(d, args.out / f"{name}.jsonl")
        print(f"{name}: {len(d)} sequences -> {args.out / f'{name}.jsonl'}")


if __name__ == "__main__":
    main()
