"""Compare VSCT against the plain loop on a synthetic task with noisy
"hard" classes, over several seeds. Results are reported, not judged."""
import argparse

import numpy as np

from vsct_spoter.model import SpoterConfig, SpoterModel
from vsct_spoter.preprocess import AugmentationDistribution
from vsct_spoter.synthetic import make_synthetic_dataset
from vsct_spoter.training import TrainConfig, VsctConfig, evaluate, train


def run(seed, use_vsct, args, hard):
    kw = dict(frames=8, hard_classes=hard, hard_noise=args.hard_noise)
    train_data = make_synthetic_dataset(args.classes, 3, seed=100 + seed, **kw)
    val_data = make_synthetic_dataset(args.classes, 2, seed=200 + seed, **kw)
    test_data = make_synthetic_dataset(args.classes, 2, seed=300 + seed, **kw)
    cfg = SpoterConfig(num_classes=args.classes, encoder_layers=1, decoder_layers=1, ff_dim=128,
                       max_frames=16, init_mode="standard")
    vsct = VsctConfig(gamma=args.gamma, tau=args.tau)
    if args.zero_vsct_aug:
        vsct = VsctConfig(args.gamma, args.tau, AugmentationDistribution.zero())
    model, _ = train(SpoterModel.create(cfg, seed=seed), train_data, val_data,
                     TrainConfig(epochs=args.epochs, seed=seed, use_vsct=use_vsct, eval_train=False), vsct)
    res = evaluate(model, test_data, (1,))
    return res.accuracy[1], float(np.mean([res.per_class[k].accuracy for k in hard]))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--classes", type=int, default=25)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--gamma", type=float, default=0.2)
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--hard-noise", type=float, default=12.0)
    ap.add_argument("--zero-vsct-aug", action="store_true")
    args = ap.parse_args()

    hard = tuple(range(3, args.classes, 5))
    print(f"{'seed':>4} {'variant':<9} {'top-1':>7} {'hard top-1':>10}")
    totals = {False: [], True: []}
    for seed in range(args.seeds):
        for use_vsct in (False, True):
            top1, hard_top1 = run(seed, use_vsct, args, hard)
            totals[use_vsct].append((top1, hard_top1))
            print(f"{seed:>4} {'vsct' if use_vsct else 'baseline':<9} {top1:>7.3f} {hard_top1:>10.3f}")
    for use_vsct, rows in totals.items():
        m = np.mean(rows, axis=0)
        print(f"mean {'vsct' if use_vsct else 'baseline':<9} {m[0]:>7.3f} {m[1]:>10.3f}")


if __name__ == "__main__":
    main()
