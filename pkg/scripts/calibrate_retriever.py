"""Train on the reference worlds and report held-out direction accuracy.

    python scripts/calibrate_retriever.py --lr 1e-3 --epochs 10
"""

import argparse
import time

from navpruner.corpus import REFERENCE_HELDOUT_SEEDS, REFERENCE_TRAIN_SEEDS, Corpus, heldout_accuracy
from navpruner.encoder import TextEncoder
from navpruner.retriever import Hyper, direction_accuracy, train_retriever


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lr", type=float, default=Hyper().lr)
    ap.add_argument("--epochs", type=int, default=Hyper().epochs)
    ap.add_argument("--hidden", type=int, default=Hyper().hidden)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    enc = TextEncoder()
    train = Corpus().examples(REFERENCE_TRAIN_SEEDS)
    model, curve = train_retriever(train, Hyper(epochs=args.epochs, lr=args.lr, hidden=args.hidden), args.seed, enc)
    for i, loss in enumerate(curve, 1):
        print(f"epoch {i:2d}  loss {loss:.4f}")
    tr_top1, tr_rec = direction_accuracy(model, train, 5, enc)
    top1, rec = heldout_accuracy(model, 5, enc)
    print(f"train    top-1 {tr_top1:.3f}  recall@5 {tr_rec:.3f}  ({len(train)} examples)")
    print(f"held-out top-1 {top1:.3f}  recall@5 {rec:.3f}  (worlds {list(REFERENCE_HELDOUT_SEEDS)})")
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
