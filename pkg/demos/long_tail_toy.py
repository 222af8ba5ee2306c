"""Softmax against Balanced Softmax on a three-class long-tailed blob toy.

Run: python3 demos/long_tail_toy.py
"""

import numpy as np

from balms import ClassCounts, TrainConfig, evaluate, gen_gaussian_mixture, split_shots, train

train_set = gen_gaussian_mixture(3, 2, ClassCounts([300, 30, 3]), 1.0, seed=0)
test_set = gen_gaussian_mixture(3, 2, ClassCounts([1000] * 3), 1.0, seed=1000)
split = split_shots(train_set.counts)
base = TrainConfig(iters=1000, batch=60, lr_max=0.1, hidden=(16,))

print(f"train counts {train_set.counts.tolist()}, balanced test set of {len(test_set)}")
for name, cfg in [("softmax", base),
                  ("balanced softmax q=1/4", base.replace(loss="balanced_softmax", q=0.25)),
                  ("balanced softmax", base.replace(loss="balanced_softmax"))]:
    params, _ = train(cfg, train_set)
    rep = evaluate(params, test_set, split)
    shots = " ".join(f"{k} {v:.3f}" for k, v in rep.shot_accs.items() if v is not None)
    # a calibrated balanced classifier predicts each class about a third of the time
    print(f"{name:24s} acc {rep.overall_acc:.3f} | {shots} | p_y {np.round(rep.p_y, 3).tolist()}")
