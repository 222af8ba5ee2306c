"""Learn per-class sample rates with the bi-level Meta Sampler and compare
the rates it settles on under the two inner losses.

Run: python3 demos/meta_sampler.py
"""

import numpy as np

from balms import ClassCounts, LossSpec, MetaConfig, SamplerState, build_meta_set
from balms import gen_gaussian_mixture, init_params, meta_cycle

train_set = gen_gaussian_mixture(3, 2, ClassCounts([300, 30, 3]), 1.0, seed=0)
meta_set = build_meta_set(train_set, 512, seed=0)
cfg = MetaConfig(inner_lr=0.1, batch=60)

for name, loss in [("balanced softmax", LossSpec.balanced(train_set.counts)),
                   ("softmax", LossSpec.softmax())]:
    theta, state = init_params(3, 2, 0), SamplerState.init(3)
    adam, rng = cfg.adam(), np.random.default_rng(0)
    for t in range(200):
        theta, state, rec = meta_cycle(theta, state, train_set, meta_set, cfg, rng, loss,
                                       adam, None, cfg.inner_lr, it=t)
        if t % 50 == 0 or t == 199:
            print(f"{name:16s} cycle {t:3d} meta loss {rec['meta_loss']:.4f} "
                  f"rates {np.round(state.rates, 3).tolist()}")
    # softmax must compensate the imbalance through the sampler, so its rates spread further
    print(f"{name:16s} rate variance {np.var(state.rates):.4f}\n")
