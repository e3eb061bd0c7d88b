# # Class weights on an imbalanced target
#
# In the imbalanced preset class 0 is rare on the target side.  Without class
# weights, self-training tends to absorb it into its neighbours.  Weighting
# each class by 1 - log(count / max count) keeps it alive.

import numpy as np

from sfdalab import calib, config, engine, synthdata

cfg = config.load("configs/imbalanced.json")

for seed in range(3):
    pair = synthdata.standardize(synthdata.generate(config.data_spec(cfg, seed)))
    source = engine.pretrain_source(pair, config.pretrain_config(cfg, seed)).params
    base = config.adapt_config(cfg, seed)
    recalls = {}
    for name in ("cr_ss", "full"):
        _, report = engine.adapt(source, pair.target_train, engine.variant(base, **engine.ABLATION_ROWS[name]))
        recalls[name] = report.final.train_per_class[0]
    print(f"seed {seed}: minority recall without weights {recalls['cr_ss']:5.1f}%, with weights {recalls['full']:5.1f}%")

# ## What the weights look like
#
# Counts of confident predictions per class, and the resulting weights.  The
# largest class always gets weight 1; an empty class borrows the smallest
# non-zero count.

probs = calib.bank_init(source, pair.target_train.inputs).probs
alpha = calib.class_counts(probs, tau=0.8)
print("confident counts:", alpha.tolist())
print("class weights:   ", np.round(calib.class_weights(alpha), 3).tolist())
