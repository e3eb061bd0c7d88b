# # Adapting without source data
#
# Start from the source model and adapt on unlabeled target samples.  Each
# ablation row switches on one more component: consistency regularization,
# confidence-based sample selection, prototype gating and class weights.

from dataclasses import replace

import numpy as np

from sfdalab import config, engine, synthdata

cfg = config.load("configs/benchmark.json")
seeds = [0, 1, 2]

rows = {}
for seed in seeds:
    pair = synthdata.standardize(synthdata.generate(config.data_spec(cfg, seed)))
    source = engine.pretrain_source(pair, config.pretrain_config(cfg, seed)).params
    for row in engine.run_ablation(source, pair, config.adapt_config(cfg, seed), seed):
        rows.setdefault(row["config"], []).append(row)

print(f"{'config':12s} {'train':>7s} {'test':>7s} {'gap':>6s}")
for name, runs in rows.items():
    train = np.median([r["train_acc"] for r in runs])
    test = np.median([r["test_acc"] for r in runs])
    print(f"{name:12s} {train:7.2f} {test:7.2f} {train - test:6.2f}")

# ## One run in detail
#
# The per-epoch report shows the fraction of pseudo-labels that agree with
# their nearest prototype and the pseudo-label accuracy.  ``report.to_csv()``
# gives the full table with per-class recall.

pair = synthdata.standardize(synthdata.generate(config.data_spec(cfg, 0)))
source = engine.pretrain_source(pair, config.pretrain_config(cfg, 0)).params
adapt_cfg = replace(config.adapt_config(cfg, 0), epochs=10)
_, report = engine.adapt(source, pair.target_train, adapt_cfg, pair.target_test)
print(f"{'epoch':>5s} {'train':>7s} {'loss':>7s} {'gate':>6s} {'pseudo':>7s}")
for r in report.epochs[1:]:
    print(f"{r.epoch:5d} {r.train_acc:7.2f} {r.mean_loss:7.4f} {r.gate_ratio:6.3f} {r.pseudo_acc:7.2f}")
