"""
Training a small forecaster and ablating its pathways
=====================================================

We fit the full model and the variant without the segment transformer on
a short synthetic panel, then compare both to persistence on the test
split. Epochs are kept small so this runs in a couple of minutes on a
laptop CPU; accuracy improves with longer training.
"""


from solarcast.data import NormStats, SyntheticConfig, build_windows, chronological_split, generate_synthetic
from solarcast.metrics import evaluate
from solarcast.model import ModelConfig, init_params, model_forward
from solarcast.training import TrainConfig, predict, train

sc = SyntheticConfig(n_nodes=8, days=30, seed=1)
panel, truth = generate_synthetic(sc)

model_cfg = ModelConfig()  # 24-step window, 12-step horizon, float32
parts = chronological_split(panel, min_length=model_cfg.T + model_cfg.h)
stats = NormStats.from_panel(parts[0])
train_ds, val_ds, test_ds = [build_windows(p, model_cfg.T, model_cfg.h, stats, True, sc.daylight_slots())
                             for p in parts]

# ablated components are simply not allocated, so the counts differ
for ablation in ((), ("no_emb",), ("no_stgl",), ("no_sgt",)):
    print(ablation or "full", init_params(model_cfg, ablation).count(), "parameters")

reports = {}
for ablation in ((), ("no_sgt",)):
    params = init_params(model_cfg, ablation, seed=1)
    best, history = train(params, train_ds, val_ds, model_cfg, TrainConfig(max_epochs=8, seed=1))
    print(ablation or "full", "best epoch", history.best_epoch, "val MSE %.3f" % history.best_val)
    reports[ablation] = evaluate(lambda d: predict(best, d, model_cfg), test_ds, ablation="+".join(ablation) or "full")
    if not ablation:
        full = best

for rep in reports.values():
    print(rep.to_text())

# the fusion weight alpha says how much the transformer side is trusted
y, alpha = model_forward(full, test_ds.X[:64].astype(model_cfg.dtype), test_ds.start_slot[:64],
                         model_cfg, return_alpha=True)
print("alpha over 64 test windows: mean %.2f, range [%.2f, %.2f]"
      % (alpha.data.mean(), alpha.data.min(), alpha.data.max()))
