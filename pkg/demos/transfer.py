"""End to end at desk scale: teacher, event pre-training, ablation, zero/few-shot.

About 20 seconds on one core.

    python3 demos/transfer.py
"""

import numpy as np

from evclip.encoders import encode_prompts
from evclip.evaluation import zero_shot_accuracy
from evclip.losses import LossConfig
from evclip.synth import SyntheticConfig, TeacherConfig, all_class_samples, gen_dataset, pretrain_teacher
from evclip.training import (
    OptimizerConfig,
    TrainState,
    event_embeddings,
    few_shot_eval,
    heldout_evaluator,
    pretrain,
    teacher_image_embeddings,
)

cfg = SyntheticConfig(num_classes=10, samples_per_class=200, seed=0)
ds = gen_dataset(cfg)
image, text = pretrain_teacher(all_class_samples(cfg), TeacherConfig(seed=0))
print("train classes", ds.train.class_names)
print("heldout classes", ds.heldout.class_names)

tr, held = ds.train, ds.heldout
I, T = teacher_image_embeddings(image, tr), encode_prompts(text, tr.prompts)
T_held = encode_prompts(text, held.prompts)
evaluate = heldout_evaluator(held.events, T_held, held.labels)
opt = OptimizerConfig(learning_rate=0.1, batch_size=32, seed=0)

print("teacher on heldout images", zero_shot_accuracy(teacher_image_embeddings(image, held), T_held, held.labels))

curves = {}
for name, loss in {"all losses": LossConfig(), "no zero-shot term": LossConfig(alpha=0.0)}.items():
    st = TrainState.start(image, seed=0)
    rows = pretrain(st, tr, I, T, loss, opt, 200, evaluate, 20)
    curves[name] = [r["heldout_acc"] for r in rows if not np.isnan(r["heldout_acc"])]
    print(f"{name:18s} loss {rows[1]['L']:.3f} -> {rows[-1]['L']:.3f}  heldout", np.round(curves[name], 3))
    theta = st.student

print("few-shot on heldout classes")
for row in few_shot_eval(theta, held, T_held, [0, 1, 5], 50, LossConfig(), opt):
    print(f"  n={row['n_per_class']}  support={row['support']:3d}  top1={row['top1']:.3f}")
