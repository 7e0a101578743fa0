"""
Training the learned shape network
==================================

The network maps features to ``C(x) = R(x)^T R(x) + eps I``. Training first
imitates the NLE shapes, then minimizes the Mahalanobis score plus a volume
penalty. On Gaussian data the best shape is known in closed form, so we can
see how close a short desk-scale run gets.
"""

import time

import numpy as np

from lmve import conformal_calibrate, evaluate, fit_center, sample_joint, split_dataset
from lmve import condition, optimal_volume, random_joint_spec
from lmve.net import TrainConfig, fit_lmve, load_checkpoint, save_checkpoint

spec = random_joint_spec(d=3, n=2, seed=0)
ds = sample_joint(spec, m=5000, seed=0)
split = split_dataset(ds, seed=0)
tr, va, te = split.train_idx, split.val_idx, split.test_idx
center = fit_center(ds.X[tr], ds.Y[tr])

# fewer iterations than the desk config keep this script quick
config = TrainConfig.desk(iters_init=3000, iters_train=3000)
history = {}
t0 = time.perf_counter()
shape = fit_lmve(ds.X[tr], ds.Y[tr], center, config, history=history)
print(f"trained in {time.perf_counter() - t0:.1f}s, lambda = {shape.info['lambda']:.4g}")
for phase, losses in history.items():
    print(f"{phase} loss: first {losses[0]:.4f}, last {losses[-1]:.4f}")

model = conformal_calibrate(shape, center, ds.X[va], ds.Y[va], eta=0.9)
ev = evaluate(model, ds.X[te], ds.Y[te])
best = optimal_volume(condition(spec).cond_cov, 0.9)
print(f"coverage {ev.coverage:.3f}, mean volume / optimum {ev.mean_volume / best:.3f}")

# parameters round-trip through the text checkpoint
save_checkpoint("lmve_demo.ckpt", shape.params, shape.eps)
params, eps = load_checkpoint("lmve_demo.ckpt")
assert np.array_equal(params.to_vector(), shape.params.to_vector()) and eps == shape.eps
print("checkpoint written to lmve_demo.ckpt")
