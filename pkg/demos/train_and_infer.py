"""
Training a small model and running it on a new pair
===================================================

A short optimisation on a handful of synthetic scenes, followed by inference
on an unseen scene.  Two hundred steps take a minute or so on one core; the
estimate gets visibly better than the untrained model but is far from the
converged quality of ``configs/overfit.cfg``.
"""

import numpy as np

from tilestereo import MetricReport, load_config, predict
from tilestereo.data import SceneConfig, gen_scene
from tilestereo.train import train

# %% configuration: the overfit preset, shortened
run = load_config("configs/overfit.cfg", [
    "train.steps=200",
    "train.schedule=0:4e-4",
    "train.checkpoint_every=100",
    "train.val_every=100",
    "train.out_dir=demo_out/run",
])
for line in run.lines():
    print(line)

# %% train; every step prints the loss and its four components
result = train(run, quiet=True)
for h in result.history[::40]:
    print("step %3d  loss %.3f  init %.3f  prop %.3f" % (h["step"], h["loss"], h["init"], h["prop"]))
for step, rep in result.validation:
    print("validation after %d steps: EPE %.3f  bad-1 %.1f%%" % (step, rep.epe, rep.bad[1.0]))

# %% inference on a scene the model has never seen
scene = gen_scene(SceneConfig(64, 128, seed=4242))
disp, slopes = predict(result.store, result.model, scene.left[None, None], scene.right[None, None])
rep = MetricReport.compute(disp[0, 0], scene.disparity, scene.valid)
print(rep.table("unseen scene"))
print("predicted slope range dx %.3f .. %.3f" % (slopes[0, 0].min(), slopes[0, 0].max()))
print("checkpoints:", [p.name for p in result.checkpoints])
