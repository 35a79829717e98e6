"""A fully-connected first layer does not care where pixels are.

Shuffle the pixels of every image with one fixed permutation, shuffle the
first layer's input columns the same way, and training follows exactly the
same path. The first dense layer sums its products in a canonical order so
the floating-point results match bit for bit, not just approximately.
"""
import argparse
import os

import numpy as np

from convbias import data as D
from convbias import optim
from convbias import training as T
from convbias.analytics import permute_first_layer, permute_pixels
from convbias.architectures import ArchSpec, Family, build

p = argparse.ArgumentParser()
p.add_argument("--data-dir", default=os.environ.get("MNIST_DIR", "/root/data/mnist"))
p.add_argument("--images", type=int, default=1000)
args = p.parse_args()

train, _ = D.load("mnist", args.data_dir)
train = train.subset(np.arange(args.images))
shuffled, perm = permute_pixels(train, seed=7)

spec = ArchSpec(Family.S_FC, alpha=4, image_size=28, num_classes=10, in_channels=1)
net = build(spec, seed=0, canonical_input_sum=True)
net_p = permute_first_layer(net, perm)


def trajectory(network, dataset, epochs=2, batch=100):
    cfg = optim.OptimizerConfig(eta0=0.1, total_steps=epochs * T.steps_per_epoch(len(dataset), batch))
    state, losses = optim.OptimizerState(), []
    for epoch in range(1, epochs + 1):
        T.train_epoch(network, dataset, cfg, state, epoch, batch, seed=0, step_losses=losses)
    return losses


a, b = trajectory(net, train), trajectory(net_p, shuffled)
print("step  original          permuted")
for i in range(0, len(a), max(1, len(a) // 8)):
    print(f"{i:4d}  {a[i]!r:17s} {b[i]!r}")
W, Wp = net.params["conv1.weight"].value, net_p.params["conv1.weight"].value
print("identical losses:", a == b)
print("identical weights up to the permutation:", np.array_equal(Wp, W[:, perm]))
