"""Train S-FC on MNIST with SGD and with beta-lasso, then compare.

Beta-lasso adds an l1 step and zeroes every weight whose magnitude falls
below beta * lambda. On a short budget the first layer thins out only once
lambda is large enough for the shrinkage to cross the threshold, so the
lambda values below are much larger than a long run would use.

    python demos/02_beta_lasso_vs_sgd.py --data-dir /path/to/mnist

Takes a few minutes with the default 10k training images.
"""
import argparse
import os
import tempfile

import numpy as np

from convbias import data as D
from convbias import training as T
from convbias.analytics import extract_filters, export_filters, locality_score

p = argparse.ArgumentParser()
p.add_argument("--data-dir", default=os.environ.get("MNIST_DIR", "/root/data/mnist"))
p.add_argument("--train-limit", type=int, default=10000)
p.add_argument("--epochs", type=int, default=5)
p.add_argument("--out", default=tempfile.mkdtemp(prefix="convbias_demo_"))
args = p.parse_args()

loaded = D.load("mnist", args.data_dir)
common = dict(arch="s-fc", alpha=8, data_dir=args.data_dir, epochs=args.epochs,
              batch_size=128, train_limit=args.train_limit, lr=0.1, seed=0)
runs = {
    "sgd": dict(optimizer="sgd"),
    "lasso 3e-4": dict(optimizer="beta-lasso", lambda_conv=3e-4, lambda_fc=1e-5),
    "lasso 1e-3": dict(optimizer="beta-lasso", lambda_conv=1e-3, lambda_fc=1e-5),
}
print(f"{'run':12s} {'test acc':>9s} {'layer-1 nonzero':>16s} {'median locality':>16s}")
for name, extra in runs.items():
    out = os.path.join(args.out, name.replace(" ", "_"))
    cfg = T.make_config({**common, **extra, "out_dir": out})
    res = T.train_run(cfg, loaded)
    w = res["network"].params["conv1.weight"].value
    filters = extract_filters(res["network"], "conv1", min_nnz=20, limit=64, seed=0)
    export_filters(filters, os.path.join(out, "filters"))
    loc = np.median([locality_score(f) for f in filters]) if filters else float("nan")
    print(f"{name:12s} {res['records'][-1]['test_acc']:9.4f} "
          f"{np.count_nonzero(w) / w.size:16.4f} {loc:16.3f}")
print(f"\nfilters written under {args.out}/*/filters")
