"""Train the synthetic task under three history regimes and compare
block health: gamma = 0 (block-local), gamma = 0.7 (with the depth-scaled
current-block repair), gamma = 1.0 (prefix-cumulative, no repair).

Run: python demos/train_free_riding.py [--quick]
Roughly three minutes single-core; --quick trims epochs for a fast look.
"""

import sys

import numpy as np

from ffblocks.experiments import paper_pattern_config
from ffblocks.run import final_test_record, train_run

epochs = 12 if "--quick" in sys.argv else 50
seed = 42

results = {}
for gamma in (0.0, 0.7, 1.0):
    config = paper_pattern_config(gamma, seed=seed, epochs=epochs)
    print(f"training gamma={gamma} ({epochs} epochs, seed {seed}) ...",
          flush=True)
    result = train_run(config)
    results[gamma] = (result, final_test_record(result))

print()
print("=" * 76)
print("Per-block current separation at end of training (test split)")
print("=" * 76)
header = f"{'regime':<22}" + "".join(f"{f'block {d}':>10}" for d in range(4)) \
    + f"{'test acc':>10}"
print(header)
for gamma, (_, record) in results.items():
    name = {0.0: "gamma=0 (local)", 0.7: "gamma=0.7 + repair",
            1.0: "gamma=1.0 (no fix)"}[gamma]
    row = f"{name:<22}" + "".join(f"{v:>10.2f}" for v in record.sep_cur_nl)
    print(row + f"{record.val_acc:>10.3f}")

print()
print("=" * 76)
print("Attenuation ratio R and free-riding index F per block (training-time)")
print("=" * 76)
for gamma, (result, _) in results.items():
    last = result.records[-1]
    print(f"gamma={gamma}:")
    print("  mean R:", np.round(last.r_mean, 4))
    print("  F     :", np.round(last.f_idx, 4))

print()
print("=" * 76)
print("Reading")
print("=" * 76)
rec0 = results[0.0][1]
rec1 = results[1.0][1]
print(f"Block-local training keeps every block separating on its own "
      f"(deepest block at {rec0.sep_cur_nl[-1]:.2f}).")
print(f"Full history starves the deep blocks (deepest at "
      f"{rec1.sep_cur_nl[-1]:.2f} vs block 1 at {rec1.sep_cur_nl[1]:.2f}) "
      f"because the barrier saturates on inherited margin.")
print(f"Test accuracy barely notices: {rec0.val_acc:.3f} vs "
      f"{rec1.val_acc:.3f}. Block health and accuracy dissociate; the "
      f"cumulative class score is insensitive to which block supplies "
      f"the margin.")
