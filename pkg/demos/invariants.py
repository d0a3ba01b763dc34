"""Run the invariant suite, then feed it a disconnected network to see a check fail."""
import numpy as np

from dectdc.network import CommMatrix
from dectdc.verify import verify_suite

print(verify_suite(seed=0).text())

w = np.eye(10)
report = verify_suite(seed=0, topologies=[CommMatrix(w, w > 0, 1.0)], ratio_draws=20)
print()
print(report["consensus contraction [topology 0]"].line())
