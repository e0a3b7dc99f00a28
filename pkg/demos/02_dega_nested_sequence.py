"""
From subchannel reliabilities to a nested sequence
==================================================

DE/GA scores every subchannel.  Sorting the scores gives one ordering
from which every (N, K) code is read off, so all rates share a single
table.
"""

import numpy as np

from nestpolar.construction import (code_from_sequence, dega_reliability,
                                    extract_subsequence, sequence_from_reliability)

# %%
rel = dega_reliability(32, 2.0)
seq = sequence_from_reliability(rel)
print("reliability order, worst first:")
print(" ".join(map(str, seq.order)))

# %%
# The best K entries of the order form the information set.  Codes for
# growing K are nested inside each other.
prev = set()
for k in (4, 8, 16, 24):
    info = set(np.flatnonzero(code_from_sequence(seq, k).mask == 0).tolist())
    print(f"K={k:2d} info set {sorted(info)}  contains previous: {prev <= info}")
    prev = info

# %%
# The design point reshuffles part of the order.
other = sequence_from_reliability(dega_reliability(32, -2.0))
moved = [i for i, (a, b) in enumerate(zip(seq.order, other.order)) if a != b]
print("positions that differ between 2 dB and -2 dB designs:", moved)

# %%
# A length-16 sequence is recovered by keeping the indices below 16.
print("N=16 subsequence:", extract_subsequence(seq, 16).order)
