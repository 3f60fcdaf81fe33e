"""Writes the small SVHN-layout MAT fixtures used by the dataset tests."""
import sys
from pathlib import Path

import numpy as np
from scipy.io import savemat

out = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
out.mkdir(parents=True, exist_ok=True)
r, c, ch, i = np.meshgrid(np.arange(32), np.arange(32), np.arange(3), np.arange(3), indexing="ij")
X = ((r * 7 + c * 3 + ch * 50 + i * 11) % 256).astype(np.uint8)
y = np.array([[10], [1], [7]], dtype=np.uint8)
savemat(out / "svhn_tiny.mat", {"X": X, "y": y}, do_compression=False)
savemat(out / "svhn_tiny_z.mat", {"X": X, "y": y}, do_compression=True)
