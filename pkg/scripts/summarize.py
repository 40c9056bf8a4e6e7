"""Print MSE tables, log-log slopes and Q-Q correlations from experiment output dirs.

    python scripts/summarize.py results/mse_d4 results/clt_d6
"""

import json
import sys
from pathlib import Path


def show(path: Path):
    s = json.loads((path / "summary.json").read_text())
    print(f"== {path} ({s['config']['kind']})")
    for c in s["cells"]:
        head = f"  d={c['d']} N={c['n']}" + (f" case={c['case']}" if "case" in c else "")
        print(head)
        for e in c.get("estimators", []):
            bias = f" bias={e['bias']:+.5f}" if "bias" in e else ""
            print(f"    {e['estimator']:<10} mse={e['mse']:.6f}{bias}")
        for label, q in c.get("qq", {}).items():
            print(f"    {label:<10} qq r={q['correlation']:.4f}")
        if "best_rho" in c:
            print(f"    best rho={c['best_rho']}")
    for sl in s.get("slopes", []):
        print(f"  slope {sl['estimator']:<10} {sl['slope']:.3f}")


if __name__ == "__main__":
    for arg in sys.argv[1:] or ["results"]:
        show(Path(arg))
