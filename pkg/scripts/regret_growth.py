"""Regret and error growth against log r_t on the i.i.d. 3-node scenario, over several seeds.

Prints, per seed, the t = 10^4 over t = 10^3 factors of
  accumulated regret / log r_t,
  |error|^2 * lambda_min / log r_t,
  and the drop of the excitation ratio log r_t / lambda_min.

    python scripts/regret_growth.py [--seeds 0-7] [--config configs/iid_3node.toml]
"""
import argparse
from pathlib import Path

import numpy as np

from distls.harness.config import validate_config
from distls.harness.simulate import simulate_batch

ROOT = Path(__file__).resolve().parents[1]


def _seed_range(text):
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(ROOT / "configs" / "iid_3node.toml"))
    parser.add_argument("--seeds", type=_seed_range, default=_seed_range("0-7"))
    parser.add_argument("--early", type=int, default=1000)
    parser.add_argument("--late", type=int, default=10000)
    args = parser.parse_args()

    config = validate_config(args.config)
    traces = simulate_batch(config.scenario, config.topology, config.horizon, seeds=args.seeds,
                            init=config.init, cadence=config.record_cadence)
    print(f"{'seed':>5}{'regret x':>12}{'error x':>12}{'excitation drop':>18}")
    factors = []
    for seed, tr in zip(args.seeds, traces):
        tr = tr["distributed"]
        net, ks = tr.network, tr.network_ks

        def at(t):
            row = int(np.flatnonzero(ks == t)[0])
            log_r, lam = np.log(net[row, 0]), net[row, 1]
            sq = tr.sq_error[int(np.flatnonzero(tr.ks == t)[0])].sum()
            return net[row, 5] / log_r, sq * lam / log_r, log_r / lam

        (r1, e1, x1), (r2, e2, x2) = at(args.early), at(args.late)
        factors.append((r2 / r1, e2 / e1, x1 / x2))
        print(f"{seed:>5}{r2 / r1:>12.3f}{e2 / e1:>12.3f}{x1 / x2:>18.2f}")
    f = np.array(factors)
    print(f"seeds with regret factor > 2: {int(np.sum(f[:, 0] > 2))}/{len(f)}; "
          f"error factor > 2: {int(np.sum(f[:, 1] > 2))}/{len(f)}")


if __name__ == "__main__":
    main()
