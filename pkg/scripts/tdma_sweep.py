"""Frame-length sweep for the learned TDMA schedule.

For each redundancy factor K it reports the bandit convergence frame
(hysteretic and classical updates), the frames spent in the backshift
search, and the redundancy left after the frame shrink.
"""

import argparse
from dataclasses import dataclass

import numpy as np

from rlmac import tdma
from rlmac.config import config_from_dict
from rlmac.harness import tdma_setup


@dataclass
class Config:
    topology: str = "fully_connected(9)"
    Ks: tuple = (1.2, 1.4, 1.6, 2.0, 2.5)
    seeds: int = 20
    cap: int = 20_000
    max_lag_tau: float = 1.0
    rules: tuple = ("hysteretic",)


def run_one(c: Config, K: float, seed: int, rule: str):
    cfg = config_from_dict({"topology": c.topology, "mac": "tdma-mab", "duration": c.cap,
                            "tdma": {"K": K, "max_lag_tau": c.max_lag_tau}})
    fc, offs = tdma_setup(cfg, seed)
    mab = tdma.simulate_mab(cfg.topology, fc, offs, c.cap, seed, rule=rule)
    if not mab.converged:
        return None, None, None
    d = tdma.simulate_defrag(cfg.topology, fc, offs, mab.arms, seed)
    search = max(v for v in d.done_frames.values() if v is not None)
    return mab.converged_frame, search, tdma.residual_redundancy(d.fc)


def main(c: Config):
    print("rule,K,converged,mab_frames_mean,defrag_frames_mean,total_mean,residual_pct_mean")
    for rule in c.rules:
        for K in c.Ks:
            rows = [run_one(c, K, s, rule) for s in range(c.seeds)]
            ok = [r for r in rows if r[0] is not None]
            if not ok:
                print(f"{rule},{K},0/{c.seeds},,,,")
                continue
            mab, dfg, res = (np.array(x, dtype=float) for x in zip(*ok))
            print(f"{rule},{K},{len(ok)}/{c.seeds},{mab.mean():.0f},{dfg.mean():.0f},"
                  f"{(mab + dfg).mean():.0f},{res.mean():.2f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--topology", default=Config.topology)
    ap.add_argument("--K", default=",".join(map(str, Config.Ks)))
    ap.add_argument("--seeds", type=int, default=Config.seeds)
    ap.add_argument("--cap", type=int, default=Config.cap)
    ap.add_argument("--classical", action="store_true", help="also run the classical update")
    a = ap.parse_args()
    rules = ("hysteretic", "classical") if a.classical else ("hysteretic",)
    main(Config(topology=a.topology, Ks=tuple(float(k) for k in a.K.split(",")), seeds=a.seeds,
                cap=a.cap, rules=rules))
