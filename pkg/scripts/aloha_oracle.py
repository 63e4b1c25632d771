"""Compare simulated pure ALOHA against S = G exp(-2G) over a grid of offered loads."""

import argparse
from dataclasses import dataclass, field

from rlmac.aloha import aloha_theoretical_throughput, simulate_aloha
from rlmac.topology import TrafficSpec, fully_connected


@dataclass
class Config:
    n_nodes: int = 10
    loads: tuple = (0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
    epochs: int = 1000
    seeds: list = field(default_factory=lambda: [0])


def main(cfg: Config):
    topo = fully_connected(cfg.n_nodes)
    print("G,S_sim,S_theory,rel_err")
    for G in cfg.loads:
        sims = []
        for seed in cfg.seeds:
            r = simulate_aloha(topo, TrafficSpec.uniform(topo, G / cfg.n_nodes), cfg.epochs, seed, mode="offered")
            sims.append(r.throughput().sum(0).mean())
        S = sum(sims) / len(sims)
        th = aloha_theoretical_throughput(G)
        print(f"{G},{S:.5f},{th:.5f},{abs(S - th) / th:.4f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=Config.epochs)
    ap.add_argument("--seeds", type=int, default=1, help="number of seeds")
    a = ap.parse_args()
    main(Config(epochs=a.epochs, seeds=list(range(a.seeds))))
