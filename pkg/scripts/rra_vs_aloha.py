"""Throughput and convergence of the learning MAC against pure ALOHA.

Two experiments: a packet-error sweep at a fixed load (throughput ratio and
convergence epoch) and an offered-load sweep (mean S of both protocols).
"""

import argparse
from dataclasses import dataclass

import numpy as np

from rlmac.config import config_from_dict
from rlmac.harness import run_scenario


@dataclass
class Config:
    topology: str = "fully_connected(3)"
    epochs: int = 3000
    seeds: int = 10
    load: float = 0.5
    pers: tuple = (0.0, 0.05, 0.10)
    loads: tuple = (0.2, 0.5, 1.0, 1.5, 2.0)


def _cfg(c: Config, mac: str, load: float, per: float = 0.0, epochs: int | None = None):
    return config_from_dict({"topology": c.topology, "mac": mac, "duration": epochs or c.epochs,
                             "traffic": {"load": load}, "channel": {"per": per}})


def per_sweep(c: Config):
    print("per,ratio_mean,ratio_sd,convergence_mean,not_converged")
    for per in c.pers:
        runs = [run_scenario(_cfg(c, "rra", c.load, per), s)[1] for s in range(c.seeds)]
        ratios = [r.ratio_vs_aloha for r in runs]
        conv = [r.convergence for r in runs if r.convergence is not None]
        cm = np.mean(conv) if conv else float("nan")
        print(f"{per},{np.mean(ratios):.3f},{np.std(ratios):.3f},{cm:.0f},{len(runs) - len(conv)}")


def load_sweep(c: Config):
    print("load,S_rra,S_aloha")
    for g in c.loads:
        rra = np.mean([run_scenario(_cfg(c, "rra", g), s)[1].mean_S for s in range(c.seeds)])
        alo = np.mean([run_scenario(_cfg(c, "aloha", g, epochs=300), s)[1].mean_S for s in range(c.seeds)])
        print(f"{g},{rra:.4f},{alo:.4f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("experiment", choices=["per", "load"])
    ap.add_argument("--topology", default=Config.topology)
    ap.add_argument("--epochs", type=int, default=Config.epochs)
    ap.add_argument("--seeds", type=int, default=Config.seeds)
    a = ap.parse_args()
    c = Config(topology=a.topology, epochs=a.epochs, seeds=a.seeds)
    (per_sweep if a.experiment == "per" else load_sweep)(c)
