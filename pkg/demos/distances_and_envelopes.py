"""Three routes to the d1 distance and the rooftop envelope on the torus.

For a pair of potentials on the sphere the distance is computed from the
rooftop envelope, from the initial speed of the Legendre geodesic, and as
the arc length of the sampled geodesic.  The second part refines the torus
grid and reports how fast the envelope settles.
"""

import argparse
import logging

import numpy as np

from kahlerlab import metric as mt
from kahlerlab.model import Potential, make_model, mean, sample_potential

log = logging.getLogger("demo.distances")


def centered(u):
    return u - mean(u)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("kahlerlab").setLevel(logging.WARNING)
    rng = np.random.default_rng(args.seed)

    sphere = make_model("p1", 512)
    for k in range(3):
        u = centered(sample_potential(sphere, rng, min_density=0.3))
        v = centered(sample_potential(sphere, rng, min_density=0.3))
        rep = mt.d1(u, v, K=0)
        arc = mt.path_length(mt.geodesic(u, v, K=16), "darvas")
        print(f"pair {k}: envelope {rep.d1:.6f}  initial speed {rep.d1_dtn:.6f}  arc {arc:.6f}")

    def pair(N):
        torus = make_model("torus", N)
        x, y = torus.coords
        u = Potential(torus, 0.02 * np.sin(2 * np.pi * x) + 0.01 * np.cos(2 * np.pi * (x + y)))
        v = Potential(torus, -0.015 * np.sin(2 * np.pi * y + 1.0) + 0.002)
        return mt.rooftop(u, v)

    coarse = {N: pair(N).samples for N in (16, 32, 64)}
    e1 = np.max(np.abs(coarse[16] - coarse[32][::2, ::2]))
    e2 = np.max(np.abs(coarse[32] - coarse[64][::2, ::2]))
    log.info("rooftop grid differences %.3e, %.3e: observed order %.2f", e1, e2, np.log2(e1 / e2))


if __name__ == "__main__":
    main()
