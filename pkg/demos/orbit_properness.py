"""Properness modulo the dilation group on the sphere.

Along the orbit of a potential the energy stays constant while J grows, so
J alone cannot control the energy.  Minimizing J over the orbit (J_G) and
fitting E against J_G on rays that avoid the orbit recovers a positive
slope.  The last block shows how the usable window |a| <= X/4 depends on
the truncation X.
"""

import argparse
import logging

import numpy as np

from kahlerlab import group as gr
from kahlerlab.model import make_model, sample_potential

log = logging.getLogger("demo.orbit")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--rays", type=int, default=8)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("kahlerlab").setLevel(logging.WARNING)

    model = make_model("p1", 1024)
    eta = sample_potential(model, np.random.default_rng(args.seed))
    W = gr.window_limit(model)
    scan = gr.orbit_scan(eta, np.linspace(-W, W, 13))
    print(f"{'a':>7} {'E':>12} {'J':>9} {'I-J':>9}")
    for row in scan.rows():
        print(f"{row['a']:7.3f} {row['E']:12.8f} {row['J']:9.4f} {row['F']:9.4f}")
    jg = gr.jG(eta)
    log.info("J_G = %.5f at a = %.4f; F strictly convex: %s", jg["value"], jg["minimizer"],
             scan.is_strictly_convex())

    mts = gr.mt_scan(model, n_rays=args.rays, seed=args.seed)
    log.info("E >= C J - D on perpendicular rays: C = %.4f, D = %.4f; orbit control slope %.2e",
             mts.C, mts.D, mts.control_C)

    for X in (12.0, 18.0, 26.0):
        m = make_model("p1", int(round(85 * X)), X=X)
        w = gr.window_limit(m)
        J = gr.orbit_scan(m.zeros(), [0.0, w]).J
        log.info("X = %4.1f: window %.2f, J at the window edge %.3f", X, w, J[-1])


if __name__ == "__main__":
    main()
