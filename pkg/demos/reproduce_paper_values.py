#!/usr/bin/env python3
"""Re-derive every published value from the shipped example files.

Each line prints the quantity, the computed value, the expected one, and
ok/FAIL; the script exits non-zero if anything drifts outside tolerance.
"""

import os
import sys

import numpy as np

import epsarb as ea
from epsarb import io as eio
from epsarb import transport as tr

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
failures = []


def check(name, got, want, tol):
    ok = abs(got - want) <= tol
    print(f"{name:58s} {got: .10f}  expected {want: .10f}  {'ok' if ok else 'FAIL'}")
    if not ok:
        failures.append(name)


def main():
    n2 = ea.NormPair(2.0)

    nostrict, _ = eio.load_market(os.path.join(DATA, "nostrictarb.json"))
    rep = ea.detect_strict_arbitrage(nostrict, 1.0, n2)
    check("no strict arbitrage at the boundary level (optimum)", rep.optimum, 0.0, 1e-8)
    rep_half = ea.detect_strict_arbitrage(nostrict, 0.5, n2)
    check("uniform margin per unit norm at half level", rep_half.maximin_margin, 0.5, 1e-8)
    nap = ea.check_na_prime(nostrict, 1.0, n2)
    check("orthogonal no-arbitrage condition fails (holds=0)", float(nap.holds), 0.0, 0.0)

    nsaem, _ = eio.load_market(os.path.join(DATA, "nsaem.json"))
    emm = ea.find_eps_martingale_measure(nsaem, 1.0, n2, eta=1e-9)
    check("no approximate martingale measure (feasible=0)", float(emm.feasible), 0.0, 0.0)

    kbar, _ = eio.load_market(os.path.join(DATA, "kbar_market.json"))
    crit = ea.critical_value(kbar, n2)
    check("critical level of the (eps,+-1) market", crit.epsilon, 1.0, 1e-5)
    emm2 = ea.find_eps_martingale_measure(kbar, 1.0, n2)
    check("its measure is uniform (first weight)", emm2.measure.weights[0], 0.5, 1e-8)
    check("and sits exactly at deviation eps", emm2.deviation, 1.0, 1e-8)

    prange, _ = eio.load_market(os.path.join(DATA, "price_range.json"))
    psi = eio.load_payoff(prange, os.path.join(DATA, "psi_price_range.json"))
    up = ea.robust_price_bound(prange, 1.0, n2, psi, "sup")
    lo = ea.robust_price_bound(prange, 1.0, n2, psi, "inf")
    check("upper price bound", up.value, 0.5, 1e-6)
    check("upper bound attained (1=yes)", float(up.attained), 1.0, 0.0)
    check("lower price bound", lo.value, 0.0, 1e-6)
    check("lower bound not attained (0=no)", float(lo.attained), 0.0, 0.0)
    fr = ea.fair_price_range(prange, 1.0, n2, psi)
    check("fair range lower end", fr.lower, -1.0, 1e-6)
    check("fair range upper end", fr.upper, 1.5, 1e-6)

    drift, _ = eio.load_market(os.path.join(DATA, "drift.json"))
    check("deterministic drift critical level", ea.critical_value(drift, n2).epsilon,
          5.0, 1e-4)

    p0, _ = eio.load_market(os.path.join(DATA, "p0.json"))
    peps, _ = eio.load_market(os.path.join(DATA, "peps.json"))
    check("adapted increment distance of the shifted pair",
          tr.aw_inf_delta(p0, peps, 2.0).value, 2.0, 1e-10)
    check("non-causal increment comparison (2 x 0.25)",
          tr.w_inf(p0, peps, 2.0, increments=True).value, 0.5, 1e-10)

    krp, _ = eio.load_market(os.path.join(DATA, "kr_p.json"))
    krpp, _ = eio.load_market(os.path.join(DATA, "kr_pprime.json"))
    check("quantile-coupling cost", tr.knothe_rosenblatt(krp, krpp).esssup_cost(2.0),
          5.0, 1e-12)
    check("adapted level distance (beats the quantile coupling)",
          tr.aw_inf(krp, krpp, 2.0).value, 4.0, 1e-12)
    check("exponential smoothing at lambda=200",
          tr.elog_divergence(krp, krpp, 2.0, 200.0).value, 4.0, 0.05)

    cp, _ = eio.load_market(os.path.join(DATA, "closing_p.json"))
    cpp, _ = eio.load_market(os.path.join(DATA, "closing_pprime.json"))
    check("sup-cost distance of the small-probability crash pair",
          tr.aw_inf_delta(cp, cpp, 2.0).value, 5.25, 1e-9)

    print()
    if failures:
        print(f"{len(failures)} value(s) drifted: {failures}")
        return 1
    print("all shipped examples reproduce their published values")
    return 0


if __name__ == "__main__":
    sys.exit(main())
