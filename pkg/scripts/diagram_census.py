#!/usr/bin/env python3
"""Power-counting census of gate-free pairing graphs.

Enumerates pairings, classifies every connected subgraph, and reports the
superficial-convergence verdicts together with the graph-F sightings.
"""

import argparse

from lifshitzlab import diagrams as dg


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--nmax", type=int, default=4)
    parser.add_argument("--with-gates", action="store_true")
    args = parser.parse_args()

    for n in range(2, args.nmax + 1):
        parts = dg.enumerate_partitions(dg.IndexSet(n, n), pairings_only=True,
                                        gate_free=not args.with_gates)
        convergent = 0
        f_sightings = 0
        for part in parts:
            graph = dg.build_feynman_graph(part)
            rep = dg.classify_superficial_convergence(graph)
            convergent += rep.superficially_convergent
            for rec in rep.proper_div_nonnegative(graph):
                f_sightings += dg.is_graph_F(graph, rec.edges)
        div, ldiv = dg.divergence_degree(dg.build_feynman_graph(parts[0]))
        print(f"n = {n}: {len(parts)} pairings, {convergent} superficially "
              f"convergent, full-graph div = {div} (= 2 - n), graph-F subgraphs: "
              f"{f_sightings}")


if __name__ == "__main__":
    main()
