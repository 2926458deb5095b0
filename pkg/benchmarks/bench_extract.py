"""Time subgraph extraction with the compiled kernel against the pure-Python one.

    python3 benchmarks/bench_extract.py [--entities 3000] [--samples 300] [--depth 2]
"""

import argparse
import json
import time

import numpy as np

from atbrg.kg import KnowledgeGraph
from atbrg import subgraph
from atbrg.subgraph import build, native_available


def random_graph(rng, n_items, n_entities, n_triples, n_relations):
    triples = set()
    while len(triples) < n_triples:
        h = int(rng.integers(n_entities))
        t = int(rng.integers(n_entities))
        if h != t:
            triples.add((f"e{h}", f"r{rng.integers(n_relations)}", f"e{t}"))
    names = [f"e{i}" for i in range(n_entities)]
    return KnowledgeGraph.from_triples(sorted(triples), {i: f"e{i}" for i in range(n_items)}, entities=names)


def time_backend(kg, cases, backend, depth, fanout, rounds):
    best, out = float("inf"), None
    for _ in range(rounds):
        started = time.perf_counter()
        out = [build(kg, t, b, depth, fanout, backend=backend) for t, b in cases]
        best = min(best, time.perf_counter() - started)
    return best, out


def time_kernel(kg, cases, backend, depth, fanout, rounds):
    """Path search alone, without assembling RelationalSubgraph objects."""
    ex = subgraph._extractor(kg, backend)
    anchors = [np.asarray([kg.align(i) for i in subgraph.anchor_items(t, b)], dtype=np.int32) for t, b in cases]
    best = float("inf")
    for _ in range(rounds):
        started = time.perf_counter()
        for a in anchors:
            ex.extract(a, depth, fanout)
        best = min(best, time.perf_counter() - started)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--items", type=int, default=500)
    p.add_argument("--entities", type=int, default=3000)
    p.add_argument("--triples", type=int, default=12000)
    p.add_argument("--relations", type=int, default=8)
    p.add_argument("--samples", type=int, default=300)
    p.add_argument("--behaviors", type=int, default=10)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--fanout", type=int, default=16)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write results here")
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    kg = random_graph(rng, args.items, args.entities, args.triples, args.relations)
    cases = [(int(rng.integers(args.items)),
              [int(b) for b in rng.integers(args.items, size=args.behaviors)]) for _ in range(args.samples)]

    backends = ["python"] + (["native"] if native_available() else [])
    results, kernel, outputs = {}, {}, {}
    for backend in backends:
        results[backend], outputs[backend] = time_backend(kg, cases, backend, args.depth, args.fanout, args.rounds)
        kernel[backend] = time_kernel(kg, cases, backend, args.depth, args.fanout, args.rounds)
        print(f"{backend:>7}: build {results[backend]:.3f}s, kernel {kernel[backend]:.3f}s "
              f"for {args.samples} subgraphs ({1e3 * results[backend] / args.samples:.2f} ms each)")
    if "native" in results:
        assert outputs["native"] == outputs["python"], "backends disagree"
        print(f"speedup: build {results['python'] / results['native']:.1f}x, "
              f"kernel {kernel['python'] / kernel['native']:.1f}x (outputs identical)")
    else:
        print("compiled kernel not built; only the Python backend was timed")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"build_seconds": results, "kernel_seconds": kernel, "args": vars(args)}, fh, indent=1)


if __name__ == "__main__":
    main()
