"""Pure-Python fused extraction kernel.

Same contract as the compiled ``_extract_ext.Extractor``; used when the
extension is unavailable, when ``ATBRG_PURE_PYTHON=1`` is set, or when a
sample has more anchors than fit in a 64-bit mask.
"""

import numpy as np


class Extractor:
    def __init__(self, indptr, adj_rel, adj_tail):
        self.indptr = indptr.tolist()
        self.rel = adj_rel.tolist()
        self.tail = adj_tail.tolist()

    def _walk(self, start, max_depth, cap, visit):
        indptr, rel, tail = self.indptr, self.rel, self.tail
        nodes = [start]
        rels = []

        def rec(node, depth):
            lo = indptr[node]
            hi = min(indptr[node + 1], lo + cap)
            for k in range(lo, hi):
                t = tail[k]
                if t in nodes:
                    continue
                nodes.append(t)
                rels.append(rel[k])
                visit(nodes, rels)
                if depth + 1 < max_depth:
                    rec(t, depth + 1)
                nodes.pop()
                rels.pop()

        rec(start, 0)

    def extract(self, anchors, max_depth, cap):
        """Graph connect + prune for one sample.

        Parameters
        ----------
        anchors : sequence of int
            Anchor entity per anchor item; position ``a`` owns bit ``1 << a``.

        Returns
        -------
        edges : (m, 3) int64 array
            Unique path edges ``(h, r, t)`` in traversal direction, sorted.
        nodes, masks : lists
            Non-start nodes of surviving paths and the union of the item
            masks of the buckets whose paths cross them.
        """
        anchors = [int(a) for a in anchors]
        self_mask = {}
        for a, e in enumerate(anchors):
            self_mask[e] = self_mask.get(e, 0) | (1 << a)

        end_mask = dict(self_mask)

        for a, start in enumerate(anchors):
            bit = 1 << a

            def mark(nodes, rels, bit=bit):
                t = nodes[-1]
                end_mask[t] = end_mask.get(t, 0) | bit

            self._walk(start, max_depth, cap, mark)

        edges = set()
        node_mask = {}

        def emit(nodes, rels):
            m = end_mask[nodes[-1]]
            if m & (m - 1):
                for j, r in enumerate(rels):
                    edges.add((nodes[j], r, nodes[j + 1]))
                    node_mask[nodes[j + 1]] = node_mask.get(nodes[j + 1], 0) | m

        for start in anchors:
            self._walk(start, max_depth, cap, emit)

        out = np.array(sorted(edges), dtype=np.int64).reshape(-1, 3)
        keys = sorted(node_mask)
        return out, keys, [node_mask[k] for k in keys]
