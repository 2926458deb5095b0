# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused extraction kernel.

Mirrors ``atbrg._extract_py.Extractor``.  Paths are never stored: the DFS runs
once to fill per-entity end masks and a second time to emit the edges of the
paths whose end bucket spans two or more anchor items.  Scratch arrays are
sized to the entity vocabulary once and reset through a touched list, so a
call costs time proportional to the explored neighbourhood only.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint64_t, uint8_t
from libcpp.vector cimport vector

cnp.import_array()

cdef enum:
    MAXD = 32


cdef class Extractor:
    cdef const int64_t[:] indptr
    cdef const int32_t[:] rel
    cdef const int32_t[:] tail
    cdef uint64_t[:] end_mask
    cdef uint64_t[:] node_mask
    cdef uint8_t[:] dirty
    cdef vector[int32_t] touched
    cdef vector[int64_t] out

    def __init__(self, indptr, adj_rel, adj_tail):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.rel = np.ascontiguousarray(adj_rel, dtype=np.int32)
        self.tail = np.ascontiguousarray(adj_tail, dtype=np.int32)
        n = len(indptr) - 1
        self.end_mask = np.zeros(n, dtype=np.uint64)
        self.node_mask = np.zeros(n, dtype=np.uint64)
        self.dirty = np.zeros(n, dtype=np.uint8)

    cdef inline void _touch(self, int32_t e) nogil:
        if not self.dirty[e]:
            self.dirty[e] = 1
            self.touched.push_back(e)

    cdef void _walk(self, int32_t start, uint64_t bit, int max_depth, int64_t cap, bint emit) nogil:
        cdef int32_t nodes[MAXD + 1]
        cdef int32_t rels[MAXD]
        cdef int64_t pos[MAXD + 1]
        cdef int64_t end[MAXD + 1]
        cdef int depth = 0, j
        cdef int64_t k
        cdef int32_t t
        cdef uint64_t m
        cdef bint on_path

        nodes[0] = start
        pos[0] = self.indptr[start]
        end[0] = min(self.indptr[start + 1], pos[0] + cap)
        while depth >= 0:
            if pos[depth] >= end[depth]:
                depth -= 1
                continue
            k = pos[depth]
            pos[depth] += 1
            t = self.tail[k]
            on_path = False
            for j in range(depth + 1):
                if nodes[j] == t:
                    on_path = True
                    break
            if on_path:
                continue
            nodes[depth + 1] = t
            rels[depth] = self.rel[k]
            if not emit:
                self._touch(t)
                self.end_mask[t] |= bit
            else:
                m = self.end_mask[t]
                if m & (m - 1):
                    for j in range(depth + 1):
                        self.out.push_back(nodes[j])
                        self.out.push_back(rels[j])
                        self.out.push_back(nodes[j + 1])
                        self.node_mask[nodes[j + 1]] |= m
            if depth + 1 < max_depth:
                depth += 1
                pos[depth] = self.indptr[t]
                end[depth] = min(self.indptr[t + 1], pos[depth] + cap)

    def extract(self, anchors, int max_depth, int64_t cap):
        cdef const int32_t[:] anc = np.ascontiguousarray(anchors, dtype=np.int32)
        cdef Py_ssize_t a, n_anchor = anc.shape[0], i
        cdef int32_t e
        if n_anchor > 64:
            raise ValueError("native kernel supports at most 64 anchors")
        if max_depth > MAXD:
            raise ValueError(f"native kernel supports depth <= {MAXD}")
        self.out.clear()
        with nogil:
            for a in range(n_anchor):
                e = anc[a]
                self._touch(e)
                self.end_mask[e] |= (<uint64_t>1) << a
            for a in range(n_anchor):
                self._walk(anc[a], (<uint64_t>1) << a, max_depth, cap, False)
            for a in range(n_anchor):
                self._walk(anc[a], 0, max_depth, cap, True)

        cdef Py_ssize_t m = self.out.size()
        edges = np.empty(m, dtype=np.int64)
        cdef int64_t[:] ev = edges
        for i in range(m):
            ev[i] = self.out[i]
        edges = edges.reshape(-1, 3)
        if len(edges):
            edges = np.unique(edges, axis=0)

        nodes = []
        masks = []
        for i in range(<Py_ssize_t>self.touched.size()):
            e = self.touched[i]
            if self.node_mask[e]:
                nodes.append(e)
                masks.append(int(self.node_mask[e]))
            self.end_mask[e] = 0
            self.node_mask[e] = 0
            self.dirty[e] = 0
        self.touched.clear()
        order = sorted(range(len(nodes)), key=nodes.__getitem__)
        return edges, [nodes[i] for i in order], [masks[i] for i in order]
