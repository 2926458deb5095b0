"""Brute-force relational subgraph built straight from the named triple list."""

from collections import defaultdict


def oracle(triples, alignment, target, behaviors, max_depth, fanout_cap, entities=()):
    fwd_rel = []
    for _, r, _ in triples:
        if r not in fwd_rel:
            fwd_rel.append(r)
    adj = defaultdict(set)
    for h, r, t in triples:
        adj[h].add((r, t, False))
        adj[t].add((r, h, True))
    rid = {r: i for i, r in enumerate(fwd_rel)}
    n = len(fwd_rel)

    def rel_id(r, inv):
        return rid[r] + (n if inv else 0)

    # name-level ordering must follow entity ids, rebuilt from first appearance
    order = {name: i for i, name in enumerate(entities)}
    for h, _, t in triples:
        order.setdefault(h, len(order))
        order.setdefault(t, len(order))

    def sorted_nbrs(e):
        return sorted(adj[e], key=lambda x: (rel_id(x[0], x[2]), order[x[1]]))[:fanout_cap]

    items = []
    for v in (target, *behaviors):
        if v not in items:
            items.append(v)

    paths = []  # (item, nodes, rels)

    def walk(item, nodes, rels):
        if len(rels) == max_depth:
            return
        for r, t, inv in sorted_nbrs(nodes[-1]):
            if t in nodes:
                continue
            p = (item, nodes + [t], rels + [(r, inv)])
            paths.append(p)
            walk(*p)

    for v in items:
        walk(v, [alignment[v]], [])

    reach = defaultdict(set)
    for v in items:
        reach[alignment[v]].add(v)
    for item, nodes, _ in paths:
        reach[nodes[-1]].add(item)

    anchors = {alignment[v] for v in items}
    entities, edges = set(), set()
    for item, nodes, rels in paths:
        if len(reach[nodes[-1]]) < 2:
            continue
        entities.update(x for x in nodes if x not in anchors)
        for a, b, (r, inv) in zip(nodes, nodes[1:], rels):
            edges.add((a, r, inv, b))
            edges.add((b, r, not inv, a))
    return entities, edges


def to_names(kg, sub):
    ents = {kg.entity_names[e] for e in sub.entities}
    edges = set()
    n = kg.n_forward_relations
    for h, r, t in sub.edges:
        edges.add((kg.entity_names[h], kg.relation_names[r % n], r >= n, kg.entity_names[t]))
    return ents, edges
