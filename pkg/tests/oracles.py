"""Loop-based reference implementations used to cross-check vectorized code."""
import itertools
import math


def similarity_scalar(a, b, F=0.025, T_J=0.4):
    ja, jb = a.joints.tolist(), b.joints.tolist()
    xs = [p[0] for p in ja if p[2] >= T_J]
    ys = [p[1] for p in ja if p[2] >= T_J]
    if not xs:
        return 0.0
    delta_max = F * math.sqrt((max(xs) - min(xs)) ** 2 + (max(ys) - min(ys)) ** 2)
    total, count = 0.0, 0
    for pa, pb in zip(ja, jb):
        if pa[2] < T_J or pb[2] < T_J:
            continue
        count += 1
        d = math.sqrt((pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2)
        if delta_max > 0 and d < delta_max:
            total += 1.0 - d / delta_max
    return total / count if count else 0.0


def pair_scalar(a, b, **kw):
    return max(similarity_scalar(a, b, **kw), similarity_scalar(b, a, **kw))


def dedupe_bruteforce(dets, T_S=0.15):
    """Mark-and-remove over all pairs, walking by descending pose score."""
    means = [sum(j[2] for j in d.joints.tolist()) / 15 for d in dets]
    order = sorted(range(len(dets)), key=lambda i: (-means[i], i))
    removed = set()
    for pos, i in enumerate(order):
        if i in removed:
            continue
        for j in order[pos + 1:]:
            if j not in removed and pair_scalar(dets[i], dets[j]) > T_S:
                removed.add(j)
    return [dets[i] for i in order if i not in removed]


def stable_matching_bruteforce(sim, T_S=0.15):
    """Enumerate every partial matching and return the unique stable one.

    A matching is stable when no unmatched-to-each-other pair above T_S
    would both rather be together than with their current partners.
    """
    n_d = len(sim)
    n_t = len(sim[0]) if n_d else 0
    edges = [(d, t) for d in range(n_d) for t in range(n_t) if sim[d][t] > T_S]
    stable = []
    for r in range(len(edges) + 1):
        for subset in itertools.combinations(edges, r):
            ds = [d for d, _ in subset]
            ts = [t for _, t in subset]
            if len(set(ds)) < len(ds) or len(set(ts)) < len(ts):
                continue
            d_of = {d: t for d, t in subset}
            t_of = {t: d for d, t in subset}
            ok = True
            for d, t in edges:
                if d_of.get(d) == t:
                    continue
                d_cur = sim[d][d_of[d]] if d in d_of else -1
                t_cur = sim[t_of[t]][t] if t in t_of else -1
                if sim[d][t] > d_cur and sim[d][t] > t_cur:
                    ok = False
                    break
            if ok:
                stable.append(d_of)
    return stable
