"""Slow, obviously-correct reference implementations used only by the tests."""

import itertools

import numpy as np
import torch


def brute_auc(scores, novel_flags):
    """Count (novel, normal) pairs: 1 if the novel score is higher, 1/2 on ties."""
    pos = [s for s, f in zip(scores, novel_flags) if f]
    neg = [s for s, f in zip(scores, novel_flags) if not f]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_align(corpus, kr_triples):
    """Per sentence, per unordered entity pair: emit when exactly one triple links them."""
    kr = list(kr_triples)
    out = []
    for si, sent in enumerate(corpus):
        first = {}
        for m in sorted(sent.mentions, key=lambda m: m.start):
            if m.entity_id not in first:
                first[m.entity_id] = m
        for a, b in itertools.combinations(sorted(first), 2):
            facts = [t for t in kr if {t[0], t[2]} == {a, b} and t[0] != t[2]]
            if len(facts) == 1:
                h, r, t = facts[0]
                out.append((si, first[h].start, first[h].end, h, r, t, first[t].start, first[t].end))
    return out


def legal_corruptions(triple_key, entity_ids, known, filter_known=True):
    """Every output corruption may produce, by enumeration."""
    e1, r, e2 = triple_key
    out = set()
    for e in entity_ids:
        if e in (e1, e2):
            continue
        for cand in ((e, r, e2), (e1, r, e)):
            if not (filter_known and cand in known):
                out.add(cand)
    return out


def central_difference(fn, params, step=1e-4):
    """Numerical gradient of scalar ``fn()`` w.r.t. each tensor in ``params`` (perturbed in place)."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = float(fn())
                flat[i] = orig - step
                down = float(fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * step)
            grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = a.detach().double().numpy(), n.detach().double().numpy()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
