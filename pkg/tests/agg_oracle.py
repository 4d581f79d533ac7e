"""Brute-force majority aggregation, written from the rules alone."""
from iotdevid.aggregate import WHOLE


def brute_exceptions(macs, preds):
    """MACs that hold the (count, then smallest-MAC) maximum for two or more labels."""
    dominant = {}
    for label in set(preds):
        best = None
        for mac in sorted(set(macs)):
            c = sum(1 for m, p in zip(macs, preds) if m == mac and p == label)
            if c and (best is None or c > best[0]):
                best = (c, mac)
        dominant[label] = best[1]
    return {m for m in set(macs) if sum(1 for v in dominant.values() if v == m) >= 2}


def brute_finals(macs, preds, exceptions, size):
    finals = list(preds)
    for mac in set(macs):
        if mac in exceptions:
            continue
        pos = [i for i, m in enumerate(macs) if m == mac]
        step = len(pos) if size == WHOLE else size
        for s in range(0, len(pos), step):
            chunk = pos[s:s + step]
            tally = {}
            for i in chunk:
                tally[preds[i]] = tally.get(preds[i], 0) + 1
            top = max(tally.values())
            winners = [lab for lab, c in tally.items() if c == top]
            if len(winners) == 1:
                for i in chunk:
                    finals[i] = winners[0]
    return finals
