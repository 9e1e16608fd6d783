"""Process-wide call counters used to check which stages an ablation touches."""
from collections import Counter

COUNTERS = Counter()


def hit(name, n=1):
    COUNTERS[name] += n


def reset():
    COUNTERS.clear()


def snapshot():
    return dict(COUNTERS)
