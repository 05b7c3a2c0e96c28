"""Regenerates the bundled scenario corpora under scenarios/.

Each corpus is sampled from a fixed-seed order-2 Markov chain whose
conditionals blend a shared background distribution with a context-specific
peak. The blend weight controls how far an order-0 draft is from the order-2
target.
"""
import pathlib

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent / "scenarios"


def chain(vocab, peak_weight, rng):
    background = rng.dirichlet(np.full(vocab, 2.0))
    table = {}
    for a in range(vocab):
        for b in range(vocab):
            peak = rng.dirichlet(np.full(vocab, 0.3))
            table[(a, b)] = (1 - peak_weight) * background + peak_weight * peak
    return table


def sample(table, vocab, n_seqs, length, rng):
    seqs = []
    for _ in range(n_seqs):
        s = list(rng.integers(0, vocab, size=2))
        while len(s) < length:
            p = table[(s[-2], s[-1])]
            s.append(int(rng.choice(vocab, p=p)))
        seqs.append(s)
    return seqs


def write(path, vocab, seqs):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(f"vocab={vocab}\n")
        for s in seqs:
            f.write(" ".join(map(str, s)) + "\n")


def main():
    vocab = 6
    rng = np.random.default_rng(20250501)
    table = chain(vocab, 0.45, rng)
    write(ROOT / "degraded-draft" / "corpus.txt", vocab, sample(table, vocab, 60, 120, rng))

    rng = np.random.default_rng(20250502)
    table = chain(vocab, 0.9, rng)
    write(ROOT / "identical" / "corpus.txt", vocab, sample(table, vocab, 40, 100, rng))

    # adversarial: target and draft corpora come from unrelated chains
    rng = np.random.default_rng(20250503)
    target = chain(vocab, 0.9, rng)
    draft = chain(vocab, 0.9, rng)
    write(ROOT / "adversarial-draft" / "corpus.txt", vocab, sample(target, vocab, 40, 100, rng))
    write(ROOT / "adversarial-draft" / "draft_corpus.txt", vocab, sample(draft, vocab, 40, 100, rng))


if __name__ == "__main__":
    main()
