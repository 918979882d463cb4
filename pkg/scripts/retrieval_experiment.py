"""Pair-level retrieval on synthetic candidate pools at increasing degradation.

    python scripts/retrieval_experiment.py --queries 10 --pool-size 13
"""

import argparse

from regbench.retrieval import RetrievalQuery, score_candidates, summarize_retrieval
from regbench.synthgen import generate_retrieval_pool

LEVELS = [
    ("mild", dict(speckle=0.1)),
    ("speckled", dict(speckle=0.5)),
    ("inverted", dict(speckle=0.1, invert=True)),
    ("inverted+speckle", dict(speckle=0.8, invert=True)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--queries", type=int, default=10)
    ap.add_argument("--pool-size", type=int, default=13)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ks = sorted({k for k in (1, 5, 10) if k <= args.pool_size} | {args.pool_size})
    print(f"{'setting':<18} {'AUROC':>6} {'AUPRC':>6} " + " ".join(f"{'R@' + str(k):>6}" for k in ks))
    for name, kw in LEVELS:
        queries = []
        for q in generate_retrieval_pool(args.queries, args.pool_size, seed=args.seed, **kw):
            scores = score_candidates(q.query, q.candidates)
            labels = tuple(c == q.positive for c in q.candidate_ids)
            queries.append(RetrievalQuery(q.query_id, tuple(q.candidate_ids), labels, tuple(scores)))
        s = summarize_retrieval(queries, ks)
        print(f"{name:<18} {s.auroc:>6.3f} {s.auprc:>6.3f} " + " ".join(f"{s.recall_at[k]:>6.3f}" for k in ks))


if __name__ == "__main__":
    main()
