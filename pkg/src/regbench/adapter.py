"""Reference external adapter: the builtin matcher behind the line protocol.

    python -m regbench.adapter [--keypoint-budget N]

Real matchers plug in the same way; see ``matching.serve_adapter``.
"""

from __future__ import annotations

import argparse

from .matching import DEFAULT_BUDGET, BuiltinMatcher, MatcherSpec, serve_adapter


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(prog="python -m regbench.adapter", description=__doc__.splitlines()[0])
    parser.add_argument("--keypoint-budget", type=int, default=DEFAULT_BUDGET)
    args = parser.parse_args(argv)
    matcher = BuiltinMatcher(MatcherSpec("builtin", args.keypoint_budget))
    serve_adapter(matcher.match)


if __name__ == "__main__":
    main()
