"""Write a procedural reference/query traversal pair as PGM directories.

    python3 scripts/make_synthetic.py data/synth --places 100 --seed 0

Produces DIR/ref (clean frames) and DIR/query (brightness change, sub-pixel
shift and noise per frame), ready for ``vprmerger train`` and ``eval``.
"""

import argparse

from vprmerger.synthetic import write_sample_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out")
    p.add_argument("--places", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    ref, query = write_sample_dataset(args.out, args.places, args.seed)
    print(f"wrote {args.places} frames to {ref} and {query}")


if __name__ == "__main__":
    main()
