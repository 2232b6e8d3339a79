"""Reference generator process for the line-delimited rollout protocol.

    python -m openh.eval.stub_generator hold
    python -m openh.eval.stub_generator constant --value 0.5
    python -m openh.eval.stub_generator echo --reference-dir DIR

``echo`` serves ``DIR/<episode_id>.npy`` (recorded frames) back to the
harness.  Useful for exercising the transport end to end.
"""

import argparse
import json
import sys

import numpy as np

from openh.eval.rollout import ConstantGenerator, HoldGenerator, IdentityGenerator, read_request, write_response


class _LazyReferences(dict):
    def __init__(self, root):
        super().__init__()
        self.root = root

    def __missing__(self, key):
        self[key] = np.load(f"{self.root}/{key}.npy")
        return self[key]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=["hold", "constant", "echo"])
    ap.add_argument("--value", type=float, default=0.5)
    ap.add_argument("--reference-dir")
    args = ap.parse_args(argv)
    if args.mode == "hold":
        gen = HoldGenerator()
    elif args.mode == "constant":
        gen = ConstantGenerator(args.value)
    else:
        if not args.reference_dir:
            ap.error("echo needs --reference-dir")
        gen = IdentityGenerator(_LazyReferences(args.reference_dir))
    for line in sys.stdin:
        if not line.strip():
            continue
        msg = json.loads(line)
        try:
            write_response(gen(read_request(msg["request"])), msg["response"])
            reply = {"status": "ok"}
        except Exception as exc:  # reported to the harness, never fatal here
            reply = {"status": "error", "message": f"{type(exc).__name__}: {exc}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
