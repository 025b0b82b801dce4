"""Reference external sampler speaking the NDJSON protocol on stdio.

Reads one request object per line ({"h": [...], "J": [[i, j, val], ...],
"num_reads": n}) and answers with exact Boltzmann samples of that Ising
problem ({"samples": [[+-1, ...], ...], "num_occurrences": [...]}).
Stands in for annealer-like hardware in tests and demos:

    spectralnw train --backend external \
        --external-cmd "python -m spectralnw.sampler_stub --seed 7" ...
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .spectral_model import answer_sample_request


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="spectralnw.sampler_stub")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        reply = answer_sample_request(json.loads(line), rng)
        print(json.dumps(reply), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
