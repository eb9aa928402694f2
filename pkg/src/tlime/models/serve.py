"""Serve a saved forest over the external-predictor wire protocol.

    python -m tlime.models.serve model.json
"""

import json
import sys

import numpy as np

from .forest import load_model


def serve(model, stdin=sys.stdin, stdout=sys.stdout):
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        img = np.asarray(req["pixels"], dtype=np.float64).reshape(req["shape"])
        probs = model.predict_proba(img[None])[0]
        stdout.write(json.dumps({"id": req["id"], "probs": probs.tolist()}) + "\n")
        stdout.flush()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        sys.stderr.write("usage: python -m tlime.models.serve MODEL.json\n")
        return 2
    serve(load_model(argv[0]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
