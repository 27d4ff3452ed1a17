"""Replays a RunTrace file and checks it against the sampling rules.

Checks: header/step consistency, dense steps = warmup + resets, mask
cardinality ceil(ratio * P), each selective mask equals the lowest-score
patches of the previous step's scores (ties to the lower index), every patch
running between consecutive dense steps, and per-step FLOPs from the closed
form. Exit status 0 when everything holds.
"""
import argparse
import json
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from run_flops import active_count, forward_flops  # noqa: E402


def load(path):
    lines = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    if not lines or lines[0].get("type") != "header":
        raise SystemExit("trace has no header record")
    return lines[0], lines[1:]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("trace")
    ap.add_argument("--warmup", type=int, required=True)
    ap.add_argument("--resets", default="")
    ap.add_argument("--recovery", type=int, default=1)
    a = ap.parse_args()
    resets = {int(x) for x in a.resets.split(",") if x}

    head, steps = load(a.trace)
    P = head["num_patches"]
    k = head["starvation_k"]
    errors = []

    if len(steps) != head["steps"]:
        errors.append(f"{len(steps)} step records, header says {head['steps']}")

    prev_scores = None
    for t, rec in enumerate(steps):
        if rec["step"] != t:
            errors.append(f"record {t} carries step {rec['step']}")
        want_dense = t < a.warmup or t in resets
        if rec["dense"] != want_dense:
            errors.append(f"step {t}: dense={rec['dense']}, expected {want_dense}")
        active = rec["active"]
        n = P if want_dense else active_count(rec["ratio"], P)
        if len(active) != n:
            errors.append(f"step {t}: {len(active)} active patches, expected {n}")
        if active != sorted(set(active)) or any(p >= P for p in active):
            errors.append(f"step {t}: active list is not a sorted set of patch ids")
        if not want_dense and prev_scores is not None:
            order = sorted(range(P), key=lambda p: (prev_scores[p], p))
            if sorted(order[:n]) != active:
                errors.append(f"step {t}: mask differs from the {n} lowest scores of step {t - 1}")

        scores = rec["scores"]
        if len(scores) != P:
            errors.append(f"step {t}: {len(scores)} scores for {P} patches")
        elif any(not (s >= 0 and math.isfinite(s)) for s in scores):
            errors.append(f"step {t}: non-finite or negative score")
        prev_scores = scores

        keys = P if a.recovery else len(active)
        tl, at, co = forward_flops(len(active), keys)
        f = rec["flops"]
        if (f["token_linear"], f["attention"], f["conditioning"]) != (tl, at, co):
            errors.append(f"step {t}: flops {f} differ from closed form {(tl, at, co)}")

    # starvation: between consecutive dense steps every patch runs at least once
    dense_steps = [t for t, r in enumerate(steps) if r["dense"]]
    bounds = dense_steps + [len(steps)]
    for lo, hi in zip(bounds, bounds[1:]):
        if hi - lo <= 1:
            continue
        seen = set()
        for r in steps[lo + 1:hi]:
            seen.update(r["active"])
        if hi < len(steps) and len(seen) < P:
            errors.append(f"patches {sorted(set(range(P)) - seen)[:8]}... idle between dense steps {lo} and {hi}")

    for e in errors:
        print("FAIL", e)
    print(f"replayed {len(steps)} steps, P={P}, k={k}: {'ok' if not errors else f'{len(errors)} errors'}")
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
