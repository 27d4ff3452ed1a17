"""Closed-form FLOPs of a sampling run, written from the architecture alone.

Multiply + add counts as 2. Usable as a module or from the command line:
    run_flops.py STEPS RATIO [--warmup 4] [--resets 12,20] [--curve linear]
"""
import argparse
import math

TOY = dict(image=32, channels=4, patch=4, d=64, layers=4, mlp_ratio=4, t_features=256)


def forward_flops(active, keys, cfg=TOY):
    d, L = cfg["d"], cfg["layers"]
    pd = cfg["patch"] ** 2 * cfg["channels"]
    m = d * cfg["mlp_ratio"]
    per_token = pd * d + L * (3 * d * d + d * d + d * m + m * d) + d * pd
    token_linear = 2 * active * per_token
    attention = L * (2 * active * keys * d + 2 * active * keys * d)
    conditioning = 2 * (cfg["t_features"] * d + d * d + L * 6 * d * d + 2 * d * d)
    return token_linear, attention, conditioning


def ratio_curve(steps, warmup, resets, avg, curve):
    dense = [t < warmup or t in resets for t in range(steps)]
    sel = [t for t in range(steps) if not dense[t]]
    delta = 0.5 * min(avg, 1 - avg) if curve == "linear" else 0.0
    out = [1.0] * steps
    for j, t in enumerate(sel):
        out[t] = avg if len(sel) <= 1 else (avg + delta) + ((avg - delta) - (avg + delta)) * j / (len(sel) - 1)
    return out, dense


def active_count(ratio, P):
    return min(max(math.ceil(ratio * P - 1e-9), 1), P)


def run_flops(steps, avg, warmup=4, resets=(12, 20), curve="linear", recovery=True, cfg=TOY):
    P = (cfg["image"] // cfg["patch"]) ** 2
    if avg >= 1.0:
        counts = [P] * steps
    else:
        curve_vals, dense = ratio_curve(steps, warmup, set(resets), avg, curve)
        counts = [P if dense[t] else active_count(curve_vals[t], P) for t in range(steps)]
    total = [0, 0, 0]
    for n in counts:
        f = forward_flops(n, P if recovery else n, cfg)
        total = [a + b for a, b in zip(total, f)]
    return tuple(total)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("steps", type=int)
    ap.add_argument("ratio", type=float)
    ap.add_argument("--warmup", type=int, default=4)
    ap.add_argument("--resets", default="12,20")
    ap.add_argument("--curve", default="linear")
    a = ap.parse_args()
    resets = [int(x) for x in a.resets.split(",") if x]
    tl, at, co = run_flops(a.steps, a.ratio, a.warmup, resets, a.curve)
    print(f"token_linear={tl} attention={at} conditioning={co} total={tl + at + co}")
