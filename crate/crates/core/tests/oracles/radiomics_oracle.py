"""Brute-force reference values for the 23 per-ROI radiomic features.

Writes tests/data/radiomics_oracle.json: random masked regions up to 5x5x5
with the expected feature values. Every quantity is computed by direct
enumeration over voxels and offsets, independently of the Rust code.
"""
import itertools
import json
import sys

import numpy as np

OFFSETS = [d for d in itertools.product([-1, 0, 1], repeat=3) if d != (0, 0, 0)]
HALF = []
for d in OFFSETS:
    if tuple(-x for x in d) not in HALF:
        HALF.append(d)


def bin_of(v, lo, width, bins):
    if width == 0:
        return 1
    return min(int(np.floor((v - lo) / width * bins)), bins - 1) + 1


def first_order(vals):
    v = np.array(vals, dtype=np.float64)
    n = len(v)
    mean = v.sum() / n
    d = v - mean
    m2, m3, m4 = (d**2).sum() / n, (d**3).sum() / n, (d**4).sum() / n
    skew, kurt = (m3 / m2**1.5, m4 / m2**2) if m2 > 0 else (0.0, 3.0)
    s = np.sort(v)
    median = s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])
    lo, hi = s[0], s[-1]
    counts = {}
    for x in v:
        b = bin_of(x, lo, hi - lo, 32)
        counts[b] = counts.get(b, 0) + 1
    ent = -sum((c / n) * np.log2(c / n) for c in counts.values())
    return [mean, median, lo, hi, hi - lo, (v * v).sum(), max(ent, 0.0), m2, skew, kurt]


def inside(shape, z, y, x):
    return 0 <= z < shape[0] and 0 <= y < shape[1] and 0 <= x < shape[2]


def glcm(lab, ng):
    rows = []
    for d in HALF:
        P = np.zeros((ng + 1, ng + 1))
        for z, y, x in itertools.product(*map(range, lab.shape)):
            a = lab[z, y, x]
            z2, y2, x2 = z + d[0], y + d[1], x + d[2]
            if a and inside(lab.shape, z2, y2, x2) and lab[z2, y2, x2]:
                b = lab[z2, y2, x2]
                P[a, b] += 1
                P[b, a] += 1
        if P.sum() == 0:
            continue
        p = P / P.sum()
        i, j = np.meshgrid(np.arange(ng + 1), np.arange(ng + 1), indexing="ij")
        mu = (i * p).sum()
        var = ((i - mu) ** 2 * p).sum()
        corr = ((i * j * p).sum() - mu * mu) / var if var > 0 else 1.0
        nz = p[p > 0]
        rows.append([(p**2).sum(), ((i - j) ** 2 * p).sum(), corr, (p / (1 + (i - j) ** 2)).sum(),
                     -(nz * np.log2(nz)).sum(), (abs(i - j) * p).sum()])
    if not rows:
        return [1.0, 0.0, 1.0, 1.0, 0.0, 0.0]
    return list(np.mean(rows, axis=0))


def glrlm(lab):
    runs = {}
    for d in HALF:
        for z, y, x in itertools.product(*map(range, lab.shape)):
            g = lab[z, y, x]
            if not g:
                continue
            zp, yp, xp = z - d[0], y - d[1], x - d[2]
            if inside(lab.shape, zp, yp, xp) and lab[zp, yp, xp] == g:
                continue
            n, zz, yy, xx = 0, z, y, x
            while inside(lab.shape, zz, yy, xx) and lab[zz, yy, xx] == g:
                n += 1
                zz, yy, xx = zz + d[0], yy + d[1], xx + d[2]
            runs[(g, n)] = runs.get((g, n), 0) + 1
    total = sum(runs.values())
    mu = sum(c * g for (g, _), c in runs.items()) / total
    by_len = {}
    for (_, n), c in runs.items():
        by_len[n] = by_len.get(n, 0) + c
    return [sum(c * (g - mu) ** 2 for (g, _), c in runs.items()) / total,
            sum(c / n**2 for (_, n), c in runs.items()) / total,
            sum(c * n**2 for (_, n), c in runs.items()) / total,
            sum(v * v for v in by_len.values()) / total]


def gldm(lab):
    cells = {}
    for z, y, x in itertools.product(*map(range, lab.shape)):
        g = lab[z, y, x]
        if not g:
            continue
        dep = sum(1 for d in OFFSETS
                  if inside(lab.shape, z + d[0], y + d[1], x + d[2]) and lab[z + d[0], y + d[1], x + d[2]] == g)
        cells[(g, dep + 1)] = cells.get((g, dep + 1), 0) + 1
    total = sum(cells.values())
    by_dep = {}
    for (_, j), c in cells.items():
        by_dep[j] = by_dep.get(j, 0) + c
    return [sum(v * v for v in by_dep.values()) / total,
            sum(c / j**2 for (_, j), c in cells.items()) / total,
            sum(c * j**2 for (_, j), c in cells.items()) / total]


def features(vol, mask, bins):
    vals = [float(v) for v, m in zip(vol.ravel(), mask.ravel()) if m]
    lo, hi = min(vals), max(vals)
    lab = np.zeros(vol.shape, dtype=int)
    for idx in itertools.product(*map(range, vol.shape)):
        if mask[idx]:
            lab[idx] = bin_of(float(vol[idx]), lo, hi - lo, bins)
    return first_order(vals) + glcm(lab, bins) + glrlm(lab) + gldm(lab)


def main(out):
    rng = np.random.default_rng(20240531)
    cases = []
    for c in range(50):
        dims = tuple(int(x) for x in rng.integers(1, 6, size=3))
        if c % 10 == 0:
            vol = rng.integers(0, 3, size=dims).astype(np.float32)
        else:
            vol = (rng.normal(100.0, 15.0, size=dims)).astype(np.float32)
        mask = (rng.random(dims) < rng.uniform(0.4, 1.0)).astype(np.uint8)
        if mask.sum() == 0:
            mask.ravel()[int(rng.integers(0, mask.size))] = 1
        bins = int(rng.choice([2, 4, 8, 32]))
        cases.append({
            "dims": list(dims),
            "voxels": [float(v) for v in vol.ravel()],
            "mask": [int(m) for m in mask.ravel()],
            "bin_count": bins,
            "features": [float(f) for f in features(vol, mask, bins)],
        })
    with open(out, "w") as f:
        json.dump(cases, f)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "radiomics_oracle.json")
