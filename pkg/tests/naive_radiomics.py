"""Independent brute-force oracles for the 53 radiomic features.

Everything here is written with plain Python loops and the textbook
formulas, deliberately sharing no code with radmatch.radiomics. The test
suite compares the library against these oracles and against frozen
literals computed from them.
"""
import math


def naive_percentile(values, q):
    v = sorted(values)
    h = (len(v) - 1) * q / 100.0
    lo = math.floor(h)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def naive_discretize(values, bins):
    lo, hi = min(values), max(values)
    if hi <= lo:
        return [0 for _ in values]
    out = []
    for v in values:
        k = math.floor((v - lo) / (hi - lo) * bins)
        out.append(min(k, bins - 1))
    return out


def naive_first_order(values, bins):
    n = len(values)
    mean = sum(values) / n
    m2 = sum((v - mean) ** 2 for v in values) / n
    m3 = sum((v - mean) ** 3 for v in values) / n
    m4 = sum((v - mean) ** 4 for v in values) / n
    energy = sum(v * v for v in values)
    p10 = naive_percentile(values, 10)
    p90 = naive_percentile(values, 90)
    robust = [v for v in values if p10 <= v <= p90]
    if robust:
        rmean = sum(robust) / len(robust)
        rmad = sum(abs(v - rmean) for v in robust) / len(robust)
    else:
        rmad = 0.0
    idx = naive_discretize(values, bins)
    probs = [idx.count(k) / n for k in range(bins)]
    entropy = -sum(p * math.log2(p) for p in probs if p > 0)
    uniformity = sum(p * p for p in probs)
    return {
        "Energy": energy,
        "TotalEnergy": energy,
        "Entropy": entropy,
        "Minimum": min(values),
        "Percentile10": p10,
        "Percentile90": p90,
        "Maximum": max(values),
        "Mean": mean,
        "Median": naive_percentile(values, 50),
        "InterquartileRange": naive_percentile(values, 75) - naive_percentile(values, 25),
        "Range": max(values) - min(values),
        "MeanAbsoluteDeviation": sum(abs(v - mean) for v in values) / n,
        "RobustMeanAbsoluteDeviation": rmad,
        "RootMeanSquared": math.sqrt(energy / n),
        "Skewness": m3 / m2 ** 1.5 if m2 > 0 else 0.0,
        "Kurtosis": m4 / m2 ** 2 - 3.0 if m2 > 0 else 0.0,
        "Variance": m2,
        "StandardDeviation": math.sqrt(m2),
        "Uniformity": uniformity,
    }


def naive_shape(pixels):
    pts = set(pixels)
    n = len(pts)
    perimeter = 0
    for (x, y) in pts:
        for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if nb not in pts:
                perimeter += 1
    max_diam = 0.0
    plist = list(pts)
    for a in range(len(plist)):
        for b in range(a + 1, len(plist)):
            dx = plist[a][0] - plist[b][0]
            dy = plist[a][1] - plist[b][1]
            max_diam = max(max_diam, math.hypot(dx, dy))
    mx = sum(p[0] for p in pts) / n
    my = sum(p[1] for p in pts) / n
    cxx = sum((p[0] - mx) ** 2 for p in pts) / n
    cyy = sum((p[1] - my) ** 2 for p in pts) / n
    cxy = sum((p[0] - mx) * (p[1] - my) for p in pts) / n
    # eigenvalues of [[cxx, cxy], [cxy, cyy]]
    tr = cxx + cyy
    det = cxx * cyy - cxy * cxy
    disc = math.sqrt(max(tr * tr / 4 - det, 0.0))
    lam_major = tr / 2 + disc
    lam_minor = max(tr / 2 - disc, 0.0)
    sphericity = 2.0 * math.sqrt(math.pi * n) / perimeter
    return {
        "PixelSurface": float(n),
        "Perimeter": float(perimeter),
        "MeshSurface": float(n),
        "PerimeterSurfaceRatio": perimeter / n,
        "Sphericity": sphericity,
        "SphericalDisproportion": 1.0 / sphericity,
        "MaximumDiameter": max_diam,
        "MajorAxisLength": 4.0 * math.sqrt(lam_major),
        "MinorAxisLength": 4.0 * math.sqrt(lam_minor),
        "Elongation": math.sqrt(lam_minor / lam_major) if lam_major > 1e-12 else 1.0,
    }


def naive_glcm(pixels, values, bins):
    """Per-pixel co-occurrence enumeration over 4 undirected directions."""
    idx = naive_discretize(values, bins)
    lookup = {p: k for p, k in zip(pixels, idx)}
    counts = [[0.0] * bins for _ in range(bins)]
    total = 0
    for (x, y), a in lookup.items():
        for dx, dy in ((1, 0), (1, 1), (0, 1), (-1, 1)):
            nb = (x + dx, y + dy)
            if nb in lookup:
                b = lookup[nb]
                counts[a][b] += 1.0
                total += 1
    assert total > 0, "no co-occurring pairs"
    sym = [[counts[a][b] + counts[b][a] for b in range(bins)] for a in range(bins)]
    s = sum(sum(row) for row in sym)
    return [[v / s for v in row] for row in sym]


def naive_glcm_features(p):
    b = len(p)
    lv = [k + 1 for k in range(b)]
    px = [sum(p[i][j] for j in range(b)) for i in range(b)]
    py = [sum(p[i][j] for i in range(b)) for j in range(b)]
    mu_x = sum(lv[i] * px[i] for i in range(b))
    mu_y = sum(lv[j] * py[j] for j in range(b))
    sig_x = math.sqrt(sum((lv[i] - mu_x) ** 2 * px[i] for i in range(b)))
    sig_y = math.sqrt(sum((lv[j] - mu_y) ** 2 * py[j] for j in range(b)))
    p_sum = [0.0] * (2 * b - 1)
    p_diff = [0.0] * b
    for i in range(b):
        for j in range(b):
            p_sum[i + j] += p[i][j]
            p_diff[abs(i - j)] += p[i][j]

    def ent(q):
        return -sum(v * math.log2(v) for v in q if v > 0)

    flat = [p[i][j] for i in range(b) for j in range(b)]
    hxy = ent(flat)
    hx, hy = ent(px), ent(py)
    hxy1 = -sum(p[i][j] * math.log2(px[i] * py[j])
                for i in range(b) for j in range(b) if p[i][j] > 0)
    hxy2 = -sum(px[i] * py[j] * math.log2(px[i] * py[j])
                for i in range(b) for j in range(b) if px[i] * py[j] > 0)

    autocorr = sum(p[i][j] * lv[i] * lv[j] for i in range(b) for j in range(b))
    cluster = lambda power: sum(
        (lv[i] + lv[j] - mu_x - mu_y) ** power * p[i][j] for i in range(b) for j in range(b))
    diff_avg = sum(k * p_diff[k] for k in range(b))
    denom = max(hx, hy)

    # MCC: Q built with bare loops; eigenvalues from the stock LAPACK routine
    # (the oracle targets the feature formula, not the eigensolver).
    occ = [i for i in range(b) if px[i] > 0]
    if len(occ) < 2:
        mcc = 1.0
    else:
        import numpy as _np
        m = len(occ)
        q = [[sum(p[occ[i]][k] * p[occ[j]][k] / (px[occ[i]] * py[k])
                  for k in occ) for j in range(m)] for i in range(m)]
        eig = sorted(_np.real(_np.linalg.eigvals(_np.array(q))))
        mcc = math.sqrt(max(0.0, min(1.0, float(eig[-2]))))

    return {
        "Autocorrelation": autocorr,
        "JointAverage": mu_x,
        "ClusterProminence": cluster(4),
        "ClusterShade": cluster(3),
        "ClusterTendency": cluster(2),
        "Contrast": sum((lv[i] - lv[j]) ** 2 * p[i][j] for i in range(b) for j in range(b)),
        "Correlation": ((autocorr - mu_x * mu_y) / (sig_x * sig_y)
                        if sig_x * sig_y > 1e-14 else 1.0),
        "DifferenceAverage": diff_avg,
        "DifferenceEntropy": ent(p_diff),
        "DifferenceVariance": sum((k - diff_avg) ** 2 * p_diff[k] for k in range(b)),
        "JointEnergy": sum(v * v for v in flat),
        "JointEntropy": hxy,
        "Imc1": (hxy - hxy1) / denom if denom > 1e-14 else 0.0,
        "Imc2": math.sqrt(1.0 - math.exp(-2.0 * (hxy2 - hxy)))
                if 1.0 - math.exp(-2.0 * (hxy2 - hxy)) > 0 else 0.0,
        "Idm": sum(p_diff[k] / (1.0 + k * k) for k in range(b)),
        "Idmn": sum(p_diff[k] / (1.0 + (k / b) ** 2) for k in range(b)),
        "Id": sum(p_diff[k] / (1.0 + k) for k in range(b)),
        "Idn": sum(p_diff[k] / (1.0 + k / b) for k in range(b)),
        "InverseVariance": sum(p_diff[k] / (k * k) for k in range(1, b)),
        "MaximumProbability": max(flat),
        "SumAverage": sum((k + 2) * p_sum[k] for k in range(2 * b - 1)),
        "SumEntropy": ent(p_sum),
        "SumSquares": sum((lv[i] - mu_x) ** 2 * p[i][j] for i in range(b) for j in range(b)),
        "MCC": mcc,
    }


def naive_descriptor(pixels, values, bins):
    out = {}
    out.update(naive_first_order(values, bins))
    out.update(naive_shape(pixels))
    out.update(naive_glcm_features(naive_glcm(pixels, values, bins)))
    return out
