#!/usr/bin/env python3
"""Regenerate the golden rate table from the closed-form rate expressions.

Written separately from the Rust implementation so the two can be checked
against each other. Usage:

    python3 scripts/gen_golden_rates.py > crates/core/tests/golden/rates.csv
"""
import math
import sys

GAMMA = 0.1
C_INTERACTIVE = 0.5  # unused by the non-interactive upper bound
NS = [1000, 100000]
ALPHAS = [0.5, 1.0]
DS = [10, 100, 1000]
FAMILIES = [
    ("uniform", {}),
    ("polynomial", {"beta": 0.5}),
    ("polynomial", {"beta": 1.0}),
    ("exponential", {"eta": 0.0, "c": 1.0, "beta": 1.0}),
    ("exponential", {"eta": 0.0, "c": 0.5, "beta": 0.5}),
]
MODES = [
    ("noninteractive", "L1"),
    ("noninteractive", "L2"),
    ("interactive", "L1"),
    ("interactive", "L2"),
]
QUARTERS = {
    ("noninteractive", "L1"): 3.0,
    ("noninteractive", "L2"): 1.0,
    ("interactive", "L1"): 2.0,
}
LOWER_EXP = {
    ("noninteractive", "L1"): (0.75, 1.0),
    ("noninteractive", "L2"): (0.25, 0.5),
    ("interactive", "L1"): (0.5, 0.0),
}


def num(x):
    """Shortest float text as the Rust Display impl prints it."""
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def csv_float(x):
    r = repr(float(x))
    return r


def fmt(v):
    mant, exp = f"{v:.10e}".split("e")
    return f"{mant}e{int(exp)}"


def pmf(name, par, d):
    js = range(1, d + 1)
    if name == "uniform":
        w = [1.0] * d
    elif name == "polynomial":
        w = [j ** (-1.0 - par["beta"]) for j in js]
    else:
        lw = [par["eta"] * math.log(j) - par["c"] * j ** par["beta"] for j in js]
        top = max(lw)
        w = [math.exp(x - top) for x in lw]
    total = math.fsum(w)
    return [x / total for x in w]


def tails(p):
    s = sorted(p, reverse=True)
    return [max(math.fsum(s[j:]), 0.0) for j in range(len(s))] + [0.0]


def rate(name, par, d, n, alpha, mode, norm):
    na2 = n * alpha * alpha
    root = math.sqrt(na2)
    if (mode, norm) == ("interactive", "L2"):
        return 1.0 / root
    q = QUARTERS[(mode, norm)]
    if name == "uniform":
        return d ** (q / 4.0) / root
    if name == "polynomial":
        b = par["beta"]
        return min(na2 ** (-2.0 * b / (4.0 * b + q)), d ** (q / 4.0) / root)
    logf = math.log(na2) ** (q / (4.0 * par["beta"]))
    return min(logf, d ** (q / 4.0)) / root


def lower(p, n, alpha, mode, norm):
    root = math.sqrt(n * alpha * alpha)
    if (mode, norm) == ("interactive", "L2"):
        return 1.0 / root, ""
    a, b = LOWER_EXP[(mode, norm)]
    s = sorted(p, reverse=True)
    best, arg = -math.inf, 1
    for k, v in enumerate(s):
        j = float(k + 1)
        val = min(j ** a / root, j ** b * v / math.sqrt(math.log(2.0 * j)))
        if val > best:
            best, arg = val, k + 1
    return best, str(arg)


def ni_upper(p, n, alpha, norm, gamma):
    t = tails(p)
    nf = float(n)
    a2 = alpha * alpha
    best, arg = math.inf, 1
    for j in range(1, len(p) + 1):
        b = float(j)
        power = b ** 3 if norm == "L1" else b
        main = 12.0 * (power / (nf * (nf - 1.0) * a2 * a2 * gamma * gamma)) ** 0.25
        v = 8.0 * max(main, t[j])
        if v < best:
            best, arg = v, j
    return best, str(arg)


def main():
    out = sys.stdout
    out.write("family,params,n,alpha,norm,mode,kind,value,j_achieving\n")
    for name, par in FAMILIES:
        for d in DS:
            p = pmf(name, par, d)
            extra = ";".join(f"{k}={num(v)}" for k, v in par.items())
            params = f"d={d}" + (f";{extra}" if extra else "")
            for n in NS:
                for alpha in ALPHAS:
                    head = f"{name},{params},{n},{csv_float(alpha)}"
                    for mode, norm in MODES:
                        r = rate(name, par, d, n, alpha, mode, norm)
                        out.write(f"{head},{norm},{mode},rate,{fmt(r)},\n")
                        lv, lj = lower(p, n, alpha, mode, norm)
                        out.write(f"{head},{norm},{mode},lower,{fmt(lv)},{lj}\n")
                        if mode == "noninteractive":
                            uv, uj = ni_upper(p, n, alpha, norm, GAMMA)
                            out.write(f"{head},{norm},{mode},upper,{fmt(uv)},{uj}\n")


if __name__ == "__main__":
    main()
