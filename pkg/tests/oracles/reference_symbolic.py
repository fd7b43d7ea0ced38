"""Symbolic atom-enumeration oracle for the RSIHR reference instance.

Everything is written from the definitions with sympy, sharing no code with
the package: the two covariate atoms (1, 0) and (1, 1) each have mass 1/2,
the arms are logistic with theta1 = (1/2, 1/2) and theta2 = (-1/2, 1/2), and
the target is sqrt(p1) / (sqrt(p1) + sqrt(p2)).
"""

import mpmath
import sympy as sp

DIGITS = 30


def reference_values(gammas=(0, 1, 4, 8, 100)):
    a1, b1, a2, b2 = sp.symbols("a1 b1 a2 b2", real=True)
    theta = (a1, b1, a2, b2)
    truth = {a1: sp.Rational(1, 2), b1: sp.Rational(1, 2), a2: -sp.Rational(1, 2), b2: sp.Rational(1, 2)}
    atoms = [(sp.Integer(1), sp.Integer(0)), (sp.Integer(1), sp.Integer(1))]
    mass = sp.Rational(1, 2)

    def expit(z):
        return 1 / (1 + sp.exp(-z))

    pis, grads, infos = [], [], [sp.zeros(2, 2), sp.zeros(2, 2)]
    for x in atoms:
        p1 = expit(a1 * x[0] + b1 * x[1])
        p2 = expit(a2 * x[0] + b2 * x[1])
        pi = sp.sqrt(p1) / (sp.sqrt(p1) + sp.sqrt(p2))
        pis.append(pi.subs(truth))
        grads.append([sp.diff(pi, t).subs(truth) for t in theta])
        xv = sp.Matrix(x)
        for k, (pk, alloc) in enumerate(((p1, pi), (p2, 1 - pi))):
            w = (alloc * pk * (1 - pk)).subs(truth)
            infos[k] += mass * w * (xv * xv.T)

    v = sum(mass * p for p in pis)
    s1 = sum(mass * p * (1 - p) for p in pis)
    s2 = sum(mass * (p - v) ** 2 for p in pis)
    g = sp.Matrix([[sum(mass * gr[i] for gr in grads) for i in range(4)]])
    mpmath.mp.dps = DIGITS
    blocks = [mpmath.inverse(mpmath.matrix([[mpmath.mpf(str(sp.N(e, DIGITS))) for e in row] for row in I.tolist()])) for I in infos]
    V = sp.zeros(4, 4)
    for k, block in enumerate(blocks):
        for i in range(2):
            for j in range(2):
                V[2 * k + i, 2 * k + j] = sp.Float(str(block[i, j]), DIGITS)
    s3 = (g * V * g.T)[0, 0]
    B = s2 + s3

    def sigma_sq(gamma):
        lam = gamma * s1 / (v * (1 - v))
        return (s1 + s3) / (1 + 2 * lam) + s2 + s3

    ev = lambda e: float(sp.N(e, DIGITS))
    return {
        "v": ev(v),
        "sigma1_sq": ev(s1),
        "sigma2_sq": ev(s2),
        "sigma3_sq": ev(s3),
        "B": ev(B),
        "sigma_zhcc": ev(2 * s3 + v * (1 - v)),
        "pi_atoms": [ev(p) for p in pis],
        "grad_rho": [ev(e) for e in g],
        "V": [[ev(V[i, j]) for j in range(4)] for i in range(4)],
        "sigma_sq": {gm: ev(sigma_sq(gm)) for gm in gammas},
    }


if __name__ == "__main__":
    import pprint

    pprint.pprint(reference_values(), width=120)
