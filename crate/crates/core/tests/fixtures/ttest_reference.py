"""Reference t statistics and two-tailed p values for the acceptance fixtures.

Computed at 50 significant digits with mpmath from the exact binary values of
the float inputs. Run with `python3 ttest_reference.py`.
"""
import random

import mpmath as mp

mp.mp.dps = 50
random.seed(20261018)


def ttest(a, b, welch):
    A = [mp.mpf(x) for x in a]
    B = [mp.mpf(x) for x in b]
    na, nb = len(A), len(B)
    ma, mb = sum(A) / na, sum(B) / nb
    va = sum((x - ma) ** 2 for x in A) / (na - 1)
    vb = sum((x - mb) ** 2 for x in B) / (nb - 1)
    if welch:
        se = mp.sqrt(va / na + vb / nb)
        df = (va / na + vb / nb) ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    else:
        sp = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        se = mp.sqrt(sp * (1 / mp.mpf(na) + 1 / mp.mpf(nb)))
        df = mp.mpf(na + nb - 2)
    t = (ma - mb) / se
    p = mp.betainc(df / 2, mp.mpf(1) / 2, 0, df / (df + t * t), regularized=True)
    return t, p


SPECS = [
    (5, 5, 0.0, 1.0, False), (13, 17, 0.3, 1.0, False), (3, 4, 2.0, 0.5, False),
    (10, 10, 0.05, 0.1, False), (8, 30, 1.0, 2.0, False), (13, 17, 0.8, 1.0, True),
    (4, 9, 1.5, 3.0, True), (20, 6, 0.2, 0.2, True), (2, 2, 5.0, 1.0, False),
    (50, 40, 0.1, 1.0, True),
]

for na, nb, shift, sd, welch in SPECS:
    a = [round(random.gauss(0.5, 0.1 * sd), 6) for _ in range(na)]
    b = [round(random.gauss(0.5 + 0.1 * shift, 0.1), 6) for _ in range(nb)]
    t, p = ttest(a, b, welch)
    print("    Fixture { a: &%s, b: &%s, welch: %s, t: %s, p: %s }," % (
        a, b, str(welch).lower(), mp.nstr(t, 20), mp.nstr(p, 20, min_fixed=-100)))
