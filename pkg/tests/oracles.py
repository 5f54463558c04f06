"""Independent reference values for the tests.

Closed forms are computed here from first principles.  Frozen values were
produced by separate runs and are kept with the tolerance stated next to
each one.
"""
import math

from scipy import special


def bisect(f, a, b, tol=1e-14):
    fa = f(a)
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = f(m)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
        if b - a < tol:
            break
    return 0.5 * (a + b)


def bessel_j1_prime_root():
    """First positive zero of J1' (Neumann disk eigenvalue is its square)."""
    return bisect(lambda x: special.jvp(1, x), 1.0, 2.5)


RECTANGLE_LAMBDA2 = math.pi ** 2 / 4.0           # (0,2)x(0,1), mode cos(pi x / 2)
DISK_LAMBDA2 = bessel_j1_prime_root() ** 2        # about 3.38996


def tube_mu(length):
    """First mixed eigenvalue of a rectangle absorbing at one end, Neumann elsewhere."""
    return (math.pi / (2.0 * length)) ** 2


# Random123 known-answer vectors for Philox4x64-10: (counter, key, output).
PHILOX_KAT = [
    ((0, 0, 0, 0), (0, 0),
     (0x16554D9ECA36314C, 0xDB20FE9D672D0FDC, 0xD7E772CEE186176B, 0x7E68B68AEC7BA23B)),
    ((2**64 - 1,) * 4, (2**64 - 1,) * 2,
     (0x87B092C3013FE90B, 0x438C3C67BE8D0224, 0x9CC7D7C69CD777B6, 0xA09CAEBF594F0BA0)),
    ((0x243F6A8885A308D3, 0x13198A2E03707344, 0xA4093822299F31D0, 0x082EFA98EC4E6C89),
     (0x452821E638D01377, 0xBE5466CF34E90C6C),
     (0xA528F45403E61D95, 0x38C72DBD566E9788, 0xA5A1610E72FD18B5, 0x57BD43B5E52B7FE6)),
]

# Frozen from a separate h = 0.01 run of D(0.1, 0.01); relative tolerance 1%.
FROZEN_LAMBDA2_D = 0.02246
FROZEN_MU_D1 = 0.02246
