"""Unit conversions and physical constants (SI, angular frequencies in rad/s)."""

import math

from scipy import constants

TWO_PI = 2.0 * math.pi
K_B = constants.k
AMU = constants.atomic_mass
MASS_CA40 = 39.962590863 * AMU


def mhz(f):
    """Convert a frequency/2π in MHz to rad/s."""
    return TWO_PI * 1e6 * f


def to_mhz(omega):
    """Convert rad/s to frequency/2π in MHz."""
    return omega / (TWO_PI * 1e6)


def nm(x):
    return x * 1e-9


def to_nm(x):
    return x * 1e9


def us(t):
    return t * 1e-6


def to_us(t):
    return t * 1e6
