"""Re-derives the frozen oracle constants from closed forms at 40 digits."""

import pytest

mpmath = pytest.importorskip("mpmath")
from mpmath import mp, mpf

import test_heatmap as TH
import test_losses as TL

mp.dps = 40


def background(q, anchor, gamma):
    q = mpf(q)
    return -((1 + q - mpf(anchor)) ** gamma) * mpmath.log(1 - q)


def background_grad(q, anchor, gamma):
    q = mpf(q)
    base = 1 + q - mpf(anchor)
    return -gamma * base ** (gamma - 1) * mpmath.log(1 - q) + base**gamma / (1 - q)


ORACLES = {
    "bce_background": (TL.BCE_NEG_09, -mpmath.log(1 - mpf("0.9"))),
    "bce_two_uniform": (TL.TWO_LN2, 2 * mpmath.log(2)),
    "focal_target": (TL.FL_POS_08, -(mpf("0.2") ** 2) * mpmath.log(mpf("0.8"))),
    "focal_background": (TL.FL_NEG_05, -(mpf("0.5") ** 2) * mpmath.log(mpf("0.5"))),
    "anchor_static": (TL.AL_STATIC_09, background("0.9", "0.5", 2)),
    "anchor_dynamic": (
        TL.AL_DYNAMIC_EXAMPLE,
        -mpmath.log(mpf("0.6")) + background("0.7", "0.55", mpf("0.5")) + background("0.1", "0.55", mpf("0.5")),
    ),
    "anchor_gradient": (TL.AL_GRAD_EXAMPLE, background_grad("0.5", "0.5", 1)),
    "anchor_gradient_steep": (26.047238260383328, background_grad("0.9", "0.5", 2)),
    "pose_pixel": (TH.POSE_PIXEL, background("0.9", "0.4", 2)),
    "gaussian_half": (TH.EXP_MINUS_HALF, mpmath.exp(mpf("-0.5"))),
}


@pytest.mark.parametrize("name", sorted(ORACLES))
def test_frozen_constant(name):
    frozen, exact = ORACLES[name]
    assert abs(mpf(frozen) - exact) <= mpf("2e-16") * abs(exact), name
