"""Acceptance gate: one line per criterion, each at its stated tolerance.

Each test prints its line with output capture disabled, so it shows in any pytest run.
"""

import pytest

from thinflow import verify

CRITERIA = [
    (1, "reynolds_exact"),
    (2, "poiseuille_average"),
    (3, "fiber_accuracy"),
    (4, "cell_oracle"),
    (5, "permeability_homogeneity"),
    (6, "drag_homogeneity"),
    (7, "monotonicity"),
    (8, "low_volume_limit"),
    (9, "darcy_gradient_null"),
    (10, "brinkman_to_darcy"),
    (11, "linear_oracle"),
    (12, "determinism"),
]


@pytest.mark.slow
@pytest.mark.parametrize("number,name", CRITERIA, ids=[n for _, n in CRITERIA])
def test_criterion(number, name, capsys):
    res = verify.run([name])[0]
    with capsys.disabled():
        print(f"\ncriterion {number:2d} {res.line()} ({res.seconds:.1f} s)")
    assert res.passed, res.line()
