"""
Tests for the bilinear-estimate probe.
"""

import sys
import os

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from spe2d.errors import ContractViolation
from spe2d.schemas.schemas import DomainSpec, PhysicalParams
from spe2d.services.operators import get_bench
from spe2d.tools.estimate_probe import (
    ESTIMATES,
    evaluate_estimate,
    ratios_stable,
    run_estimate_probe,
    sample_fields,
)


DOMAIN = DomainSpec(nx=12, nz=12)
PARAMS = PhysicalParams()


class TestProbeInputs:
    """Argument checks and sampling."""

    def test_unknown_estimate(self):
        with pytest.raises(ContractViolation):
            run_estimate_probe("sobolev", 10, 0, DOMAIN, PARAMS)

    def test_too_few_samples(self):
        with pytest.raises(ContractViolation):
            run_estimate_probe("cancellation", 9, 0, DOMAIN, PARAMS)

    def test_sampling_is_reproducible(self):
        a = sample_fields(DOMAIN, 3, 5)
        b = sample_fields(DOMAIN, 3, 5)
        for left, right in zip(a, b):
            assert np.array_equal(left.stack(), right.stack())
        other = sample_fields(DOMAIN, 3, 6)
        assert not np.array_equal(a[0].stack(), other[0].stack())

    def test_ratio_stability_rule(self):
        assert ratios_stable(1.0, 1.2)
        assert not ratios_stable(1.0, 1.5)
        assert ratios_stable(1e-13, 5e-12), "round-off ratios count as zero"
        assert not ratios_stable(1.0, float("inf"))


class TestEstimates:
    """Ratios of each inequality on random fields."""

    def test_every_estimate_is_finite(self):
        bench = get_bench(DOMAIN, PARAMS)
        fields = sample_fields(DOMAIN, 0, 0)
        assert len(ESTIMATES) == 12
        for name in ESTIMATES:
            lhs, rhs = evaluate_estimate(name, bench, fields)
            assert np.isfinite(lhs) and np.isfinite(rhs), name
            assert lhs >= 0 and rhs > 0, name

    def test_every_probe_runs_without_refinement(self):
        for name in ESTIMATES:
            report = run_estimate_probe(name, 10, 1, DOMAIN, PARAMS, refine=False)
            assert report.used + report.skipped == 10
            assert np.isfinite(report.max_ratio), name
            assert report.passed is None

    def test_cancellation_is_round_off(self):
        report = run_estimate_probe("cancellation", 10, 2, DOMAIN, PARAMS, threads=2)
        assert report.max_ratio <= 1e-11
        assert report.passed

    def test_coriolis_never_amplifies(self):
        report = run_estimate_probe("coriolis_bound", 10, 3, DOMAIN, PARAMS)
        assert report.max_ratio <= 1.0 + 1e-12
        assert report.refined_max_ratio is not None
        assert report.passed

    def test_threads_do_not_change_rows(self):
        one = run_estimate_probe("trilinear_weak", 10, 4, DOMAIN, PARAMS, refine=False, threads=1)
        many = run_estimate_probe("trilinear_weak", 10, 4, DOMAIN, PARAMS, refine=False, threads=3)
        assert [r.ratio for r in one.rows] == [r.ratio for r in many.rows]
