import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from optloss.core import ProcessKind
from optloss.errors import DomainError, UnsupportedError
from optloss.formulations import (
    SPEC_NAMES,
    FormulationSpec,
    convert_loss_to_x0_ve,
    ddpm_sigma_hat,
    ddpm_time,
    from_ve_sigma,
    loss_weight_native,
    native_sigma_density,
    preconditioners,
    sigma_hat_support,
    to_ve_sigma,
)

SPECS = [FormulationSpec(n) for n in SPEC_NAMES]


def test_to_ve_sigma_examples():
    assert to_ve_sigma(ProcessKind.VE, 3.7) == 3.7
    assert to_ve_sigma(ProcessKind.VP, 1 / math.sqrt(2)) == pytest.approx(1.0, rel=1e-15)
    assert to_ve_sigma(ProcessKind.FM, 0.5) == 1.0
    with pytest.raises(DomainError):
        to_ve_sigma(ProcessKind.VP, 1.0)
    with pytest.raises(DomainError):
        to_ve_sigma(ProcessKind.FM, -0.1)


@given(st.floats(1e-6, 1 - 1e-6), st.sampled_from([ProcessKind.VP, ProcessKind.FM, ProcessKind.VE]))
def test_sigma_round_trip(sigma, kind):
    back = from_ve_sigma(kind, to_ve_sigma(kind, sigma))
    assert back == pytest.approx(sigma, rel=1e-12)


# The native sigma carries 1 - sigma ~ 1/s (FM) or 1/(2 s^2) (VP) with an
# absolute error of one ulp of 1.0, so the relative round-trip error grows with s.
@given(st.floats(1e-6, 50.0))
def test_sigma_hat_round_trip(s):
    for kind in ProcessKind:
        assert to_ve_sigma(kind, from_ve_sigma(kind, s)) == pytest.approx(s, rel=1e-12)


def test_preconditioner_examples():
    fm_x0 = preconditioners(FormulationSpec("fm-x0"), 2.3)
    assert (fm_x0.c_skip, fm_x0.c_out) == (0.0, 1.0)
    vp = preconditioners(FormulationSpec("vp-eps"), 0.8)
    assert (vp.c_skip, vp.c_out) == (1.0, -0.8)
    assert vp.c_in == pytest.approx(1 / math.sqrt(1.64), rel=1e-15)
    assert preconditioners(FormulationSpec("ve-F"), 0.5).c_skip == 0.5


def test_weight_examples():
    assert loss_weight_native(FormulationSpec("fm-x0"), 7.0) == 1.0
    assert loss_weight_native(FormulationSpec("fm-v"), 1.0) == 4.0
    assert loss_weight_native(FormulationSpec("vp-eps"), 2.0) == 0.25


def test_convert_examples():
    assert convert_loss_to_x0_ve(FormulationSpec("fm-x0"), 0.9, 0.3) == 0.3
    assert convert_loss_to_x0_ve(FormulationSpec("fm-v"), 1.0, 4.0) == 1.0
    with pytest.raises(DomainError):
        convert_loss_to_x0_ve(FormulationSpec("fm-x0"), 1.0, -1.0)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
@given(loss=st.just(0.0) | st.floats(1e-290, 1e6), s=st.floats(1e-3, 1e3))
def test_convert_round_trip_within_ulp(spec, loss, s):
    if spec.name == "vp-eps":
        lo, hi = sigma_hat_support(spec)
        s = min(max(s, lo), hi)
    w = loss_weight_native(spec, s)
    back = convert_loss_to_x0_ve(spec, s, loss) * w
    assert abs(back - loss) <= math.ulp(loss) or back == loss


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
@pytest.mark.parametrize("s", [0.1, 1.0, 10.0])
def test_preconditioning_inverts(spec, s):
    pc = preconditioners(spec, s)
    assert pc.c_out != 0
    x = np.array([0.3, -1.1, 2.0])
    x0 = np.array([0.5, 0.5, -0.25])
    np.testing.assert_allclose(pc.denoise(x, pc.network_target(x, x0)), x0, rtol=1e-12, atol=1e-12)


def test_eps_and_x0_weights_differ_by_sigma_squared():
    for s in np.geomspace(0.01, 100, 9):
        eps = loss_weight_native(FormulationSpec("fm-eps"), s)
        x0 = loss_weight_native(FormulationSpec("fm-x0"), s)
        assert eps * s * s == pytest.approx(x0, rel=1e-14)


def test_ddpm_time_inverts_forward_map():
    for t in (1e-5, 0.01, 0.3, 0.999, 1.0):
        assert ddpm_time(ddpm_sigma_hat(t)) == pytest.approx(t, rel=1e-12, abs=1e-15)
    with pytest.raises(DomainError):
        ddpm_time(1e6)


def test_edm_density_at_mode():
    spec = FormulationSpec("ve-F")
    s = math.exp(-1.2)
    assert native_sigma_density(spec, s) == pytest.approx(1 / (s * 1.2 * math.sqrt(2 * math.pi)), rel=1e-14)


def test_uniform_t_density():
    for s in (0.1, 1.0, 7.0):
        assert native_sigma_density(FormulationSpec("fm-v"), s) == 1 / (1 + s) ** 2


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_densities_integrate_to_one(spec):
    lo, hi = sigma_hat_support(spec)
    lo_u, hi_u = (math.log(lo), math.log(hi)) if hi < math.inf else (-60.0, 60.0)
    mass = quad(lambda u: native_sigma_density(spec, math.exp(u)) * math.exp(u), lo_u, hi_u,
                limit=400, epsabs=1e-12)[0]
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_constant_overrides_and_errors():
    spec = FormulationSpec("ve-F", {"sigma_data": 1.0})
    assert preconditioners(spec, 1.0).c_skip == 0.5
    with pytest.raises(UnsupportedError):
        FormulationSpec("vp-x0")
    with pytest.raises(UnsupportedError):
        FormulationSpec.from_pair("vp", "v")
    assert FormulationSpec.from_pair("fm", "x0").name == "fm-x0"
    with pytest.raises(DomainError):
        FormulationSpec("ve-eps", {"sigma_min": 5.0, "sigma_max": 1.0})
    with pytest.raises(DomainError):
        preconditioners(FormulationSpec("fm-v"), 0.0)


def test_ddpm_c_noise_against_root_finder():
    spec = FormulationSpec("vp-eps")
    c = spec.constants
    for s in (0.1, 1.0, 10.0):
        t = brentq(lambda t: ddpm_sigma_hat(t, c) - s, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
        assert preconditioners(spec, s).c_noise == pytest.approx(999 * t, rel=1e-12)
