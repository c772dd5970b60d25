import pytest

from hdqkd.channel import ChannelParams
from hdqkd.security import ProtocolParams


@pytest.fixture
def fig4_params():
    return ProtocolParams(d=4, mu1=0.37, mu2=0.13, p_mu1=0.76, P_Z=0.9, c_overlap=1.75, R=250e6)


@pytest.fixture
def table2_2d_params():
    return ProtocolParams(d=2, mu1=0.35, mu2=0.13, p_mu1=0.73, P_Z=0.9, c_overlap=0.93, R=500e6)


@pytest.fixture
def channel25():
    return ChannelParams(loss_db=25.0)


def counts_dict(block):
    """ObservedBlock -> the oracle's flat count dict."""
    return {f"{k}{b}{i}": float(getattr(block, f"{k}_{b}_mu{i}"))
            for k in "nm" for b in "ZX" for i in (1, 2)}




def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(RESULTS):
        ok, detail = RESULTS[i]
        terminalreporter.write_line(f"CRITERION {i}: {'PASS' if ok else 'FAIL'} {detail}")
