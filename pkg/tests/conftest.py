import numpy as np
import pytest

from scalestereo import generate_weights, kernels
from scalestereo.config import EngineConfig


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # JIT-compile everything up front so timed tests measure the mechanism,
    # not compilation
    kernels.warmup()


@pytest.fixture(scope="session")
def tiny_cfg():
    """Small channel widths so learned-path tests stay fast."""
    return EngineConfig(total_iters=4, su_iters=2, hidden_channels=8,
                        feat_channels=8, context_channels=8, aux_channels=4,
                        corr_channels=8, disp_channels=4, head_channels=8)


@pytest.fixture(scope="session")
def tiny_weights(tiny_cfg):
    return generate_weights(tiny_cfg, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LABELS = {
    "test_c01": "01 correlation-oracle-equivalence",
    "test_c02": "02 pyramid-consistency",
    "test_c03": "03 lookup-cardinalities",
    "test_c04": "04 precomputed-index-equivalence-and-speedup",
    "test_c05": "05 initialization-rescale-invariance",
    "test_c06": "06 gru-contract",
    "test_c07": "07 convex-upsampling",
    "test_c08": "08 oracle-scale-recovery",
    "test_c09": "09 affine-alignment",
    "test_c10": "10 ratio-map-std",
    "test_c11": "11 sequence-loss",
    "test_c12": "12 format-round-trips",
    "test_c13": "13 full-pipeline-determinism",
}


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            name = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in name:
                continue
            for prefix, label in ACCEPTANCE_LABELS.items():
                if f"::{prefix}" in name:
                    status = "PASS" if outcome == "passed" else "FAIL"
                    lines[label] = status
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for label in sorted(lines):
            terminalreporter.write_line(f"ACCEPTANCE {label}: {lines[label]}")
