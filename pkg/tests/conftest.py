import numpy as np
import pytest

from swinnpe.transforms import CodecConfig


def numeric_grad(f, arr, h_scale=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place, restored)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = {}
    for i in idx:
        orig = flat[i]
        h = h_scale * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    if indices is None:
        return np.array([out[i] for i in range(flat.size)]).reshape(arr.shape)
    return out


def rel_err(analytic, numeric):
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    return float(np.abs(a - n).max() / scale)


def block_params(C, k=3):
    # two norms 4C, three dsconv projections 3(k^2 C + C^2 + C), output proj C^2 + C, MLP 8C^2 + 5C
    return 12 * C * C + (13 + 3 * k * k) * C


def toy_hand_count():
    """Per-network parameter totals of the toy config, written out by hand."""
    d, c = (1, 1, 2, 1, 2, 1), (16, 24, 32, 40, 24, 24)

    def merge(ci, co):
        return 8 * ci + 4 * ci * co + co

    def split(ci, co, norm=True):
        return ci * 4 * co + 4 * co + (8 * co if norm else 0)

    g_a = sum(merge(ci, co) + n * block_params(co) for ci, co, n in zip((3,) + c[:3], c[:4], d[:4]))
    h_a = merge(40, 24) + 2 * block_params(24) + merge(24, 24) + block_params(24)
    h_s = block_params(24) + split(24, 24) + 2 * block_params(24) + split(24, 40) + (40 * 80 + 80)
    g_s = (
        block_params(40)
        + split(40, 32)
        + 2 * block_params(32)
        + split(32, 24)
        + block_params(24)
        + split(24, 16)
        + block_params(16)
        + split(16, 3, norm=False)
    )
    charm = (80 * 40 + 40 + 40 * 40 + 40) + (100 * 40 + 40 + 40 * 40 + 40)
    z_prior = 24 * (3 + 9 + 9 + 3 + 10 + 9)  # matrices, biases, gates
    return {"g_a": g_a, "h_a": h_a, "h_s": h_s, "g_s": g_s, "charm": charm, "z_prior": z_prior}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_cfg():
    return CodecConfig.toy()


ACCEPTANCE_LINES = []


def report_criterion(number, title, ok, detail):
    """Record and print one acceptance verdict line."""
    line = f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
