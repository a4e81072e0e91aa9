import numpy as np
import pytest
import torch

from compevent.tensor import ComplexTensor


def rand_ct(rng, shape, dtype=torch.float64) -> ComplexTensor:
    return ComplexTensor(
        torch.from_numpy(rng.standard_normal(shape)).to(dtype),
        torch.from_numpy(rng.standard_normal(shape)).to(dtype),
    )


def as_np(z: ComplexTensor) -> np.ndarray:
    return z.re.detach().numpy().astype(np.float64) + 1j * z.im.detach().numpy().astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results are collected here and printed at the end of the session
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'} {name}: {detail}")


def random_conv_case(rng):
    """A random small conv geometry (possibly depthwise or transposed) with random weights."""
    from compevent.layers import ComplexConv2d, ConvGeometry, transposed_geometry

    k = int(rng.choice([1, 3]))
    s = int(rng.choice([1, 2]))
    kind = rng.choice(["dense", "depthwise", "transposed", "transposed-dw"])
    cin = int(rng.integers(1, 5))
    cout = cin if "d" == kind[0] or kind == "transposed-dw" else int(rng.integers(1, 5))
    groups = cin if kind in ("depthwise", "transposed-dw") else 1
    if kind.startswith("transposed"):
        geom = transposed_geometry(cin, cout, k, s, groups)
    else:
        geom = ConvGeometry(cin, cout, k, s, (k - 1) // 2, groups)
    conv = ComplexConv2d(geom, seed=int(rng.integers(1 << 30))).double()
    import torch

    with torch.no_grad():
        conv.bias_re.copy_(torch.from_numpy(rng.standard_normal(cout)))
        conv.bias_im.copy_(torch.from_numpy(rng.standard_normal(cout)))
    h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    return conv, (int(rng.integers(1, 3)), cin, h, w)


def conv_oracle(conv, x):
    from compevent import oracles

    g = conv.geom
    k = conv.weight_re.detach().numpy() + 1j * conv.weight_im.detach().numpy()
    b = conv.bias_re.detach().numpy() + 1j * conv.bias_im.detach().numpy()
    fn = oracles.direct_conv_transpose2d if g.transposed else oracles.direct_conv2d
    return fn(as_np(x), k, b, g.stride, g.padding, g.groups)
