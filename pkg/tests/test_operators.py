import numpy as np
import pytest

from dideeponet import autodiff as ad
from dideeponet import operators as ops
from dideeponet.errors import ConfigurationError, FormatError

SMALL = dict(branch_layers=(6, 5), trunk_layers=(7, 4), stage2_layers=(5,), modes=3, pool=2)


def small(variant="deeponet", **kw):
    return ops.OperatorConfig(variant=variant, **{**SMALL, **kw})


# ---------------------------------------------------------------- config

def test_default_config():
    c = ops.OperatorConfig()
    assert c.branch_layers == (512, 512, 512) and c.trunk_layers == (256, 256, 256)
    assert c.modes == 128 and c.n_outputs == 3 and c.siren_omega0 == 30.0
    assert c.branch_input_dim == 513 and c.trunk_input_dim == 3
    assert ops.OperatorConfig(variant="geometric").trunk_input_dim == 4


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ops.OperatorConfig(variant="fno")
    with pytest.raises(ConfigurationError):
        ops.OperatorConfig(branch_layers=(4, 0))
    with pytest.raises(ConfigurationError):
        ops.OperatorConfig(modes=0)
    with pytest.raises(ConfigurationError):
        ops.OperatorConfig(siren_omega0=0)


def test_config_dict_round_trip():
    c = small("geometric")
    assert ops.OperatorConfig.from_dict(c.to_dict()) == c


def test_network_shapes():
    d = ops.network_shapes(small())
    assert d["branch"] == ([9, 6, 5, 9], "relu") and d["trunk"] == ([3, 7, 4, 9], "relu")
    g = ops.network_shapes(small("geometric"))
    assert g["branch"][0][-1] == 3 and g["trunk"][0][0] == 4
    assert g["branch2"] == ([3, 5, 9], "relu") and g["trunk2"] == ([3, 5, 9], "sine")


# ---------------------------------------------------------------- init

def test_init_deterministic_and_bounded():
    c = small("geometric")
    a, b = ops.init_params(c, 4), ops.init_params(c, 4)
    assert all(np.array_equal(a[k].value, b[k].value) for k in a)
    assert not np.array_equal(a["branch.0.weight"].value, ops.init_params(c, 5)["branch.0.weight"].value)
    for net, (dims, act) in ops.network_shapes(c).items():
        for i, fan_in in enumerate(dims[:-1]):
            w = a[f"{net}.{i}.weight"].value
            if act == "sine":
                bound = 1 / fan_in if i == 0 else np.sqrt(6 / fan_in) / c.siren_omega0
            else:
                bound = np.sqrt(6 / fan_in)
            assert np.abs(w).max() <= bound
            assert np.all(a[f"{net}.{i}.bias"].value == 0)


@pytest.mark.parametrize("variant", ["deeponet", "geometric"])
def test_forward_after_init_is_finite_and_moderate(variant, rng):
    c = ops.OperatorConfig(variant=variant)
    p = ops.init_params(c, 0).detached()
    sdf = rng.normal(size=(16, 16, 16))
    branch, trunk = ops.sample_inputs(c, sdf, 400.0)
    out = ops.forward(p, c, branch, trunk[:200]).value
    assert out.shape == (200, 3) and np.isfinite(out).all() and np.abs(out).max() < 1e3


# ---------------------------------------------------------------- inputs

def test_branch_encode_examples(rng):
    v = ops.branch_encode(np.full((16, 16, 16), 0.7), 1000.0)
    assert v.shape == (513,) and np.all(v[:512] == 0.7) and v[-1] == 1.0
    assert ops.branch_encode(np.zeros((8, 8, 8)), 10.0)[-1] == 0.01
    g = rng.normal(size=(32, 32, 32))
    expect = [g[4 * i:4 * i + 4, 4 * j:4 * j + 4, 4 * k:4 * k + 4].mean()
              for i in range(8) for j in range(8) for k in range(8)]
    assert np.allclose(ops.branch_encode(g, 50.0)[:512], expect, rtol=0, atol=1e-15)
    with pytest.raises(ConfigurationError):
        ops.branch_encode(np.zeros((12, 12, 12)), 10.0)


def test_trunk_inputs():
    t = ops.trunk_inputs(3)
    assert t.shape == (27, 3) and t.min() == -1.0 and t.max() == 1.0
    sdf = np.arange(27.0).reshape(3, 3, 3)
    tg = ops.trunk_inputs(3, sdf, nodes=np.array([0, 5]))
    assert np.array_equal(tg[:, 3], [0.0, 5.0]) and np.array_equal(tg[:, :3], t[[0, 5]])


# ---------------------------------------------------------------- forward passes

def _set(params, values):
    for k, v in values.items():
        params[k] = ad.parameter(np.asarray(v, dtype=float), k)


def test_zero_weights_give_zero_output(rng):
    c = small()
    p = ops.init_params(c, 0)
    for k in p:
        p[k].value[...] = 0
    out = ops.deeponet_forward(p, c, rng.normal(size=9), rng.normal(size=(5, 3))).value
    assert np.array_equal(out, np.zeros((5, 3)))


def test_deeponet_hand_case():
    # p = 1, one affine layer per network
    c = ops.OperatorConfig(branch_layers=(), trunk_layers=(), modes=1, pool=1)
    p = ops.ModelParams()
    Wb = np.array([[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]])
    bb = np.array([0.1, 0.2, 0.3])
    Wt = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 1.0, 1.0]])
    bt = np.array([0.0, 1.0, -1.0])
    _set(p, {"branch.0.weight": Wb, "branch.0.bias": bb, "trunk.0.weight": Wt, "trunk.0.bias": bt})
    branch = np.array([0.4, 0.9])
    x = np.array([[0.3, -0.2, 0.5]])
    B = Wb @ branch + bb
    T = Wt @ x[0] + bt
    out = ops.deeponet_forward(p, c, branch, x).value
    assert np.allclose(out[0], B * T, rtol=0, atol=1e-15)


def dense_deeponet(params, c, branch, x):
    """Reference evaluation with explicit loops over layers and heads."""
    def net(name, v):
        n = ops.depth(c, name)
        for i in range(n):
            v = params[f"{name}.{i}.weight"].value @ v + params[f"{name}.{i}.bias"].value
            if i < n - 1:
                v = np.maximum(v, 0)
        return v

    B = net("branch", branch)
    out = np.zeros((len(x), 3))
    for r, pt in enumerate(x):
        T = net("trunk", pt)
        for k in range(3):
            out[r, k] = sum(B[k * c.modes + m] * T[k * c.modes + m] for m in range(c.modes))
    return out


def test_deeponet_matches_dense_reference(rng):
    c = small()
    p = ops.init_params(c, 2)
    for k in p:
        if k.endswith("bias"):
            p[k].value[...] = rng.normal(size=p[k].shape)
    branch, x = rng.normal(size=9), rng.uniform(-1, 1, size=(6, 3))
    out = ops.deeponet_forward(p, c, branch, x).value
    assert np.allclose(out, dense_deeponet(p, c, branch, x), rtol=1e-13, atol=1e-13)
    assert np.array_equal(out, ops.deeponet_forward(p, c, branch, x).value)


def test_geometric_hand_case_identity_stage2():
    c = ops.OperatorConfig(variant="geometric", branch_layers=(), trunk_layers=(), stage2_layers=(2,),
                           modes=1, pool=1)
    p = ops.init_params(c, 3)
    branch = np.array([0.3, -0.7])
    x = np.array([[0.1, 0.2, -0.4, 0.25]])
    v = lambda k: p[k].value
    b1 = v("branch.0.weight") @ branch + v("branch.0.bias")
    t1 = v("trunk.0.weight") @ x[0] + v("trunk.0.bias")
    z = b1 * t1
    b2 = v("branch2.1.weight") @ np.maximum(v("branch2.0.weight") @ z + v("branch2.0.bias"), 0) + v("branch2.1.bias")
    t2 = v("trunk2.1.weight") @ (v("trunk2.0.weight") @ z + v("trunk2.0.bias")) + v("trunk2.1.bias")
    out = ops.geometric_forward(p, c, branch, x, stage2_activation="identity").value
    assert np.allclose(out[0], b2 * t2, rtol=1e-14, atol=1e-15)


def test_geometric_zero_stage2_gives_zero(rng):
    c = small("geometric")
    p = ops.init_params(c, 0)
    for k in p:
        if k.startswith("branch2"):
            p[k].value[...] = 0
    out = ops.geometric_forward(p, c, rng.normal(size=9), rng.normal(size=(4, 4))).value
    assert np.array_equal(out, np.zeros((4, 3)))


def test_geometric_sensitive_to_pointwise_sdf(rng):
    c = small("geometric")
    p = ops.init_params(c, 1)
    branch = rng.normal(size=9)
    x = rng.uniform(-1, 1, size=(10, 4))
    x2 = x.copy()
    x2[:, 3] += 0.1
    a = ops.geometric_forward(p, c, branch, x).value
    b = ops.geometric_forward(p, c, branch, x2).value
    assert np.abs(a - b).max() > 0


def test_geometric_requires_sdf_channel(rng):
    c = small("geometric")
    with pytest.raises(ConfigurationError):
        ops.geometric_forward(ops.init_params(c), c, rng.normal(size=9), rng.normal(size=(3, 3)))
    d = small()
    with pytest.raises(ConfigurationError):
        ops.deeponet_forward(ops.init_params(d), d, rng.normal(size=9), rng.normal(size=(3, 4)))


def test_ablated_geometric_reduces_to_relu_stack(rng):
    c = small("geometric")
    p = ops.init_params(c, 6)
    x = rng.uniform(-1, 1, size=(8, 4))
    x[:, 3] = 0.0
    out = ops.geometric_forward(p, c, rng.normal(size=9), x, stage2_activation="relu").value
    assert out.shape == (8, 3) and np.isfinite(out).all()


def test_fusion_bilinear_in_branch_head(rng):
    c = small()
    p = ops.init_params(c, 7)
    branch, x = rng.normal(size=9), rng.uniform(-1, 1, size=(5, 3))
    base = ops.deeponet_forward(p, c, branch, x).value
    last = f"branch.{ops.depth(c, 'branch') - 1}"
    rows = slice(c.modes, 2 * c.modes)  # the v head
    p[last + ".weight"].value[rows] *= 2.5
    p[last + ".bias"].value[rows] *= 2.5
    out = ops.deeponet_forward(p, c, branch, x).value
    assert np.allclose(out[:, 1], 2.5 * base[:, 1], rtol=1e-13, atol=1e-15)
    assert np.array_equal(out[:, [0, 2]], base[:, [0, 2]])


@pytest.mark.parametrize("variant", ["deeponet", "geometric"])
def test_predict_chunks_and_shapes(variant, rng):
    c = small(variant)
    p = ops.init_params(c, 0)
    sdf = rng.normal(size=(4, 4, 4))
    a = ops.predict(p, c, sdf, 500.0)
    b = ops.predict(p, c, sdf, 500.0, chunk=7)
    assert a.G == 4
    assert all(np.allclose(x, y, rtol=1e-13, atol=1e-15) for x, y in zip(a.components(), b.components()))


@pytest.mark.parametrize("variant", ["deeponet", "geometric"])
def test_parameter_gradients_match_finite_differences(variant, rng):
    c = small(variant)
    p = ops.init_params(c, 3)
    for k in p:
        if k.endswith("bias"):
            p[k].value[...] = 0.1 * rng.normal(size=p[k].shape)
    branch = rng.normal(size=9)
    trunk = rng.uniform(-1, 1, size=(4, c.trunk_input_dim))
    target = rng.normal(size=(4, 3))

    def loss():
        out = ops.forward(p, c, branch, trunk)
        return ad.weighted_sq_error(out, target, np.ones((4, 3)))

    assert ad.grad_check(loss, list(p.values()), eps=1e-5) < 1e-4


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    c = small("geometric")
    p = ops.init_params(c, 9)
    path = tmp_path / "ck.npz"
    ops.save_checkpoint(path, p, c, seed=9, epoch=3)
    ck = ops.load_checkpoint(path)
    assert ck.config == c and ck.metadata == {"seed": 9, "epoch": 3}
    assert all(ck.params[k].value.tobytes() == p[k].value.tobytes() for k in p)
    assert list(ck.params) == list(p)


def test_checkpoint_errors(tmp_path):
    from dideeponet.npyio import write_npz
    path = tmp_path / "bad.npz"
    write_npz(path, {"branch.0.weight": np.zeros((2, 2))})
    with pytest.raises(FormatError, match="metadata"):
        ops.load_checkpoint(path)
    c = small()
    p = ops.init_params(c)
    ops.save_checkpoint(path, p, small(modes=4))
    with pytest.raises(ConfigurationError):
        ops.load_checkpoint(path)
