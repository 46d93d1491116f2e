"""Gradient-check harness shared by the unit suite and the acceptance suite.

Each case builds double-precision inputs and a forward closure; the check
compares tape gradients against the central-difference oracle for every
differentiable input, using a fixed random weighting of the op output as the
scalar loss.

Inputs for kinked ops (relu, maxpool) are scaled permutations of distinct
values, so no element sits within the finite-difference step of a kink or a
window tie.
"""

import numpy as np

from malarianet import tensor as T
from malarianet.tensor import GradTape, ParamTensor, Tensor

from fd_oracle import finite_difference_grad, max_relative_error


def kink_safe_array(rng, shape, scale=0.05):
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2) * scale + scale / 2
    return vals.reshape(shape).astype(np.float64)


def _bn_buffers(c):
    return Tensor(np.zeros(c)), Tensor(np.ones(c))


def _case_conv_s1_bias(rng, seed):
    inputs = {
        "x": rng.standard_normal((2, 2, 4, 4)),
        "w": rng.standard_normal((3, 2, 3, 3)),
        "b": rng.standard_normal(3),
    }

    def forward(ts):
        return T.conv2d(ts["x"], ts["w"], bias=ts["b"], stride=1, padding="same")

    return inputs, forward


def _case_conv_s2_same(rng, seed):
    inputs = {
        "x": rng.standard_normal((1, 2, 5, 5)),
        "w": rng.standard_normal((2, 2, 3, 3)),
    }

    def forward(ts):
        return T.conv2d(ts["x"], ts["w"], stride=2, padding="same")

    return inputs, forward


def _case_conv_valid(rng, seed):
    inputs = {
        "x": rng.standard_normal((1, 2, 4, 4)),
        "w": rng.standard_normal((2, 2, 2, 2)),
    }

    def forward(ts):
        return T.conv2d(ts["x"], ts["w"], stride=1, padding="valid")

    return inputs, forward


def _case_batchnorm_train(rng, seed):
    inputs = {
        "x": rng.standard_normal((3, 2, 3, 3)),
        "gamma": 0.5 + rng.random(2),
        "beta": rng.standard_normal(2),
    }

    def forward(ts):
        rm, rv = _bn_buffers(2)  # fresh buffers: the update must not leak between evals
        return T.batchnorm2d(ts["x"], ts["gamma"], ts["beta"], rm, rv, mode="train")

    return inputs, forward


def _case_batchnorm_infer(rng, seed):
    rm = rng.standard_normal(2)
    rv = 0.5 + rng.random(2)
    inputs = {
        "x": rng.standard_normal((3, 2, 3, 3)),
        "gamma": 0.5 + rng.random(2),
        "beta": rng.standard_normal(2),
    }

    def forward(ts):
        return T.batchnorm2d(ts["x"], ts["gamma"], ts["beta"], Tensor(rm), Tensor(rv), mode="infer")

    return inputs, forward


def _case_relu(rng, seed):
    inputs = {"x": kink_safe_array(rng, (4, 5))}

    def forward(ts):
        return T.relu(ts["x"])

    return inputs, forward


def _case_maxpool(rng, seed):
    inputs = {"x": kink_safe_array(rng, (2, 2, 5, 5))}

    def forward(ts):
        return T.maxpool2d(ts["x"], k=3, stride=2)

    return inputs, forward


def _case_maxpool_k2(rng, seed):
    inputs = {"x": kink_safe_array(rng, (1, 3, 4, 4))}

    def forward(ts):
        return T.maxpool2d(ts["x"], k=2, stride=2)

    return inputs, forward


def _case_global_avg_pool(rng, seed):
    inputs = {"x": rng.standard_normal((2, 3, 3, 4))}

    def forward(ts):
        return T.global_avg_pool(ts["x"])

    return inputs, forward


def _case_dense(rng, seed):
    inputs = {
        "x": rng.standard_normal((3, 4)),
        "w": rng.standard_normal((4, 5)),
        "b": rng.standard_normal(5),
    }

    def forward(ts):
        return T.dense(ts["x"], ts["w"], ts["b"])

    return inputs, forward


def _case_dropout(rng, seed):
    inputs = {"x": rng.standard_normal((4, 5))}

    def forward(ts):
        # identical generator per evaluation: the mask is part of the function
        return T.dropout(ts["x"], rate=0.3, mode="train", rng=np.random.default_rng(seed))

    return inputs, forward


def _case_softmax(rng, seed):
    inputs = {"z": rng.standard_normal((3, 4))}

    def forward(ts):
        return T.softmax(ts["z"])

    return inputs, forward


def _case_sparse_ce(rng, seed):
    labels = rng.integers(0, 3, size=4)
    inputs = {"z": rng.standard_normal((4, 3))}

    def forward(ts):
        return T.sparse_ce_loss(ts["z"], labels)

    return inputs, forward


def _case_add(rng, seed):
    inputs = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))}

    def forward(ts):
        return T.add(ts["a"], ts["b"])

    return inputs, forward


def _case_mul(rng, seed):
    inputs = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))}

    def forward(ts):
        return T.mul(ts["a"], ts["b"])

    return inputs, forward


def _case_sum(rng, seed):
    inputs = {"x": rng.standard_normal((3, 4))}

    def forward(ts):
        return T.tsum(ts["x"])

    return inputs, forward


def _case_residual_chain(rng, seed):
    # x feeds both the conv path and the shortcut: exercises accumulation
    inputs = {
        "x": rng.standard_normal((2, 2, 4, 4)),
        "w": rng.standard_normal((2, 2, 3, 3)) * 0.5,
        "gamma": 0.5 + rng.random(2),
        "beta": rng.standard_normal(2),
    }

    def forward(ts):
        rm, rv = _bn_buffers(2)
        y = T.conv2d(ts["x"], ts["w"], stride=1, padding="same")
        y = T.batchnorm2d(y, ts["gamma"], ts["beta"], rm, rv, mode="train")
        return T.add(y, ts["x"])

    return inputs, forward


OP_CASES = {
    "conv2d_s1_bias": _case_conv_s1_bias,
    "conv2d_s2_same": _case_conv_s2_same,
    "conv2d_valid": _case_conv_valid,
    "batchnorm_train": _case_batchnorm_train,
    "batchnorm_infer": _case_batchnorm_infer,
    "relu": _case_relu,
    "maxpool_k3s2": _case_maxpool,
    "maxpool_k2s2": _case_maxpool_k2,
    "global_avg_pool": _case_global_avg_pool,
    "dense": _case_dense,
    "dropout": _case_dropout,
    "softmax": _case_softmax,
    "sparse_ce_loss": _case_sparse_ce,
    "add": _case_add,
    "mul": _case_mul,
    "sum": _case_sum,
    "residual_chain": _case_residual_chain,
}


def check_case(name: str, seed: int, tol: float = 1e-5) -> float:
    """Run one gradient check; returns the worst relative error seen."""
    builder = OP_CASES[name]
    rng = np.random.default_rng(seed)
    inputs, forward = builder(rng, seed)
    inputs = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}

    probe = forward({k: Tensor(v.copy()) for k, v in inputs.items()})
    weights = np.random.default_rng(seed + 99_991).standard_normal(probe.shape)

    params = {k: ParamTensor(Tensor(v), name=k) for k, v in inputs.items()}
    with GradTape() as tape:
        tape.watch_all(params.values())
        out = forward({k: p.value for k, p in params.items()})
        loss = T.tsum(T.mul(out, Tensor(weights)))
        T.backward(tape, loss)

    def scalar():
        out = forward({k: Tensor(v) for k, v in inputs.items()})
        return float((out.data * weights).sum())

    worst = 0.0
    for key, param in params.items():
        fd = finite_difference_grad(scalar, inputs[key])
        err = max_relative_error(param.grad.data, fd)
        assert err <= tol, f"{name}/{key} seed {seed}: rel err {err:.3e} > {tol}"
        worst = max(worst, err)
    return worst
