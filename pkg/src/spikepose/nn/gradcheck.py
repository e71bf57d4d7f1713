"""Central finite-difference gradient verification.

Every differentiable op is checked in float64 against an independent
numeric derivative of a scalar readout (random fixed projection of the op
output). The reported error is the max absolute deviation normalized by
the largest gradient magnitude in the buffer, so a clean pass means the
analytic gradients agree to near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-6


@dataclass
class GradCheckResult:
    name: str
    cases: int
    max_error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_error < self.tol

    def line(self) -> str:
        status = "ok" if self.ok else "FAIL"
        return (f"{status:4s} {self.name:<18s} cases={self.cases:<3d} "
                f"max_rel_err={self.max_error:.3e} tol={self.tol:.1e}")


def numeric_gradient(f, arrays: list[np.ndarray], h: float = DEFAULT_STEP) -> list[np.ndarray]:
    """Central differences of scalar f(*arrays) wrt every element of every array."""
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))),
                float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_op(build_scalar, arrays: list[np.ndarray], h: float = DEFAULT_STEP) -> float:
    """Compare analytic grads of build_scalar(tensors) against finite differences.

    `build_scalar` receives Tensors (requires_grad set) and must return a
    scalar Tensor computed from them; `arrays` are float64 working buffers
    that the numeric pass perturbs in place.
    """
    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = build_scalar(*tensors)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def f(*arrs):
        ts = [Tensor(a, dtype=np.float64) for a in arrs]
        return float(build_scalar(*ts).data)

    numeric = numeric_gradient(f, [t.data for t in tensors], h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def _projection(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def _scalar_readout(out: Tensor, proj: np.ndarray) -> Tensor:
    return F.sum_all(F.mul(out, Tensor(proj, dtype=np.float64)))


def check_conv2d(n_cases: int = 20, seed: int = 0) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        o = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 3))
        h = int(rng.integers(k, k + 5))
        w = int(rng.integers(k, k + 5))
        x = rng.standard_normal((n, c, h, w))
        wt = rng.standard_normal((o, c, k, k)) * 0.5
        b = rng.standard_normal(o) * 0.1
        out_shape = ((h + 2 * padding - k) // stride + 1,
                     (w + 2 * padding - k) // stride + 1)
        proj = _projection(rng, (n, o, *out_shape))

        def scalar(xt, wt_, bt):
            return _scalar_readout(F.conv2d(xt, wt_, bt, stride, padding), proj)

        worst = max(worst, check_op(scalar, [x, wt, b]))
    return GradCheckResult("conv2d", n_cases, worst, DEFAULT_TOL)


def check_batch_norm(n_cases: int = 20, seed: int = 1) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n = int(rng.integers(2, 5))
        c = int(rng.integers(1, 4))
        h = int(rng.integers(1, 4))
        w = int(rng.integers(1, 4))
        x = rng.standard_normal((n, c, h, w))
        gamma = rng.standard_normal(c) * 0.5 + 1.0
        beta = rng.standard_normal(c) * 0.1
        proj = _projection(rng, (n, c, h, w))

        def scalar(xt, gt, bt):
            rm = np.zeros(c, np.float64)
            rv = np.ones(c, np.float64)
            out = F.batch_norm(xt, gt, bt, rm, rv, training=True)
            return _scalar_readout(out, proj)

        worst = max(worst, check_op(scalar, [x, gamma, beta]))
    return GradCheckResult("batch_norm(train)", n_cases, worst, DEFAULT_TOL)


def check_relu(n_cases: int = 20, seed: int = 2) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        shape = tuple(int(rng.integers(1, 5)) for _ in range(2))
        x = rng.standard_normal(shape)
        x = np.where(np.abs(x) < 0.1, x + 0.25, x)  # keep off the kink
        proj = _projection(rng, shape)

        def scalar(xt):
            return _scalar_readout(F.relu(xt), proj)

        worst = max(worst, check_op(scalar, [x]))
    return GradCheckResult("relu", n_cases, worst, DEFAULT_TOL)


def check_plif(n_cases: int = 20, seed: int = 3, steps: int = 3) -> GradCheckResult:
    """Surrogate-mode PLIF chain: gradients through spikes, state and decay."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 5)))
        step_inputs = [rng.standard_normal(shape) * 1.5 for _ in range(steps)]
        v0 = rng.standard_normal(shape) * 0.5
        w = rng.standard_normal(1) * 0.5
        projs = rng.standard_normal((steps, *shape))

        def scalar(*tensors):
            xs, (v, wt) = tensors[:steps], tensors[steps:]
            total = None
            for t, x_t in enumerate(xs):
                spikes, v = F.plif_step(x_t, v, wt, surrogate_forward=True)
                term = _scalar_readout(spikes, projs[t])
                total = term if total is None else F.add(total, term)
            return F.add(total, F.sum_all(v))

        worst = max(worst, check_op(scalar, [*step_inputs, v0, w]))
    return GradCheckResult("plif_step", n_cases, worst, DEFAULT_TOL)


def check_glue_ops(n_cases: int = 20, seed: int = 4) -> GradCheckResult:
    """add/sub/mul/scale/mean/concat/euclid_norm/global_avg_pool in one composite."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n, c, h, w = (int(rng.integers(1, 4)) for _ in range(4))
        x = rng.standard_normal((n, c, h, w))
        y = rng.standard_normal((n, c, h, w))
        proj = rng.standard_normal((n, 2 * c))

        def scalar(xt, yt):
            pooled = F.global_avg_pool(F.mul(xt, yt))
            joined = F.concat([pooled, F.global_avg_pool(F.sub(xt, F.scale(yt, 0.5)))],
                              axis=1)
            readout = F.sum_all(F.mul(joined, Tensor(proj, dtype=np.float64)))
            return F.add(readout, F.mean(F.euclid_norm(F.add(xt, yt), axis=1)))

        worst = max(worst, check_op(scalar, [x, y]))
    return GradCheckResult("glue_ops", n_cases, worst, DEFAULT_TOL)


def run_suite(n_cases: int = 20, seed: int = 0) -> list[GradCheckResult]:
    return [
        check_conv2d(n_cases, seed),
        check_batch_norm(n_cases, seed + 1),
        check_relu(n_cases, seed + 2),
        check_plif(n_cases, seed + 3),
        check_glue_ops(n_cases, seed + 4),
    ]
