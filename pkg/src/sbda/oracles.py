"""Stochastic first-order oracles and synthetic problem generators.

An oracle describes ``phi(x) = f(x) + omega(x)`` where ``f`` is an average of
per-sample losses ``F(x, xi)``. Solvers query it for one block of a stochastic
subgradient ``G^(i)(x, xi)`` (or for the full vector); ``omega`` is never
differentiated here, solvers handle it through their prox steps.

Samples ``xi`` are drawn by the caller with :meth:`StochasticOracle.sample`
from its own generator, so the oracle itself holds no random state. Passing
``xi=None`` to a query returns the exact (full-data) subgradient.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
from scipy import optimize, sparse

from .blocks import BlockParams, BlockPartition, BlockVector
from .geometry import Regularizer
from .schedules import SamplingDistribution

FORMAT_MAGIC = b"SBDA-INSTANCE"
FORMAT_VERSION = 1


@dataclasses.dataclass(frozen=True, eq=False)
class StochasticOracle:
    """Common interface; subclasses supply the per-sample loss."""

    partition: BlockPartition
    regularizer: Regularizer
    x_star: np.ndarray | None
    meta: dict

    kind = "abstract"

    # -- sampling --------------------------------------------------------
    @property
    def n_samples(self) -> int:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return rng.integers(self.n_samples, size=size)

    # -- values ------------------------------------------------------------
    def loss(self, x) -> float:
        raise NotImplementedError

    def objective(self, x) -> float:
        x = _data(x)
        return self.loss(x) + self.regularizer(x)

    # -- subgradients -------------------------------------------------------
    def subgradient(self, x, xi=None) -> np.ndarray:
        raise NotImplementedError

    def block_subgradient(self, x, i: int, xi=None) -> np.ndarray:
        return self.subgradient(x, xi)[self.partition.slice(i)]

    def sample_block_sq_norms(self, x, xis) -> np.ndarray:
        """``||G^(i)(x, xi)||^2`` for every sample in ``xis`` and every block."""
        G = np.stack([self.subgradient(x, xi) for xi in xis])
        return np.add.reduceat(G**2, np.asarray(self.partition.offsets[:-1]), axis=1)

    # -- bookkeeping --------------------------------------------------------
    def with_regularizer(self, regularizer: Regularizer) -> "StochasticOracle":
        return dataclasses.replace(self, regularizer=regularizer)

    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return self.partition.total


def _data(x):
    return x.data if isinstance(x, BlockVector) else np.asarray(x, dtype=float)


@dataclasses.dataclass(frozen=True, eq=False)
class L1Regression(StochasticOracle):
    """``f(x) = mean_k |b_k - a_k^T x|`` with rows ``a_k`` already scaled."""

    A: np.ndarray = None
    b: np.ndarray = None

    kind = "l1reg"

    @property
    def n_samples(self):
        return self.A.shape[0]

    def loss(self, x):
        return float(np.mean(np.abs(self.b - self.A @ _data(x))))

    def subgradient(self, x, xi=None):
        x = _data(x)
        if xi is None:
            return -(self.A.T @ np.sign(self.b - self.A @ x)) / self.n_samples
        a = self.A[xi]
        return -np.sign(self.b[xi] - a @ x) * a

    def block_subgradient(self, x, i, xi=None):
        if xi is None:
            return self.subgradient(x)[self.partition.slice(i)]
        a = self.A[xi]
        return -np.sign(self.b[xi] - a @ _data(x)) * a[self.partition.slice(i)]

    def sample_block_sq_norms(self, x, xis):
        xis = np.asarray(xis)
        s = np.sign(self.b[xis] - self.A[xis] @ _data(x))
        G2 = (s[:, None] * self.A[xis]) ** 2
        return np.add.reduceat(G2, np.asarray(self.partition.offsets[:-1]), axis=1)

    def arrays(self):
        return {"A": self.A, "b": self.b}


@dataclasses.dataclass(frozen=True, eq=False)
class SquaredLoss(StochasticOracle):
    """``f(x) = mean_k (b_k - z_k^T x)^2`` over training pairs; test pairs kept for reporting."""

    Z: np.ndarray = None
    b: np.ndarray = None
    Z_test: np.ndarray = None
    b_test: np.ndarray = None

    kind = "ls"

    @property
    def n_samples(self):
        return self.Z.shape[0]

    def loss(self, x):
        r = self.b - self.Z @ _data(x)
        return float(r @ r) / self.n_samples

    def test_loss(self, x):
        r = self.b_test - self.Z_test @ _data(x)
        return float(r @ r) / r.shape[0]

    def subgradient(self, x, xi=None):
        x = _data(x)
        if xi is None:
            return -2.0 * (self.Z.T @ (self.b - self.Z @ x)) / self.n_samples
        z = self.Z[xi]
        return -2.0 * (self.b[xi] - z @ x) * z

    def block_subgradient(self, x, i, xi=None):
        if xi is None:
            return self.subgradient(x)[self.partition.slice(i)]
        z = self.Z[xi]
        return -2.0 * (self.b[xi] - z @ _data(x)) * z[self.partition.slice(i)]

    def sample_block_sq_norms(self, x, xis):
        xis = np.asarray(xis)
        r = self.b[xis] - self.Z[xis] @ _data(x)
        G2 = (2.0 * r[:, None] * self.Z[xis]) ** 2
        return np.add.reduceat(G2, np.asarray(self.partition.offsets[:-1]), axis=1)

    def arrays(self):
        return {"Z": self.Z, "b": self.b, "Z_test": self.Z_test, "b_test": self.b_test}


@dataclasses.dataclass(frozen=True, eq=False)
class BudgetedLasso(StochasticOracle):
    """Least squares ``0.5 * mean_k (y_k - w^T x_k)^2`` observed through two features.

    A sample is a pair ``(k, j)``: row ``k`` and one feature ``j`` drawn from
    ``feature_p``. The block estimate ``x_k^(i) (x_kj w_j / p_j - y_k)`` is
    unbiased for the block gradient.
    """

    X: np.ndarray = None
    y: np.ndarray = None
    feature_p: np.ndarray = None

    kind = "lasso"

    @property
    def n_samples(self):
        return self.X.shape[0]

    def sample(self, rng, size=None):
        rows = rng.integers(self.n_samples, size=size)
        cum = np.cumsum(self.feature_p)
        cum[-1] = 1.0
        cols = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), cum.size - 1)
        return np.stack([rows, cols], axis=-1)

    def loss(self, x):
        r = self.y - self.X @ _data(x)
        return 0.5 * float(r @ r) / self.n_samples

    def _estimate(self, w, xi):
        k, j = int(xi[0]), int(xi[1])
        p = self.feature_p[j]
        if not p > 0:
            raise ValueError(f"feature {j} has zero sampling probability")
        return self.X[k, j] * w[j] / p - self.y[k]

    def subgradient(self, x, xi=None):
        w = _data(x)
        if xi is None:
            return self.X.T @ (self.X @ w - self.y) / self.n_samples
        return self.X[int(xi[0])] * self._estimate(w, xi)

    def block_subgradient(self, x, i, xi=None):
        w = _data(x)
        if xi is None:
            return self.subgradient(w)[self.partition.slice(i)]
        return self.X[int(xi[0]), self.partition.slice(i)] * self._estimate(w, xi)

    def sample_block_sq_norms(self, x, xis):
        xis = np.asarray(xis)
        w = _data(x)
        rows, cols = xis[:, 0], xis[:, 1]
        s = self.X[rows, cols] * w[cols] / self.feature_p[cols] - self.y[rows]
        G2 = (s[:, None] * self.X[rows]) ** 2
        return np.add.reduceat(G2, np.asarray(self.partition.offsets[:-1]), axis=1)

    def arrays(self):
        return {"X": self.X, "y": self.y, "feature_p": self.feature_p}


ORACLE_KINDS = {cls.kind: cls for cls in (L1Regression, SquaredLoss, BudgetedLasso)}


# -- generators -------------------------------------------------------------


def parse_scaling(scaling) -> tuple[str, float]:
    """``"uniform"`` or ``"powerlaw:<a>"`` (also accepts ``("powerlaw", a)``)."""
    if isinstance(scaling, (tuple, list)):
        name, a = scaling
        return str(name), float(a)
    name, _, arg = str(scaling).partition(":")
    if name == "uniform" and not arg:
        return "uniform", 0.0
    if name == "powerlaw":
        try:
            a = float(arg)
        except ValueError:
            raise ValueError(f"bad power-law exponent in {scaling!r}") from None
        if not a > 0:
            raise ValueError("power-law exponent must be positive")
        return "powerlaw", a
    raise ValueError(f"unknown scaling {scaling!r}")


def _check_dims(**dims):
    for name, v in dims.items():
        if int(v) < 1:
            raise ValueError(f"{name} must be positive, got {v}")


def gen_l1_regression(m: int, n_features: int, noise: float = 0.01, scaling="uniform",
                      n_blocks: int = 10, seed: int = 0, heavy_blocks: int = 0) -> L1Regression:
    """Robust regression instance ``b = (A S) x* + sigma``.

    ``A`` and ``x*`` are standard normal, ``sigma ~ N(0, noise * I)`` and ``S``
    is diagonal with per-coordinate scales: all ones, or draws from the density
    ``a (1 - s)^(a - 1)`` on ``[0, 1]``. With ``heavy_blocks = k``, ``k``
    randomly chosen blocks get scale one so the block subgradient bounds have
    ``k`` dominant entries.
    """
    _check_dims(m=m, n_features=n_features, n_blocks=n_blocks)
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    kind, a = parse_scaling(scaling)
    partition = BlockPartition.even(n_features, n_blocks)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n_features))
    x_star = rng.standard_normal(n_features)
    if kind == "uniform":
        s = np.ones(n_features)
    else:
        s = rng.beta(1.0, a, size=n_features)
    if heavy_blocks:
        if not 0 < heavy_blocks <= n_blocks:
            raise ValueError("heavy_blocks must lie in [1, n_blocks]")
        for i in rng.choice(n_blocks, size=heavy_blocks, replace=False):
            s[partition.slice(int(i))] = 1.0
    A_scaled = A * s
    b = A_scaled @ x_star + np.sqrt(noise) * rng.standard_normal(m)
    meta = {"generator": "l1reg", "m": m, "n_features": n_features, "noise": noise,
            "scaling": str(scaling) if not isinstance(scaling, (tuple, list)) else f"{kind}:{a:g}",
            "n_blocks": n_blocks, "seed": seed, "heavy_blocks": heavy_blocks}
    return L1Regression(partition, Regularizer.zero(), x_star, meta, A=A_scaled, b=b)


def gen_transformed_ls(n_features: int = 200, m: int = 3000, rescale: float = 1.0,
                       rescaled_fraction: float = 0.9, n_blocks: int = 20, seed: int = 0,
                       m_test: int = 10000, noise_std: float = 0.1) -> SquaredLoss:
    """Least squares under a random linear transform ``L`` with rescaled rows.

    ``L`` is standard normal with ``rescaled_fraction`` of its rows multiplied by
    ``rescale``; features are ``z = L a`` with ``a ~ N(0, I)``; ``x*`` is a
    standard normal draw clipped to ``[-1, 1]``; ``b = <z, x*> + eps``.
    """
    _check_dims(n_features=n_features, m=m, n_blocks=n_blocks, m_test=m_test)
    if not 0 < rescaled_fraction < 1:
        raise ValueError("rescaled_fraction must lie in (0, 1)")
    if not rescale > 0:
        raise ValueError("rescale factor must be positive")
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((n_features, n_features))
    rows = rng.choice(n_features, size=int(round(rescaled_fraction * n_features)), replace=False)
    L[rows] *= rescale
    x_star = np.clip(rng.standard_normal(n_features), -1.0, 1.0)

    def draw(count):
        Z = rng.standard_normal((count, n_features)) @ L.T
        return Z, Z @ x_star + noise_std * rng.standard_normal(count)

    Z, b = draw(m)
    Z_test, b_test = draw(m_test)
    meta = {"generator": "ls", "n_features": n_features, "m": m, "m_test": m_test,
            "rescale": rescale, "rescaled_fraction": rescaled_fraction,
            "n_blocks": n_blocks, "seed": seed, "noise_std": noise_std}
    return SquaredLoss(BlockPartition.even(n_features, n_blocks), Regularizer.zero(), x_star, meta,
                       Z=Z, b=b, Z_test=Z_test, b_test=b_test)


def gen_online_lasso(n_features: int = 54, lam: float = 0.1, feature_sampler=None,
                     m: int = 2000, n_blocks: int | None = None, seed: int = 0,
                     density: float = 0.2, noise_std: float = 0.1) -> BudgetedLasso:
    """Sparse linear model observed under a two-feature budget.

    Rows are standard normal, the true weight vector has ``density`` nonzeros.
    The returned oracle carries ``omega = lam * ||w||_1``. ``n_blocks``
    defaults to one block per feature.
    """
    _check_dims(n_features=n_features, m=m)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if feature_sampler is None:
        p = np.full(n_features, 1.0 / n_features)
    else:
        raw = feature_sampler.p if isinstance(feature_sampler, SamplingDistribution) else feature_sampler
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (n_features,) or np.any(raw <= 0):
            raise ValueError("feature sampler must give every feature positive probability")
        p = raw / raw.sum()
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, n_features))
    w_star = np.zeros(n_features)
    support = rng.choice(n_features, size=max(1, int(round(density * n_features))), replace=False)
    w_star[support] = rng.standard_normal(support.size)
    y = X @ w_star + noise_std * rng.standard_normal(m)
    n_blocks = n_features if n_blocks is None else n_blocks
    meta = {"generator": "lasso", "n_features": n_features, "lam": lam, "m": m,
            "n_blocks": n_blocks, "seed": seed, "density": density, "noise_std": noise_std}
    return BudgetedLasso(BlockPartition.even(n_features, n_blocks), Regularizer.l1(lam), w_star,
                         meta, X=X, y=y, feature_p=p)


GENERATORS = {"l1reg": gen_l1_regression, "ls": gen_transformed_ls, "lasso": gen_online_lasso}


# -- block parameters -------------------------------------------------------


def estimate_params(oracle: StochasticOracle, probe_points, samples_per_point: int = 1000,
                    radius_guess: float = 1.0, rng: np.random.Generator | int | None = 0,
                    x_star=None) -> BlockParams:
    """Estimate ``M_i`` by the largest root-mean-square block subgradient norm over probes.

    ``D_i`` is ``radius_guess**2 / 2`` per block, or ``d_i(x*^(i))`` for the
    zero-centred quadratic when ``x_star`` is given.
    """
    probes = list(probe_points)
    if not probes:
        raise ValueError("need at least one probe point")
    if samples_per_point < 1:
        raise ValueError("samples_per_point must be at least 1")
    rng = np.random.default_rng(rng)
    n = oracle.partition.n_blocks
    worst = np.zeros(n)
    for x in probes:
        xis = oracle.sample(rng, samples_per_point)
        worst = np.maximum(worst, oracle.sample_block_sq_norms(x, xis).mean(axis=0))
    M = np.sqrt(worst)
    if x_star is None:
        D = np.full(n, 0.5 * radius_guess**2)
    else:
        xs = BlockVector(_data(x_star), oracle.partition)
        D = 0.5 * xs.block_norms() ** 2
    return BlockParams(M, D)


def default_probes(oracle: StochasticOracle, count: int = 5, seed: int = 0, scale: float = 1.0):
    """The origin plus ``count - 1`` Gaussian points of the given scale."""
    rng = np.random.default_rng(seed)
    N = oracle.dim
    return [np.zeros(N)] + [scale * rng.standard_normal(N) for _ in range(count - 1)]


# -- reference optimum ------------------------------------------------------


def reference_optimum(oracle: StochasticOracle) -> tuple[np.ndarray, float]:
    """Minimizer and optimal value of ``phi``, solved to high accuracy.

    l1 regression: linear program (zero, l1 or box regularizer) or, with a
    squared-l2 term, its box-constrained dual. Least squares: normal
    equations. Lasso: coordinate descent.
    """
    reg = oracle.regularizer
    if isinstance(oracle, L1Regression):
        if reg.kind == "sql2":
            x = _l1reg_ridge(oracle.A, oracle.b, reg.weight)
        else:
            x = _l1reg_lp(oracle.A, oracle.b, reg)
    elif isinstance(oracle, SquaredLoss) and reg.kind in ("zero", "sql2"):
        m = oracle.n_samples
        H = 2.0 * oracle.Z.T @ oracle.Z / m + reg.weight * np.eye(oracle.dim)
        x = np.linalg.solve(H, 2.0 * oracle.Z.T @ oracle.b / m)
    elif isinstance(oracle, BudgetedLasso) and reg.kind == "l1":
        from sklearn.linear_model import Lasso

        model = Lasso(alpha=reg.weight, fit_intercept=False, tol=1e-12, max_iter=100000)
        x = model.fit(oracle.X, oracle.y).coef_.copy()
    else:
        raise NotImplementedError(f"no reference solver for {oracle.kind} with {reg.kind}")
    return x, oracle.objective(x)


def _l1reg_lp(A, b, reg):
    m, N = A.shape
    lo = reg.lo if reg.kind == "box" else -np.inf
    hi = reg.hi if reg.kind == "box" else np.inf
    eye = sparse.identity(m, format="csr")
    # variables [x, t] (+ u >= |x| for the l1 term)
    if reg.kind == "l1":
        Ieye = sparse.identity(N, format="csr")
        c = np.concatenate([np.zeros(N), np.full(m, 1.0 / m), np.full(N, reg.weight)])
        Zm = sparse.csr_matrix((m, N))
        Zn = sparse.csr_matrix((N, m))
        A_ub = sparse.vstack([
            sparse.hstack([-A, -eye, Zm]),
            sparse.hstack([A, -eye, Zm]),
            sparse.hstack([Ieye, Zn, -Ieye]),
            sparse.hstack([-Ieye, Zn, -Ieye]),
        ]).tocsc()
        b_ub = np.concatenate([-b, b, np.zeros(2 * N)])
        bounds = [(lo, hi)] * N + [(0, None)] * m + [(0, None)] * N
    else:
        c = np.concatenate([np.zeros(N), np.full(m, 1.0 / m)])
        A_ub = sparse.vstack([sparse.hstack([-A, -eye]), sparse.hstack([A, -eye])]).tocsc()
        b_ub = np.concatenate([-b, b])
        bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)] * N + [(0, None)] * m
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
                           options={"primal_feasibility_tolerance": 1e-10,
                                    "dual_feasibility_tolerance": 1e-10})
    if not res.success:
        raise RuntimeError(f"reference LP failed: {res.message}")
    return res.x[:N]


def _l1reg_ridge(A, b, lam):
    # dual: max_{|u| <= 1} u^T b / m - ||A^T u||^2 / (2 lam m^2), x = A^T u / (lam m)
    m = A.shape[0]

    def neg_dual(u):
        v = A.T @ u
        val = -(u @ b) / m + (v @ v) / (2 * lam * m * m)
        grad = -b / m + (A @ v) / (lam * m * m)
        return val, grad

    res = optimize.minimize(neg_dual, np.zeros(m), jac=True, method="L-BFGS-B",
                            bounds=[(-1.0, 1.0)] * m,
                            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 50000, "maxcor": 50})
    return A.T @ res.x / (lam * m)


# -- serialization ----------------------------------------------------------


def save_instance(oracle: StochasticOracle, path) -> None:
    """Write a versioned, byte-deterministic dump of an oracle.

    Layout: a magic/version line, one line of JSON describing the instance and
    its arrays, then the raw little-endian array bytes in header order.
    """
    arrays = dict(oracle.arrays())
    if oracle.x_star is not None:
        arrays["x_star"] = oracle.x_star
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "kind": oracle.kind,
        "sizes": list(oracle.partition.sizes),
        "regularizer": oracle.regularizer.to_dict(),
        "meta": oracle.meta,
        "arrays": entries,
    }
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC + b" %d\n" % FORMAT_VERSION)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for raw in chunks:
            fh.write(raw)


def load_instance(path) -> StochasticOracle:
    data = Path(path).read_bytes()
    first, _, rest = data.partition(b"\n")
    magic, _, version = first.partition(b" ")
    if magic != FORMAT_MAGIC:
        raise ValueError(f"{path} is not an instance file")
    if int(version) != FORMAT_VERSION:
        raise ValueError(f"unsupported instance format version {int(version)}")
    line, _, payload = rest.partition(b"\n")
    header = json.loads(line)
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]: e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(float)
    cls = ORACLE_KINDS[header["kind"]]
    x_star = arrays.pop("x_star", None)
    return cls(BlockPartition(tuple(header["sizes"])), Regularizer.from_dict(header["regularizer"]),
               x_star, header["meta"], **arrays)


class QueryMeter:
    """Counts queries made through it and their data cost.

    Cost is measured in sample-rows weighted by the fraction of coordinates
    returned, so one pass over the data costs ``n_samples``.
    """

    def __init__(self, oracle: StochasticOracle):
        self.oracle = oracle
        self.block_queries = 0
        self.full_queries = 0
        self.cost = 0.0
        self._fractions = oracle.partition.fractions()

    def block_subgradient(self, x, i, xi=None):
        self.block_queries += 1
        rows = 1 if xi is not None else self.oracle.n_samples
        self.cost += rows * self._fractions[i]
        return self.oracle.block_subgradient(x, i, xi)

    def subgradient(self, x, xi=None):
        self.full_queries += 1
        self.cost += 1 if xi is not None else self.oracle.n_samples
        return self.oracle.subgradient(x, xi)

    @property
    def queries(self) -> int:
        return self.block_queries + self.full_queries

    @property
    def passes(self) -> float:
        return self.cost / self.oracle.n_samples
