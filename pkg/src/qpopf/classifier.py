"""Region classifiers: the quantum-feature model and the MLP baseline.

Both models share the head semantics: logits feed a softmax with inverse
temperature beta, and the released region index is a categorical draw
from the resulting distribution.  The quantum model's depolarizing noise
enters as an exact (1-gamma) contraction of the bias-free logits; the
MLP's privacy knob is Gaussian noise added to its logits.

Training is joint cross-entropy descent with Adam: the head gets
analytic gradients, the circuit angles get parameter-shift feature
Jacobians chained with the analytic head gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from qpopf.circuit import (
    CircuitConfig,
    VqcParams,
    feature_jacobian,
    run_circuit_batch,
    z_expectations,
)
from qpopf.regions import RegionAtlas, locate_region


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


def softmax_probs(s: np.ndarray, beta: float) -> np.ndarray:
    """p_k proportional to exp(beta s_k), max-subtracted for stability."""
    z = beta * np.asarray(s, dtype=float)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(s: np.ndarray, beta: float) -> np.ndarray:
    z = beta * np.asarray(s, dtype=float)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def sample_region(p: np.ndarray, rng: np.random.Generator) -> int:
    """Categorical draw via inverse CDF; returns a 1-based region id."""
    cum = np.cumsum(np.asarray(p, dtype=float))
    k = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(k, len(cum) - 1) + 1


@dataclass
class LinearHead:
    """Classifier head: logits = W h (+ b), softmax sharpness beta."""

    W: np.ndarray               # (K, n_q)
    b: np.ndarray               # (K,), all-zero in bias-free mode
    beta: float = 1.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("head weights must be finite")
        if self.W.shape[0] != self.b.shape[0]:
            raise ValueError("W and b disagree on the class count")

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def bias_free(self) -> bool:
        return bool(np.all(self.b == 0.0))

    def weight_inf1_norm(self) -> float:
        """max_k ||w_k||_1, the sensitivity norm of the head."""
        return float(np.max(np.sum(np.abs(self.W), axis=1)))


@dataclass
class VqcModel:
    """Bundle of circuit config, trained angles, and head."""

    config: CircuitConfig
    params: VqcParams
    head: LinearHead
    model_id: str = "vqc"

    @property
    def K(self) -> int:
        return self.head.K

    @property
    def num_params(self) -> int:
        n = self.params.count + self.head.W.size
        if not self.head.bias_free:
            n += self.head.b.size
        return n

    def features0(self, thetas: np.ndarray) -> np.ndarray:
        """Noise-free feature matrix (N, n_q)."""
        states = run_circuit_batch(self.config, self.params, thetas)
        return z_expectations(states, self.config.n_q)

    def base_scores(self, thetas: np.ndarray) -> np.ndarray:
        """W h0 without bias: the part of the logits that noise contracts."""
        return self.features0(thetas) @ self.head.W.T

    def logit_matrix(self, thetas: np.ndarray, gamma: float = 0.0) -> np.ndarray:
        return (1.0 - gamma) * self.base_scores(thetas) + self.head.b

    def probability_matrix(
        self, thetas: np.ndarray, gamma: float = 0.0, beta: float | None = None
    ) -> np.ndarray:
        beta = self.head.beta if beta is None else beta
        return softmax_probs(self.logit_matrix(thetas, gamma), beta)

    def selection_probabilities(
        self,
        thetas: np.ndarray,
        gamma: float,
        beta: float,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        return self.probability_matrix(thetas, gamma, beta)


def vqc_forward(
    config: CircuitConfig,
    params: VqcParams,
    head: LinearHead,
    theta: np.ndarray,
    gamma: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pipeline circuit -> noisy features -> logits -> softmax(beta)."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    theta = np.asarray(theta, dtype=float)
    states = run_circuit_batch(config, params, theta[None, :])
    h = (1.0 - gamma) * z_expectations(states, config.n_q)[0]
    s = head.W @ h + head.b
    p = softmax_probs(s, head.beta)
    return h, s, p


@dataclass
class MlpBaseline:
    """tanh MLP (two hidden layers) with a bias-free linear head.

    ``sigma`` is the standard deviation of the Gaussian logit noise used
    as the classical privacy mechanism; 0 means deterministic.
    """

    W1: np.ndarray              # (H1, m)
    b1: np.ndarray
    W2: np.ndarray              # (H2, H1)
    b2: np.ndarray
    W_head: np.ndarray          # (K, H2)
    beta: float = 1.0
    sigma: float = 0.0
    activation: str = "tanh"
    model_id: str = "mlp"

    @property
    def K(self) -> int:
        return self.W_head.shape[0]

    @property
    def num_params(self) -> int:
        return int(
            self.W1.size + self.b1.size + self.W2.size + self.b2.size + self.W_head.size
        )

    def logits(self, thetas: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(thetas, dtype=float))
        h1 = np.tanh(x @ self.W1.T + self.b1)
        h2 = np.tanh(h1 @ self.W2.T + self.b2)
        return h2 @ self.W_head.T

    def logit_matrix(self, thetas: np.ndarray, gamma: float = 0.0) -> np.ndarray:
        # gamma is a no-op for the classical model; kept for a shared API
        return self.logits(thetas)

    def probability_matrix(
        self, thetas: np.ndarray, gamma: float = 0.0, beta: float | None = None
    ) -> np.ndarray:
        beta = self.beta if beta is None else beta
        return softmax_probs(self.logits(thetas), beta)

    def selection_probabilities(
        self,
        thetas: np.ndarray,
        gamma: float,
        beta: float,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        s = self.logits(thetas)
        if self.sigma > 0.0:
            if rng is None:
                raise ValueError("sigma > 0 requires an rng")
            s = s + self.sigma * rng.standard_normal(s.shape)
        return softmax_probs(s, beta)


@dataclass
class OracleClassifier:
    """Exact point-location stand-in for a trained model."""

    atlas: RegionAtlas
    model_id: str = "oracle"

    @property
    def K(self) -> int:
        return self.atlas.K

    def logit_matrix(self, thetas: np.ndarray, gamma: float = 0.0) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        out = np.zeros((thetas.shape[0], self.K))
        for i, t in enumerate(thetas):
            out[i, locate_region(self.atlas, t) - 1] = 1.0
        return out

    def selection_probabilities(self, thetas, gamma, beta, rng=None) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        out = np.zeros((thetas.shape[0], self.K))
        for i, t in enumerate(thetas):
            out[i, locate_region(self.atlas, t) - 1] = 1.0
        return out


def mlp_forward_noisy(
    mlp: MlpBaseline, theta: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """One noisy forward: logits + N(0, sigma^2) draws, then softmax."""
    s = mlp.logits(np.asarray(theta, dtype=float)[None, :])[0]
    if sigma > 0.0:
        s = s + sigma * rng.standard_normal(s.shape)
    return softmax_probs(s, mlp.beta)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    beta: float = 1.0           # softmax temperature used during training
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")


class _Adam:
    def __init__(self, shapes, cfg: TrainConfig):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0
        self.cfg = cfg

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1 - cfg.adam_beta1) * g
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1 - cfg.adam_beta2) * g * g
            m_hat = self.m[i] / (1 - cfg.adam_beta1**self.t)
            v_hat = self.v[i] / (1 - cfg.adam_beta2**self.t)
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _check_labels(labels: np.ndarray, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.min() < 1 or labels.max() > K:
        raise ValueError(f"labels must lie in 1..{K}")
    return labels - 1  # 0-based class indices internally


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def ce_head_gradients(
    h: np.ndarray, W: np.ndarray, b: np.ndarray, y: np.ndarray, beta: float
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mean cross-entropy of softmax(beta (W h + b)) and its gradients.

    Returns (loss, dW, db, dh, probs) for a batch of features h (B, n)
    and 0-based labels y.
    """
    logits = h @ W.T + b
    logp = log_softmax(logits, beta)
    loss = -float(np.mean(logp[np.arange(len(y)), y]))
    p = np.exp(logp)
    dlogits = beta * (p - np.eye(W.shape[0])[y]) / len(y)
    return loss, dlogits.T @ h, dlogits.sum(axis=0), dlogits @ W, p


def _epoch_record(epoch, batch_losses, model, dataset, eval_set) -> dict:
    rec = {
        "epoch": epoch + 1,
        "loss": float(np.mean(batch_losses)),
        "train_accuracy": argmax_accuracy(model, *dataset),
    }
    if eval_set is not None:
        rec["test_accuracy"] = argmax_accuracy(model, *eval_set)
    return rec


def _better_epoch(rec: dict, best_rec: dict | None) -> bool:
    """Best iterate: highest train accuracy, then lowest loss."""
    if best_rec is None:
        return True
    key = (-rec["train_accuracy"], rec["loss"])
    best = (-best_rec["train_accuracy"], best_rec["loss"])
    return key < best


def train_vqc(
    dataset: tuple[np.ndarray, np.ndarray],
    config: CircuitConfig,
    train_cfg: TrainConfig,
    K: int | None = None,
    bias_free: bool = True,
    eval_set: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[VqcParams, LinearHead, list[dict]]:
    """Joint circuit + head cross-entropy training at gamma = 0.

    Returns the trained parameters, the head, and a per-epoch history
    (loss curve, plus accuracies when an eval set is given).
    Deterministic under the config seed.
    """
    thetas, labels = dataset
    thetas = np.asarray(thetas, dtype=float)
    K = int(np.max(labels)) if K is None else K
    y = _check_labels(labels, K)
    n = thetas.shape[0]

    rng = np.random.default_rng(train_cfg.seed)
    params = VqcParams.random_init(config, rng)
    W = rng.uniform(-1.0, 1.0, size=(K, config.n_q)) / np.sqrt(config.n_q)
    b = np.zeros(K)
    opt_targets = [params.phi, W] + ([] if bias_free else [b])
    adam = _Adam([t.shape for t in opt_targets], train_cfg)

    history: list[dict] = []
    best_rec, best_state = None, None
    for epoch in range(train_cfg.epochs):
        batch_losses = []
        for idx in _epoch_batches(n, train_cfg.batch_size, rng):
            xb, yb = thetas[idx], y[idx]
            h = z_expectations(run_circuit_batch(config, params, xb), config.n_q)
            loss, gW, gb, dh, _ = ce_head_gradients(h, W, b, yb, train_cfg.beta)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch} (lr="
                    f"{train_cfg.learning_rate}, history so far {history})"
                )
            batch_losses.append(loss)
            jac = feature_jacobian(config, params, xb)
            flat = jac.reshape(*jac.shape[:2], -1)
            gphi = np.einsum("bj,bjp->p", dh, flat).reshape(params.phi.shape)
            grads = [gphi, gW] + ([] if bias_free else [gb])
            adam.step(opt_targets, grads)
        model = VqcModel(config, params, LinearHead(W=W, b=b, beta=train_cfg.beta))
        history.append(_epoch_record(epoch, batch_losses, model, dataset, eval_set))
        if _better_epoch(history[-1], best_rec):
            best_rec = history[-1]
            best_state = (params.copy(), W.copy(), b.copy())
    # lr 0.05 oscillates near convergence; keep the best iterate
    if best_state is not None:
        params, W, b = best_state
    return params, LinearHead(W=W, b=b, beta=train_cfg.beta), history


def _mlp_init(m: int, hidden: tuple[int, int], K: int, rng: np.random.Generator):
    def fan_in(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    h1, h2 = hidden
    return (
        fan_in(h1, m),
        rng.uniform(-1 / np.sqrt(m), 1 / np.sqrt(m), size=h1),
        fan_in(h2, h1),
        rng.uniform(-1 / np.sqrt(h1), 1 / np.sqrt(h1), size=h2),
        fan_in(K, h2),
    )


def train_mlp(
    dataset: tuple[np.ndarray, np.ndarray],
    train_cfg: TrainConfig,
    hidden: tuple[int, int] = (7, 7),
    K: int | None = None,
    eval_set: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[MlpBaseline, list[dict]]:
    """Backprop training of the tanh MLP with the shared beta-softmax head."""
    thetas, labels = dataset
    thetas = np.asarray(thetas, dtype=float)
    K = int(np.max(labels)) if K is None else K
    y = _check_labels(labels, K)
    n, m = thetas.shape

    rng = np.random.default_rng(train_cfg.seed)
    W1, b1, W2, b2, Wh = _mlp_init(m, hidden, K, rng)
    targets = [W1, b1, W2, b2, Wh]
    adam = _Adam([t.shape for t in targets], train_cfg)

    history: list[dict] = []
    mlp = MlpBaseline(W1=W1, b1=b1, W2=W2, b2=b2, W_head=Wh, beta=train_cfg.beta)
    best_rec, best_state = None, None
    for epoch in range(train_cfg.epochs):
        batch_losses = []
        for idx in _epoch_batches(n, train_cfg.batch_size, rng):
            xb, yb = thetas[idx], y[idx]
            h1 = np.tanh(xb @ W1.T + b1)
            h2 = np.tanh(h1 @ W2.T + b2)
            loss, gWh, _, dh2, _ = ce_head_gradients(
                h2, Wh, np.zeros(K), yb, train_cfg.beta
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}"
                )
            batch_losses.append(loss)
            dz2 = dh2 * (1 - h2 * h2)
            gW2 = dz2.T @ h1
            gb2 = dz2.sum(axis=0)
            dh1 = dz2 @ W2
            dz1 = dh1 * (1 - h1 * h1)
            gW1 = dz1.T @ xb
            gb1 = dz1.sum(axis=0)
            adam.step(targets, [gW1, gb1, gW2, gb2, gWh])
        history.append(_epoch_record(epoch, batch_losses, mlp, dataset, eval_set))
        if _better_epoch(history[-1], best_rec):
            best_rec = history[-1]
            best_state = [t.copy() for t in targets]
    # keep the best iterate
    if best_state is not None:
        W1, b1, W2, b2, Wh = best_state
        mlp = MlpBaseline(W1=W1, b1=b1, W2=W2, b2=b2, W_head=Wh, beta=train_cfg.beta)
    return mlp, history


def save_model(model, path, seed: int | None = None, atlas_hash: str = "", extra: dict | None = None) -> None:
    """Serialize a VqcModel or MlpBaseline checkpoint to JSON."""
    import json
    from pathlib import Path

    if isinstance(model, VqcModel):
        payload = {
            "kind": "vqc",
            "config": model.config.to_dict(),
            "phi": model.params.phi.tolist(),
            "head": {
                "W": model.head.W.tolist(),
                "b": model.head.b.tolist(),
                "beta": model.head.beta,
            },
        }
    elif isinstance(model, MlpBaseline):
        payload = {
            "kind": "mlp",
            "W1": model.W1.tolist(),
            "b1": model.b1.tolist(),
            "W2": model.W2.tolist(),
            "b2": model.b2.tolist(),
            "W_head": model.W_head.tolist(),
            "beta": model.beta,
            "sigma": model.sigma,
            "activation": model.activation,
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    payload["seed"] = seed
    payload["atlas_hash"] = atlas_hash
    if extra:
        payload["extra"] = extra
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path):
    """Load a checkpoint written by :func:`save_model`."""
    import json
    from pathlib import Path

    d = json.loads(Path(path).read_text())
    if d["kind"] == "vqc":
        model = VqcModel(
            config=CircuitConfig.from_dict(d["config"]),
            params=VqcParams(np.array(d["phi"], dtype=float)),
            head=LinearHead(
                W=np.array(d["head"]["W"], dtype=float),
                b=np.array(d["head"]["b"], dtype=float),
                beta=float(d["head"]["beta"]),
            ),
        )
    elif d["kind"] == "mlp":
        model = MlpBaseline(
            W1=np.array(d["W1"], dtype=float),
            b1=np.array(d["b1"], dtype=float),
            W2=np.array(d["W2"], dtype=float),
            b2=np.array(d["b2"], dtype=float),
            W_head=np.array(d["W_head"], dtype=float),
            beta=float(d["beta"]),
            sigma=float(d["sigma"]),
            activation=d.get("activation", "tanh"),
        )
    else:
        raise ValueError(f"unknown checkpoint kind {d.get('kind')!r}")
    return model, d


def argmax_accuracy(model, thetas: np.ndarray, labels: np.ndarray, gamma: float = 0.0) -> float:
    logits = model.logit_matrix(np.asarray(thetas, dtype=float), gamma)
    pred = np.argmax(logits, axis=1) + 1
    return float(np.mean(pred == np.asarray(labels, dtype=int)))


def margin_from_logits(s: np.ndarray, k_star: int) -> float:
    """s_{k*} - max over competitors; 1-based k_star."""
    s = np.asarray(s, dtype=float)
    rival = np.delete(s, k_star - 1)
    return float(s[k_star - 1] - np.max(rival))


def margin(model, atlas: RegionAtlas, theta: np.ndarray, gamma: float = 0.0) -> float:
    """Logit margin of the true region at theta (negative if misclassified)."""
    theta = np.asarray(theta, dtype=float)
    k_star = locate_region(atlas, theta)
    s = model.logit_matrix(theta[None, :], gamma)[0]
    return margin_from_logits(s, k_star)


def calibrate_sigma(
    mlp: MlpBaseline,
    target_eps95: float,
    adjacency,
    beta: float | None = None,
    n_draws: int = 2000,
    rel_tol: float = 0.05,
    max_iter: int = 40,
) -> float:
    """Bisect the Gaussian logit-noise scale until eps95 matches the target.

    The epsilon of the stochastic mechanism is measured on Monte-Carlo
    averaged output distributions with common random numbers, so the
    search is deterministic.  Returns 0 when even the noise-free model
    already meets the target.
    """
    from qpopf.privacy import MlpAveragedMechanism, audit_mechanism, draw_adjacent_pairs

    beta = mlp.beta if beta is None else beta
    m = mlp.W1.shape[1]
    pairs = draw_adjacent_pairs(adjacency, m)

    def eps95_at(sigma: float) -> float:
        mech = MlpAveragedMechanism(
            mlp, sigma=sigma, beta=beta, n_draws=n_draws, seed=adjacency.seed + 7919
        )
        return audit_mechanism(mech, pairs).eps95

    base = eps95_at(0.0)
    if base <= target_eps95:
        return 0.0

    lo, hi = 0.0, 1.0
    for _ in range(30):
        if eps95_at(hi) <= target_eps95:
            break
        lo, hi = hi, hi * 3.0
    else:
        raise RuntimeError("could not bracket the target eps95")

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = eps95_at(mid)
        if abs(val - target_eps95) <= rel_tol * target_eps95:
            return mid
        if val > target_eps95:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
