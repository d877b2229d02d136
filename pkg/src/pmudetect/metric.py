"""Structured metric learning over user profile vectors.

A profile vector concatenates a user's latent factor block (length p) with
the gap vector block (length k).  Distances are quadratic forms d(x, y) =
sqrt((x' - y')^T c^2 A (x' - y')) where x' = t(x) * x rescales each
coordinate by an attention weight t(x) = softmax(x^T W_t A).

Four shapes of A are supported:
  E  scalar multiple of the identity
  D  diagonal
  F  dense
  R  identity on the factor block, dense gap block, dense cross blocks

Training pulls candidate pairs together and pushes candidate/non-candidate
pairs apart with a hinged triplet loss, using per-parameter adaptive
gradient steps and periodic projection of A back onto the positive
semidefinite cone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SamplingError, TrainingError

FORMS = ("E", "D", "F", "R")


@dataclass
class ProfileVector:
    user_id: int
    z: np.ndarray


def profile_vector(p_u: np.ndarray, g_hat: np.ndarray, user_id: int = -1,
                   p: int | None = None, k: int | None = None) -> ProfileVector:
    """Concatenate the factor block and the gap block."""
    p_u = np.asarray(p_u, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    if p is not None and p_u.shape != (p,):
        raise ConfigError(f"factor block has length {p_u.shape}, expected {p}")
    if k is not None and g_hat.shape != (k,):
        raise ConfigError(f"gap block has length {g_hat.shape}, expected {k}")
    return ProfileVector(user_id, np.concatenate([p_u, g_hat]))


@dataclass
class MetricModel:
    form: str
    A: np.ndarray               # (p+k) x (p+k)
    W_t: np.ndarray             # (p+k) x (p+k) attention weights
    c: float
    lam: float
    p: int
    k: int
    attention: bool = True
    loss_history: list[float] = field(default_factory=list)
    val_loss_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.p + self.k

    def trainable_mask(self) -> np.ndarray:
        """Boolean mask of A entries that receive gradient updates."""
        D = self.dim
        mask = np.zeros((D, D), dtype=bool)
        if self.form == "E":
            mask[np.diag_indices(D)] = True   # tied to one scalar
        elif self.form == "D":
            mask[np.diag_indices(D)] = True
        elif self.form == "F":
            mask[:, :] = True
        elif self.form == "R":
            mask[self.p:, :] = True
            mask[:, self.p:] = True           # factor block stays identity
        return mask

    def parameter_count(self) -> int:
        """Free parameters of the metric shape."""
        D = self.dim
        if self.form == "E":
            return 1
        if self.form == "D":
            return D
        if self.form == "F":
            return D * D
        return self.p + self.k * self.k + 2 * self.p * self.k

    def save(self, path):
        np.savez(path, form=np.array([self.form]), A=self.A, W_t=self.W_t,
                 c=np.array([self.c]), lam=np.array([self.lam]),
                 p=np.array([self.p]), k=np.array([self.k]),
                 attention=np.array([int(self.attention)]))

    @classmethod
    def load(cls, path) -> "MetricModel":
        blob = np.load(path)
        return cls(form=str(blob["form"][0]), A=blob["A"], W_t=blob["W_t"],
                   c=float(blob["c"][0]), lam=float(blob["lam"][0]),
                   p=int(blob["p"][0]), k=int(blob["k"][0]),
                   attention=bool(int(blob["attention"][0])))

    def eigenvalues_csv(self, path):
        """Dump the eigenvalues of the symmetrized metric for audit."""
        vals = np.linalg.eigvalsh(0.5 * (self.A + self.A.T))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("index,eigenvalue\n")
            for j, v in enumerate(vals):
                fh.write(f"{j},{v:.12g}\n")


def init_metric(form: str, p: int, k: int, seed: int = 0, c: float = 1.0,
                lam: float = 0.6, attention: bool = True) -> MetricModel:
    """Fresh metric of the requested shape.

    E and D start as the identity metric; F starts dense with N(0,1)/sqrt(D)
    entries; R starts with an identity factor block, N(0,1) gap block and
    zero cross blocks so that the initial factor-block distance is exactly
    Euclidean.  W_t starts near zero, which makes attention uniform.
    """
    if form not in FORMS:
        raise ConfigError(f"unknown metric form {form!r}")
    rng = np.random.default_rng(seed)
    D = p + k
    if form in ("E", "D"):
        A = np.eye(D)
    elif form == "F":
        A = rng.standard_normal((D, D)) / np.sqrt(D)
    else:
        A = np.zeros((D, D))
        A[:p, :p] = np.eye(p)
        A[p:, p:] = rng.standard_normal((k, k))
    W_t = rng.uniform(-0.01, 0.01, size=(D, D))
    return MetricModel(form, A, W_t, c, lam, p, k, attention)


def attention_vector(z: np.ndarray, A: np.ndarray, W_t: np.ndarray) -> np.ndarray:
    """Coordinate weights softmax(z^T W_t A); a probability vector."""
    z = np.asarray(z, dtype=float)
    f = (z @ W_t) @ A
    f = f - f.max()
    e = np.exp(f)
    return e / e.sum()


def _weights(model: MetricModel, z: np.ndarray) -> np.ndarray:
    if model.attention:
        return attention_vector(z, model.A, model.W_t)
    return np.ones_like(z)


def distance(z_j: np.ndarray, z_k: np.ndarray, model: MetricModel) -> float:
    """Metric distance between two profile vectors (>= 0)."""
    t_j = _weights(model, z_j)
    t_k = _weights(model, z_k)
    delta = t_j * z_j - t_k * z_k
    q = model.c ** 2 * float(delta @ model.A @ delta)
    return float(np.sqrt(max(q, 0.0)))


def distances_to(model: MetricModel, Z: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Distance from every row of Z to one fixed vector."""
    return np.array([distance(z, center, model) for z in Z])


def _distance_with_grads(z_j, z_k, model: MetricModel):
    """Distance plus gradients w.r.t. A and W_t, attention path included."""
    A, W_t, c = model.A, model.W_t, model.c
    if model.attention:
        u_j = z_j @ W_t
        u_k = z_k @ W_t
        f_j = u_j @ A
        f_k = u_k @ A
        t_j = np.exp(f_j - f_j.max())
        t_j /= t_j.sum()
        t_k = np.exp(f_k - f_k.max())
        t_k /= t_k.sum()
    else:
        t_j = np.ones_like(z_j)
        t_k = np.ones_like(z_k)
    delta = t_j * z_j - t_k * z_k
    q = c ** 2 * float(delta @ A @ delta)
    d = np.sqrt(max(q, 0.0))
    if d <= 1e-12:
        zero = np.zeros_like(A)
        return 0.0, zero, np.zeros_like(W_t)

    dq_dA = c ** 2 * np.outer(delta, delta)
    dW = np.zeros_like(W_t)
    if model.attention:
        g_delta = c ** 2 * ((A + A.T) @ delta)
        for z, t, u, sign in ((z_j, t_j, u_j, 1.0), (z_k, t_k, u_k, -1.0)):
            dt = sign * z * g_delta
            df = t * (dt - float(t @ dt))
            dq_dA += np.outer(u, df)
            dW += np.outer(z, A @ df)
    dd = 1.0 / (2.0 * d)
    return d, dq_dA * dd, dW * dd


def sample_triplets(u_cmu: set[int], all_users, per_anchor: int, seed: int
                    ) -> list[tuple[int, int, int]]:
    """Candidate-anchored triplets (anchor, positive, negative).

    Anchors and positives come from the candidate set (distinct), negatives
    from the rest of the population; each candidate anchors per_anchor
    triplets.  Raises SamplingError when the pools are too small.
    """
    cands = sorted(u_cmu)
    others = sorted(set(all_users) - set(u_cmu))
    if len(cands) < 2:
        raise SamplingError(f"need at least 2 candidates, have {len(cands)}")
    if not others:
        raise SamplingError("no non-candidate users to sample from")
    if not (1 <= per_anchor):
        raise ConfigError("per_anchor must be positive")
    rng = np.random.default_rng(seed)
    triplets = []
    for j in cands:
        rest = [x for x in cands if x != j]
        for _ in range(per_anchor):
            k = rest[int(rng.integers(len(rest)))]
            k2 = others[int(rng.integers(len(others)))]
            triplets.append((j, k, k2))
    return triplets


def mlc_loss(triplets, Z: np.ndarray, model: MetricModel) -> float:
    """Hinged triplet loss: sum of max(0, lam*d(j,k) - (1-lam)*d(j,k') + c)."""
    total = 0.0
    for j, k, k2 in triplets:
        term = (model.lam * distance(Z[j], Z[k], model)
                - (1.0 - model.lam) * distance(Z[j], Z[k2], model)
                + model.c)
        total += max(0.0, term)
    return float(total)


def _triplet_grads(model: MetricModel, Z, j, k, k2):
    """Gradient of one hinged triplet term, or None when inactive."""
    d_pos, dA_pos, dW_pos = _distance_with_grads(Z[j], Z[k], model)
    d_neg, dA_neg, dW_neg = _distance_with_grads(Z[j], Z[k2], model)
    term = model.lam * d_pos - (1.0 - model.lam) * d_neg + model.c
    if term <= 0.0:
        return None
    dA = model.lam * dA_pos - (1.0 - model.lam) * dA_neg
    dW = model.lam * dW_pos - (1.0 - model.lam) * dW_neg
    return dA, dW


def psd_project(A: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Symmetrize and clip eigenvalues from below; result is positive definite."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError("psd_project expects a square matrix")
    sym = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def _masked_grad(model: MetricModel, dA: np.ndarray) -> np.ndarray:
    """Zero out gradient entries the form does not expose."""
    return np.where(model.trainable_mask(), dA, 0.0)


def train_mlc(Z: np.ndarray, u_cmu: set[int], model: MetricModel,
              lr: float = 0.05, epochs: int = 100, l2: float = 1e-4,
              seed: int = 0, per_anchor: int = 5,
              project_every: int = 50, val_per_anchor: int = 2) -> MetricModel:
    """Learn A and W_t from candidate-anchored triplets.

    Per-triplet adaptive gradient steps; the E form trains its single scale,
    D its diagonal, R everything outside the frozen identity factor block.
    A is projected back onto the positive semidefinite cone every
    project_every updates and once at the end.  A fixed held-out triplet set
    is monitored every epoch and the best-scoring snapshot of (A, W_t) is
    what training returns, so a late collapse cannot ship.
    """
    m = Z.shape[0]
    all_users = range(m)
    rng = np.random.default_rng(seed)
    accA = np.full_like(model.A, 1e-8)
    accW = np.full_like(model.W_t, 1e-8)
    val = sample_triplets(u_cmu, all_users, val_per_anchor,
                          int(rng.integers(2 ** 62)))
    best_val = mlc_loss(val, Z, model) / len(val)
    best = (model.A.copy(), model.W_t.copy())
    model.loss_history = []
    model.val_loss_history = [best_val]
    updates = 0
    for epoch in range(epochs):
        fit = sample_triplets(u_cmu, all_users, per_anchor,
                              int(rng.integers(2 ** 62)))
        epoch_loss = 0.0
        for j, k, k2 in fit:
            term = (model.lam * distance(Z[j], Z[k], model)
                    - (1.0 - model.lam) * distance(Z[j], Z[k2], model)
                    + model.c)
            epoch_loss += max(0.0, term)
            grads = _triplet_grads(model, Z, j, k, k2)
            if grads is None or lr == 0.0:
                continue
            dA_raw, dW = grads
            dA_raw = dA_raw + 2.0 * l2 * model.A
            if model.form == "E":
                # the whole diagonal is one shared scalar
                g = np.trace(dA_raw)
                accA[0, 0] += g * g
                model.A -= (lr * g / np.sqrt(accA[0, 0])) * np.eye(model.dim)
            else:
                dA = _masked_grad(model, dA_raw)
                accA += dA * dA
                model.A -= lr * dA / np.sqrt(accA)
            if model.attention:
                dW = dW + 2.0 * l2 * model.W_t
                accW += dW * dW
                model.W_t -= lr * dW / np.sqrt(accW)
            updates += 1
            if project_every and updates % project_every == 0:
                model.A = psd_project(model.A)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"metric loss diverged at epoch {epoch}")
        model.loss_history.append(epoch_loss / max(1, len(fit)))
        val_loss = mlc_loss(val, Z, model) / len(val)
        model.val_loss_history.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = (model.A.copy(), model.W_t.copy())
    model.A, model.W_t = best
    model.A = psd_project(model.A)
    return model
