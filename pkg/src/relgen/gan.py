"""Conditional generation of the unknown span given the known span.

The adversarial backend is a feed-forward generator/discriminator pair
playing the usual minimax game, except that the discriminator always sees
the known context concatenated in front of the (real or generated) unknown
block, and the generator loss carries three extra terms:

* a prediction term: MSE between the generated and the real unknown rows,
* a batch-mean term pulling generated column means towards a blend of the
  batch mean and the global table mean,
* a correlation term: mean absolute error between adjusted correlation
  coefficients of the generated batch and a blended batch/global reference,
  restricted to pairs that involve at least one unknown dimension, do not
  originate from the same source column, and have reference magnitude above
  a threshold.

A deterministic ridge backend (per-dimension ridge regression plus
bootstrapped training residuals) sits behind the same interface for fast
test profiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

# Fixed thread count keeps CPU reductions bit-reproducible across runs.
torch.set_num_threads(1)


class GeneratorError(RuntimeError):
    pass


class EmptyBatch(GeneratorError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 256
    lr: float = 2e-4
    noise_dim: int = 128
    hidden: int = 256
    alpha: float = 0.5
    corr_threshold: float = 0.5
    mse_weight: float = 1.0
    # heavy batch-mean term: on desk-scale tables the discriminator memorizes
    # quickly and a weight of 1 lets marginals collapse late in training
    mean_weight: float = 20.0
    corr_weight: float = 0.1
    seed: int = 0
    backend: str = "adversarial"  # or "ridge"
    sample_mode: str = "sample"  # or "argmax"
    gumbel_tau: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= self.corr_threshold <= 1.0:
            raise ValueError("corr_threshold must be in [0, 1]")


@dataclass
class LossReport:
    adversarial: list = field(default_factory=list)
    prediction: list = field(default_factory=list)
    mean: list = field(default_factory=list)
    correlation: list = field(default_factory=list)
    discriminator: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def mean_loss(gen_batch, real_batch, global_mean, alpha):
    """MSE between generated column means and the alpha-blend of batch and
    global means, over the unknown span."""
    if gen_batch.shape[0] == 0 or real_batch.shape[0] == 0:
        raise EmptyBatch("mean loss needs at least one row per batch")
    if gen_batch.shape[1] != real_batch.shape[1]:
        raise GeneratorError("generated and real batches differ in width")
    target = alpha * real_batch.mean(dim=0) + (1.0 - alpha) * global_mean
    return ((gen_batch.mean(dim=0) - target) ** 2).mean()


def adjusted_correlation(x):
    """Pairwise adjusted correlation matrix of the columns of ``x``.

    The plain coefficient R is shrunk for sample size as
    sign(R) * sqrt(max(0, 1 - (1 - R^2) (n - 1) / (n - 2))); pairs touching
    a constant column come out NaN (zero division), which callers filter.

    Division and square roots are guarded so that the backward pass through
    masked-out entries stays finite: an unguarded 0/0 or sqrt(0) would leak
    NaN into the gradients of perfectly valid entries.
    """
    n = x.shape[0]
    if n < 3:
        raise GeneratorError("adjusted correlation needs at least 3 rows")
    xc = x - x.mean(dim=0, keepdim=True)
    var = (xc**2).mean(dim=0)
    zero = var.detach() == 0
    invalid = zero[:, None] | zero[None, :]
    sd = torch.sqrt(torch.clamp(var, min=1e-30))
    r = (xc.T @ xc) / n / (sd[:, None] * sd[None, :])
    shrink = 1.0 - (1.0 - r**2) * (n - 1) / (n - 2)
    positive = shrink.detach() > 0
    ra = torch.sign(r) * torch.sqrt(torch.clamp(shrink, min=1e-30))
    ra = torch.where(positive, ra, torch.zeros_like(ra))
    # invalidity is marked only at the end: a NaN fed into earlier ops would
    # corrupt the backward pass of valid entries through 0 * NaN products
    return ra.masked_fill(invalid, float("nan"))


def structural_pair_mask(spans, known_width: int, width: int) -> np.ndarray:
    """Upper-triangle pairs that are structurally eligible for the
    correlation loss: at least one unknown dimension and different source
    columns.  Reference-dependent filtering happens per batch."""
    known = np.zeros(width, dtype=bool)
    col_ids = np.full(width, -1, dtype=np.int64)
    keys: dict = {}
    for s in spans:
        if s.stop <= known_width:
            known[s.start : s.stop] = True
        key = s.column_key
        cid = keys.setdefault(key, len(keys))
        col_ids[s.start : s.stop] = cid
    mask = np.triu(np.ones((width, width), dtype=bool), k=1)
    mask &= ~(known[:, None] & known[None, :])
    mask &= col_ids[:, None] != col_ids[None, :]
    return mask


def correlation_pair_mask(reference, structural: np.ndarray, threshold: float):
    """Final selection: structural pairs whose reference coefficient is
    finite and at least ``threshold`` in absolute value."""
    base = torch.as_tensor(structural, dtype=torch.bool, device=reference.device)
    return base & torch.isfinite(reference) & (reference.abs() >= threshold)


def corr_loss(gen_full, reference, pair_mask):
    """MAE between generated and reference adjusted correlations over the
    selected pairs; pairs whose generated coefficient is NaN are dropped;
    zero when nothing remains."""
    ra = adjusted_correlation(gen_full)
    mask = pair_mask & torch.isfinite(ra)
    if int(mask.sum()) == 0:
        return gen_full.sum() * 0.0
    return (ra[mask] - reference[mask]).abs().mean()


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


def head_layout(unknown_spans, known_width: int):
    """Per-span (start, stop, kind) relative to the unknown block."""
    return tuple(
        (s.start - known_width, s.stop - known_width, s.kind) for s in unknown_spans
    )


def _gumbel_noise(shape, generator=None, eps=1e-20):
    u = torch.rand(shape, generator=generator)
    return -torch.log(-torch.log(u + eps) + eps)


class GeneratorNet(nn.Module):
    """Feed-forward generator with one activation head per span.

    Categorical and mode spans go through a gumbel-softmax: at training time
    the output is a sharp sampled distribution, so the batch-mean and
    correlation losses see actual category frequencies rather than soft
    probabilities a collapsed generator could fake.  Within-mode value dims
    use tanh (the encoder's clamp range).
    """

    def __init__(self, known_width, noise_dim, heads, hidden=256, tau=0.2):
        super().__init__()
        self.known_width = known_width
        self.noise_dim = noise_dim
        self.heads = tuple(heads)
        self.tau = tau
        out_width = max((stop for _, stop, _ in self.heads), default=0)
        self.body = nn.Sequential(
            nn.Linear(known_width + noise_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Linear(hidden, out_width),
        )

    def forward(self, known, z, sample=True, gumbel_rng=None):
        raw = self.body(torch.cat([known, z], dim=1))
        parts = []
        for start, stop, kind in self.heads:
            block = raw[:, start:stop]
            if kind in ("onehot", "mode"):
                if sample:
                    block = block + _gumbel_noise(block.shape, gumbel_rng)
                    parts.append(torch.softmax(block / self.tau, dim=1))
                else:
                    parts.append(torch.softmax(block, dim=1))
            else:
                parts.append(torch.tanh(block))
        return torch.cat(parts, dim=1)


class DiscriminatorNet(nn.Module):
    def __init__(self, width, hidden=256):
        super().__init__()
        self.body = nn.Sequential(
            nn.Linear(width, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, 1),
        )

    def forward(self, x):
        return self.body(x)[:, 0]

    def probability(self, x):
        return torch.sigmoid(self.forward(x))


def discriminator_input(known, unknown):
    """The discriminator always judges the concatenation context | payload."""
    return torch.cat([known, unknown], dim=1)


# ---------------------------------------------------------------------------
# fitted generator (both backends)
# ---------------------------------------------------------------------------

_KIND_CODES = {"onehot": 0, "mode": 1, "value": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class FittedGenerator:
    backend: str
    known_width: int
    unknown_width: int
    heads: tuple  # (start, stop, kind) relative to the unknown block
    config: TrainConfig
    net_state: dict | None = None  # adversarial weights as numpy arrays
    ridge_weights: np.ndarray | None = None
    residual_pool: np.ndarray | None = None

    def generate(self, known: np.ndarray, seed: int) -> np.ndarray:
        known = np.asarray(known, dtype=np.float64)
        if known.ndim != 2 or known.shape[1] != self.known_width:
            raise GeneratorError(
                f"known width {known.shape[1] if known.ndim == 2 else '?'} != "
                f"{self.known_width}"
            )
        if self.backend == "adversarial":
            return self._generate_adversarial(known, seed)
        return self._generate_ridge(known, seed)

    # -- adversarial -----------------------------------------------------

    def _net(self) -> GeneratorNet:
        net = GeneratorNet(
            self.known_width, self.config.noise_dim, self.heads, self.config.hidden
        )
        state = {k: torch.from_numpy(v) for k, v in self.net_state.items()}
        net.load_state_dict(state)
        net.eval()
        return net

    def _generate_adversarial(self, known: np.ndarray, seed: int) -> np.ndarray:
        net = self._net()
        n = known.shape[0]
        gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFF)
        z = torch.randn(n, self.config.noise_dim, generator=gen)
        sample = self.config.sample_mode != "argmax"
        with torch.no_grad():
            out = net(
                torch.from_numpy(known).float(), z, sample=sample, gumbel_rng=gen
            ).double().numpy()
        return self._finalize_spans(out)

    # -- ridge -------------------------------------------------------------

    def _generate_ridge(self, known: np.ndarray, seed: int) -> np.ndarray:
        aug = np.hstack([known, np.ones((known.shape[0], 1))])
        pred = aug @ self.ridge_weights
        pool = self.residual_pool
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x9E3779B9])
        if pool is not None and len(pool):
            pred = pred + pool[rng.integers(0, len(pool), size=pred.shape[0])]
        return self._finalize_spans(pred)

    # -- common ------------------------------------------------------------

    def _finalize_spans(self, out: np.ndarray) -> np.ndarray:
        """Project every span onto its valid set: categorical/mode spans
        become exact one-hot rows (argmax; for the sampled adversarial path
        the argmax recovers the gumbel-sampled category), value dims are
        clamped to the encoder's range."""
        final = out.copy()
        for start, stop, kind in self.heads:
            block = out[:, start:stop]
            if kind in ("onehot", "mode"):
                choice = np.argmax(block, axis=1)
                hard = np.zeros_like(block)
                hard[np.arange(block.shape[0]), choice] = 1.0
                final[:, start:stop] = hard
            else:
                final[:, start:stop] = np.clip(block, -1.0, 1.0)
        return final

    # -- state -------------------------------------------------------------

    def to_arrays(self) -> dict:
        arrays = {
            "heads_start": np.asarray([h[0] for h in self.heads], dtype=np.int64),
            "heads_stop": np.asarray([h[1] for h in self.heads], dtype=np.int64),
            "heads_kind": np.asarray(
                [_KIND_CODES[h[2]] for h in self.heads], dtype=np.int64
            ),
        }
        if self.net_state is not None:
            for k, v in self.net_state.items():
                arrays[f"net.{k}"] = v
        if self.ridge_weights is not None:
            arrays["ridge_weights"] = self.ridge_weights
        if self.residual_pool is not None:
            arrays["residual_pool"] = self.residual_pool
        return arrays

    @classmethod
    def from_arrays(
        cls, arrays: dict, backend: str, known_width: int, unknown_width: int,
        config: TrainConfig,
    ) -> "FittedGenerator":
        heads = tuple(
            (int(a), int(b), _KIND_NAMES[int(k)])
            for a, b, k in zip(
                arrays["heads_start"], arrays["heads_stop"], arrays["heads_kind"]
            )
        )
        net_state = {
            k[len("net.") :]: np.asarray(v)
            for k, v in arrays.items()
            if k.startswith("net.")
        }
        return cls(
            backend=backend,
            known_width=known_width,
            unknown_width=unknown_width,
            heads=heads,
            config=config,
            net_state=net_state or None,
            ridge_weights=arrays.get("ridge_weights"),
            residual_pool=arrays.get("residual_pool"),
        )


def generate_unknown(gen: FittedGenerator, known_rows: np.ndarray, seed: int) -> np.ndarray:
    return gen.generate(known_rows, seed)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _effective_batch(n: int, requested: int) -> int:
    return max(2, min(requested, max(8, n // 4), n))


def fit_generator(ext, config: TrainConfig):
    """Fit the configured backend on an extended table; returns the fitted
    generator and the per-step loss history."""
    known = np.asarray(ext.known_matrix, dtype=np.float64)
    unknown = np.asarray(ext.unknown_matrix, dtype=np.float64)
    spans = ext.encoded.spans
    known_width = ext.known_width
    if unknown.shape[1] == 0:
        raise GeneratorError("extended table has an empty unknown span")
    heads = head_layout(
        [s for s in spans if s.start >= known_width], known_width
    )
    if config.backend == "ridge":
        return _fit_ridge(known, unknown, heads, config), LossReport()
    return _fit_adversarial(known, unknown, spans, known_width, heads, config)


def _fit_ridge(known, unknown, heads, config) -> FittedGenerator:
    aug = np.hstack([known, np.ones((known.shape[0], 1))])
    lam = 1e-6
    gram = aug.T @ aug + lam * np.eye(aug.shape[1])
    weights = np.linalg.solve(gram, aug.T @ unknown)
    pool = unknown - aug @ weights
    return FittedGenerator(
        backend="ridge",
        known_width=known.shape[1],
        unknown_width=unknown.shape[1],
        heads=heads,
        config=config,
        ridge_weights=weights,
        residual_pool=pool,
    )


def _fit_adversarial(known, unknown, spans, known_width, heads, config):
    n = known.shape[0]
    torch.manual_seed(int(config.seed) & 0x7FFFFFFF)
    rng = np.random.default_rng([int(config.seed) & 0xFFFFFFFF, 0xA5A5])

    known_t = torch.from_numpy(known).float()
    unknown_t = torch.from_numpy(unknown).float()
    full_t = torch.cat([known_t, unknown_t], dim=1)
    global_mean = unknown_t.mean(dim=0)
    width = full_t.shape[1]

    use_corr = config.corr_weight > 0 and n >= 3
    structural = structural_pair_mask(spans, known_width, width)
    global_ra = adjusted_correlation(full_t) if use_corr else None

    gen = GeneratorNet(
        known.shape[1], config.noise_dim, heads, config.hidden, tau=config.gumbel_tau
    )
    disc = DiscriminatorNet(width, config.hidden)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr, betas=(0.5, 0.9))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=(0.5, 0.9))
    bce = nn.BCEWithLogitsLoss()
    # without context the task is plain unconditional generation and there is
    # no predictive relation for the MSE term to capture
    conditioned = known.shape[1] > 0

    report = LossReport()
    bs = _effective_batch(n, config.batch_size)
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo : lo + bs]
            if len(idx) < 2:
                continue
            kb, ub = known_t[idx], unknown_t[idx]
            b = len(idx)

            # discriminator step
            z = torch.randn(b, config.noise_dim)
            fake = gen(kb, z).detach()
            logits_real = disc(discriminator_input(kb, ub))
            logits_fake = disc(discriminator_input(kb, fake))
            d_loss = bce(logits_real, torch.ones(b)) + bce(logits_fake, torch.zeros(b))
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            # generator step
            z = torch.randn(b, config.noise_dim)
            fake = gen(kb, z)
            adv = bce(disc(discriminator_input(kb, fake)), torch.ones(b))
            pred = ((fake - ub) ** 2).mean() if conditioned else torch.zeros(())
            meanl = mean_loss(fake, ub, global_mean, config.alpha)
            if use_corr and b >= 3:
                batch_ra = adjusted_correlation(torch.cat([kb, ub], dim=1))
                reference = config.alpha * batch_ra + (1 - config.alpha) * global_ra
                pair_mask = correlation_pair_mask(
                    reference, structural, config.corr_threshold
                )
                corrl = corr_loss(torch.cat([kb, fake], dim=1), reference, pair_mask)
            else:
                corrl = torch.zeros(())
            g_loss = (
                adv
                + config.mse_weight * pred
                + config.mean_weight * meanl
                + config.corr_weight * corrl
            )
            if not torch.isfinite(g_loss):
                raise GeneratorError(
                    "non-finite generator loss: "
                    f"adv={float(adv.detach())} pred={float(pred.detach())} "
                    f"mean={float(meanl.detach())} corr={float(corrl.detach())}"
                )
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()

            report.adversarial.append(float(adv.detach()))
            report.prediction.append(float(pred.detach()))
            report.mean.append(float(meanl.detach()))
            report.correlation.append(float(corrl.detach()))
            report.discriminator.append(float(d_loss.detach()))

    state = {k: v.detach().numpy().copy() for k, v in gen.state_dict().items()}
    fitted = FittedGenerator(
        backend="adversarial",
        known_width=known.shape[1],
        unknown_width=unknown.shape[1],
        heads=heads,
        config=config,
        net_state=state,
    )
    return fitted, report
