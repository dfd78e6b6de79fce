"""Self-checks against independent oracles, grouped into suites.

Each check returns a :class:`Check`; ``run_suite`` collects them. The ``all``
suite runs every check in every suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from itertools import product

import numpy as np

from . import tensor as T
from .fft import causal_conv, fft_real, ifft_real
from .losses import PseudoSplit, boundary_loss, contrastive_loss, pseudo_boundary, split_costs
from .metrics import ScenePartition, auc_roc, average_precision, f1_from_counts, miou_boundaries
from .model import ModelConfig, TranS4mer
from .nn import LayerNorm, Linear, MLP, MultiHeadAttention
from .ssm import GatedS4, SsmParams, discretize, materialize_kernel, scan_recurrence, ssm_kernel
from .tensor import Tensor

KERNEL_LENGTHS = (1, 2, 17, 64, 256)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f}s)"


# -- oracles ----------------------------------------------------------------------

def random_ssm(rng: np.random.Generator, d_model: int = 2, state_size: int = 8) -> SsmParams:
    """Arbitrary stable parameters (not the structured initialization)."""
    h = state_size // 2
    shape = (d_model, h)
    return SsmParams(
        a_re=-rng.uniform(0.01, 1.0, shape),
        a_im=rng.uniform(-10.0, 10.0, shape),
        b_re=rng.standard_normal(shape), b_im=rng.standard_normal(shape),
        c_re=rng.standard_normal(shape) / np.sqrt(h), c_im=rng.standard_normal(shape) / np.sqrt(h),
        d=rng.standard_normal(d_model),
        log_dt=rng.uniform(np.log(1e-3), np.log(1e-1), d_model),
    )


def kernel_path(p: SsmParams, x: np.ndarray) -> np.ndarray:
    """Materialize the kernel and convolve through the FFT path."""
    with T.no_grad():
        k = ssm_kernel(p, x.shape[0]).data
        y = causal_conv(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64)).data
    return y + p.d.data * x


def ap_bruteforce(scores, labels) -> float:
    """AP from the definition: precision at each positive's rank, ties by index."""
    s = list(scores)
    y = list(labels)
    n = len(s)
    # rank of i = number of items strictly ahead of it under (score desc, index asc)
    rank = [sum(1 for j in range(n) if s[j] > s[i] or (s[j] == s[i] and j < i)) for i in range(n)]
    total = 0.0
    for i in range(n):
        if y[i]:
            ahead = sum(1 for j in range(n) if y[j] and rank[j] <= rank[i])
            total += ahead / (rank[i] + 1)
    return total / sum(y)


def auc_bruteforce(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    won = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return won / (len(pos) * len(neg))


def pseudo_boundary_bruteforce(feats) -> int:
    """Loop-only evaluation of the split cost, independent of :func:`split_costs`."""
    f = [np.asarray(v, dtype=np.float64) for v in feats]

    def cos(a, b):
        return float(a @ b) / (math.sqrt(float(a @ a)) * math.sqrt(float(b @ b)))

    best, best_i = math.inf, 0
    for i in range(len(f) - 1):
        cost = 0.0
        for seg in (f[: i + 1], f[i + 1:]):
            mu = sum(v / math.sqrt(float(v @ v)) for v in seg) / len(seg)
            cost += sum(1.0 - cos(v, mu) for v in seg)
        if cost < best - 1e-12:
            best, best_i = cost, i
    return best_i


def gradcheck(fn, tensors: list[Tensor], eps: float = 1e-6, probes: int = 6,
              rng: np.random.Generator | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` maps nothing to a scalar Tensor built from ``tensors``. For every
    tensor the entry with the largest analytic gradient and ``probes - 1``
    random entries are probed. Errors are relative to the larger of the two
    estimates, floored at 1e-3 of the tensor's largest gradient entry so that
    entries whose true gradient is zero are not judged on roundoff alone.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    T.backward(fn())
    worst = 0.0
    for t in tensors:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = [int(np.argmax(np.abs(g)))] + list(rng.integers(0, t.size, probes - 1))
        floor = max(1e-7, 1e-3 * float(np.max(np.abs(g), initial=0.0)))
        for f in flat:
            idx = np.unravel_index(f, t.shape)
            old = t.data[idx]
            t.data[idx] = old + eps
            with T.no_grad():
                up = fn().item()
            t.data[idx] = old - eps
            with T.no_grad():
                down = fn().item()
            t.data[idx] = old
            num = (up - down) / (2 * eps)
            scale = max(abs(num), abs(g[idx]), floor)
            worst = max(worst, abs(num - g[idx]) / scale)
    return worst


def tiny_config(**kw) -> ModelConfig:
    base = dict(n_shots=5, k_frames=2, height=16, width=16, patch=8, dim=8, blocks=2, heads=2, state_size=8)
    base.update(kw)
    return ModelConfig(**base)


# -- suites -------------------------------------------------------------------------

def _timed(name, fn) -> Check:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing oracle is a failed check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return Check(name, bool(passed), detail, time.perf_counter() - t0)


def check_kernel_recurrence(n_params: int = 100, lengths=KERNEL_LENGTHS, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    with T.default_dtype(np.float64):
        for _ in range(n_params):
            p = random_ssm(rng)
            for L in lengths:
                x = rng.standard_normal((L, p.d_model))
                y_fft = kernel_path(p, x)
                y_rec = scan_recurrence(discretize(p), x)
                worst = max(worst, float(np.max(np.abs(y_fft - y_rec))))
    return worst < 1e-8, f"max |fft - recurrence| = {worst:.2e} over {n_params} params x L in {list(lengths)}"


def check_kernel_closed_form():
    # one real mode: a_bar = 0.5, b_bar = 1, c = 1 -> k = 0.5^t
    from .ssm import DiscreteSsm
    dssm = DiscreteSsm(np.array([0.5]), np.array([1.0]), np.array([1.0]), 0.0, conjugate=False)
    k = materialize_kernel(dssm, 4)
    ok = np.allclose(k, [1.0, 0.5, 0.25, 0.125], atol=1e-15)
    return ok, f"kernel {np.round(k, 6).tolist()}"


def check_fft_roundtrip(seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (1, 2, 8, 64, 512):
        x = rng.standard_normal((3, n))
        worst = max(worst, float(np.max(np.abs(fft_real(x) - np.fft.fft(x)))))
        worst = max(worst, float(np.max(np.abs(ifft_real(fft_real(x)) - x))))
    return worst < 1e-9, f"max error vs numpy.fft and round trip = {worst:.2e}"


def check_causal_conv(seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for L in (1, 5, 33):
        x = rng.standard_normal((2, L, 3))
        k = rng.standard_normal((3, L))
        direct = np.zeros_like(x)
        for t, s in product(range(L), range(L)):
            if s <= t:
                direct[:, t] += k[:, s] * x[:, t - s]
        with T.no_grad():
            y = causal_conv(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64)).data
        worst = max(worst, float(np.max(np.abs(y - direct))))
    return worst < 1e-10, f"max |fft conv - direct sum| = {worst:.2e}"


def _grad_layers(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 6, 8)))
    lin, ln, mlp = Linear(8, 8, rng), LayerNorm(8), MLP(8, rng)
    attn, gs4 = MultiHeadAttention(8, 2, rng), GatedS4(8, 8, rng, bidirectional=True)
    w = rng.standard_normal((2, 6, 8))

    def probe(mod):
        return lambda: (mod(x) * Tensor(w)).sum()

    ssm = random_ssm(rng, 3, 8)
    wk = rng.standard_normal((3, 20))
    return {
        "linear": (probe(lin), [x] + lin.parameters()),
        "layer_norm": (probe(ln), [x] + ln.parameters()),
        "mlp": (probe(mlp), [x] + mlp.parameters()),
        "attention": (probe(attn), [x] + attn.parameters()),
        "gated_s4": (probe(gs4), [x] + gs4.parameters()),
        "ssm_kernel": (lambda: (ssm_kernel(ssm, 20) * Tensor(wk)).sum(), ssm.parameters()),
    }


def check_layer_gradients(seed: int = 0):
    out = []
    worst = 0.0
    with T.default_dtype(np.float64):
        for name, (fn, ts) in _grad_layers(seed).items():
            err = gradcheck(fn, ts)
            out.append(f"{name}={err:.1e}")
            worst = max(worst, err)
    return worst < 1e-4, "rel err " + ", ".join(out)


def check_loss_gradients(seed: int = 0):
    rng = np.random.default_rng(seed)
    with T.default_dtype(np.float64):
        r = Tensor(rng.standard_normal((7, 5)))
        ns = Tensor(rng.standard_normal((4, 5)))
        nc = Tensor(rng.standard_normal((3, 5)))
        split = PseudoSplit.at(3, 7)
        e1 = gradcheck(lambda: contrastive_loss(r, split, ns, nc), [r, ns, nc])
        lg = Tensor(rng.standard_normal(7))
        e2 = gradcheck(lambda: boundary_loss(lg, split, 5), [lg])
    worst = max(e1, e2)
    return worst < 1e-4, f"contrastive {e1:.1e}, boundary {e2:.1e}"


def check_end_to_end_gradients(seed: int = 0, variant: str = "GS4"):
    from .losses import finetune_loss
    with T.default_dtype(np.float64):
        cfg = tiny_config(inter_variant=variant)
        model = TranS4mer(cfg, seed=seed)
        x = np.random.default_rng(seed).random((2, cfg.n_shots, cfg.k_frames, 3, cfg.height, cfg.width))

        def fn():
            reprs, logits = model(x)
            return finetune_loss(logits[:, cfg.center], [1, 0], 2.0) + (reprs * reprs).mean()

        err = gradcheck(fn, model.parameters(), probes=2)
    return err < 1e-3, f"{variant} tiny model, worst rel err {err:.1e}"


def check_metric_oracles(n: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        size = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size)
        labels[0], labels[1] = 1, 0
        # coarse scores force ties
        scores = np.round(rng.random(size), int(rng.integers(1, 3)))
        worst = max(worst, abs(average_precision(scores, labels) - ap_bruteforce(scores, labels)),
                    abs(auc_roc(scores, labels) - auc_bruteforce(scores, labels)))
    return worst <= 1e-12, f"max deviation from O(n^2) oracles over {n} instances = {worst:.1e}"


def check_metric_closed_forms():
    cases = [
        average_precision([0.9, 0.1], [1, 0]) == 1.0,
        average_precision([0.9, 0.1], [0, 1]) == 0.5,
        auc_roc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5,
        f1_from_counts(1, 1, 1) == 0.5,
        abs(f1_from_counts(1, 0, 1) - 2 / 3) < 1e-15,
        miou_boundaries(ScenePartition((4,), 10), ScenePartition((4,), 10)) == 1.0,
        abs(miou_boundaries(ScenePartition((), 10), ScenePartition((4,), 10)) - 0.5) < 1e-15,
    ]
    return all(cases), f"{sum(cases)}/{len(cases)} closed forms exact"


def check_loss_closed_forms():
    with T.default_dtype(np.float64):
        r = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]))
        aligned = contrastive_loss(r, PseudoSplit.at(0, 2)).item()
        neg_scene = Tensor(np.array([[-1.0, 0.0]]))
        from .losses import shot_scene_term
        one = shot_scene_term(Tensor(np.array([1.0, 0.0])), Tensor(np.array([3.0, 0.0])), None, neg_scene).item()
        half = boundary_loss(Tensor(np.zeros(4)), PseudoSplit.at(1, 4), 3).item()
    ok = (aligned == 0.0 and abs(one - math.log1p(math.exp(-2))) < 1e-9
          and abs(half - 2 * math.log(2)) < 1e-12)
    return ok, f"aligned={aligned:.3g}, antipodal={one:.9f}, boundary={half:.12f}"


def check_pseudo_boundary(seed: int = 0, n_cases: int = 50):
    rng = np.random.default_rng(seed)
    e = np.eye(2)
    ok = pseudo_boundary(np.array([e[0], e[0], e[0], e[1], e[1]])).i_star == 2
    ok &= pseudo_boundary(np.ones((6, 3))).i_star == 0
    mismatches = 0
    for _ in range(n_cases):
        n = int(rng.integers(2, 34))
        f = rng.standard_normal((n, 4))
        mismatches += pseudo_boundary(f).i_star != pseudo_boundary_bruteforce(f)
        _ = split_costs(f)
    return ok and mismatches == 0, f"{mismatches} mismatches vs brute force in {n_cases} windows"


SUITES = {
    "kernels": [
        ("kernel_vs_recurrence", check_kernel_recurrence),
        ("kernel_closed_form", check_kernel_closed_form),
        ("fft_roundtrip", check_fft_roundtrip),
        ("causal_conv_direct", check_causal_conv),
    ],
    "gradients": [
        ("layer_gradients", check_layer_gradients),
        ("loss_gradients", check_loss_gradients),
        ("end_to_end_gradients", check_end_to_end_gradients),
    ],
    "metrics": [
        ("metric_oracles", check_metric_oracles),
        ("metric_closed_forms", check_metric_closed_forms),
    ],
    "losses": [
        ("loss_closed_forms", check_loss_closed_forms),
        ("pseudo_boundary_bruteforce", check_pseudo_boundary),
    ],
}


def suite_names() -> list[str]:
    return list(SUITES) + ["all"]


def run_suite(name: str) -> list[Check]:
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise ValueError(f"unknown suite {name!r}; expected one of {suite_names()}")
    return [_timed(check_name, fn) for n in names for check_name, fn in SUITES[n]]
