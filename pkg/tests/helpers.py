"""Central finite-difference oracle (no autograd involved)."""

import torch


def numeric_grad(f, param, h=1e-6):
    """Entry-wise central differences of the scalar ``f()`` w.r.t. ``param``."""
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    out = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            fp = float(f())
            flat[i] = old - h
            fm = float(f())
            flat[i] = old
            out[i] = (fp - fm) / (2 * h)
    return grad


def directional_derivative(f, params, directions, h=1e-6):
    """``(f(p + h u) - f(p - h u)) / 2h`` for a joint perturbation of ``params``."""
    with torch.no_grad():
        for p, u in zip(params, directions):
            p.add_(h * u)
        fp = float(f())
        for p, u in zip(params, directions):
            p.sub_(2 * h * u)
        fm = float(f())
        for p, u in zip(params, directions):
            p.add_(h * u)
    return (fp - fm) / (2 * h)


def smooth_directional_derivative(f, params, directions, steps=(1e-6, 1e-7, 1e-8), agree=1e-4):
    """Central difference at the first step whose stencil holds no kink.

    A ReLU or hinge kink inside ``[-h, h]`` shows up as disagreement between
    the forward and backward one-sided differences; the step is then shrunk.
    Falls back to the last step.
    """
    with torch.no_grad():
        f0 = float(f())
        for h in steps:
            for p, u in zip(params, directions):
                p.add_(h * u)
            fp = float(f())
            for p, u in zip(params, directions):
                p.sub_(2 * h * u)
            fm = float(f())
            for p, u in zip(params, directions):
                p.add_(h * u)
            fwd, bwd = (fp - f0) / h, (f0 - fm) / h
            if abs(fwd - bwd) <= agree * max(abs(fwd), abs(bwd), 1e-8):
                break
    return (fp - fm) / (2 * h)


def relative_error(analytic, numeric, floor=1e-10):
    """Max abs deviation scaled by the larger of the two max magnitudes."""
    analytic = torch.as_tensor(analytic, dtype=torch.float64)
    numeric = torch.as_tensor(numeric, dtype=torch.float64)
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), floor)
    return (analytic - numeric).abs().max().item() / scale


def analytic_grads(loss_fn, params):
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]


# -- per-layer sweep --------------------------------------------------------

LAYER_KINDS = ("linear", "mlp3", "softmax", "layer_norm", "attention", "reweighted_attention",
               "feed_forward", "encoder_layer", "decoder_layer", "concept_mlp")


def make_layer_case(kind, seed):
    """Random small instance of one layer type.

    Returns ``(tensors, loss_fn)``: every tensor (parameters and inputs)
    requires grad, and ``loss_fn()`` is a generic scalar
    ``sum(output * R)`` with a fixed random ``R``.
    """
    from cfmr import kernel
    from cfmr.encoders import ConceptMLP

    g = kernel.make_generator(seed)
    gen = torch.Generator().manual_seed(seed + 10_000)

    def rnd(*shape, positive=False):
        t = torch.randn(*shape, generator=gen, dtype=torch.float64)
        return t.abs() + 0.1 if positive else t

    heads = int(torch.randint(1, 3, (1,), generator=gen))
    d = heads * int(torch.randint(2, 4, (1,), generator=gen))
    t = int(torch.randint(1, 4, (1,), generator=gen))
    x = rnd(t, d).requires_grad_()
    extra = []
    if kind == "linear":
        m = kernel.Linear(d, d + 1, g)
        fn = lambda: m(x)
    elif kind == "mlp3":
        l1, l2, l3 = kernel.Linear(d, 5, g), kernel.Linear(5, 4, g), kernel.Linear(4, 2, g)
        m = torch.nn.ModuleList([l1, l2, l3])
        fn = lambda: l3(torch.relu(l2(torch.relu(l1(x)))))
    elif kind == "softmax":
        m = torch.nn.Module()
        fn = lambda: kernel.softmax_rows(x)
    elif kind == "layer_norm":
        m = kernel.layer_norm(d)
        with torch.no_grad():
            m.weight.copy_(rnd(d))
            m.bias.copy_(rnd(d))
        fn = lambda: m(x)
    elif kind in ("attention", "reweighted_attention"):
        m = kernel.MultiHeadAttention(d, heads, g)
        ctx = rnd(t + 1, d).requires_grad_()
        extra.append(ctx)
        if kind == "reweighted_attention":
            w = rnd(t + 1, positive=True).requires_grad_()
            extra.append(w)
            fn = lambda: m(x, context=ctx, row_weights=w)
        else:
            fn = lambda: m(x, context=ctx)
    elif kind == "feed_forward":
        m = kernel.FeedForward(d, 2 * d, g)
        fn = lambda: m(x)
    elif kind == "encoder_layer":
        m = kernel.EncoderLayer(d, heads, 2 * d, g)
        w = rnd(t, positive=True)
        fn = lambda: m(x, row_weights=w)
    elif kind == "decoder_layer":
        m = kernel.DecoderLayer(d, heads, 2 * d, g)
        mem = rnd(2, d).requires_grad_()
        extra.append(mem)
        fn = lambda: m(x, mem)
    elif kind == "concept_mlp":
        m = ConceptMLP(d, 2, g)
        fn = lambda: m(x)
    else:
        raise ValueError(kind)
    # zero-initialised biases can pin ReLU inputs exactly on the kink
    with torch.no_grad():
        for name, p in m.named_parameters():
            if name.endswith("bias"):
                p.copy_(rnd(*p.shape))
    r = rnd(*fn().shape)
    tensors = [*m.parameters(), x, *extra]
    return tensors, lambda: (fn() * r).sum()


def layer_gradient_error(kind, seed, h=1e-5):
    tensors, loss_fn = make_layer_case(kind, seed)
    grads = analytic_grads(loss_fn, tensors)
    # judged over the joint gradient: some entries (e.g. key bias under softmax
    # shift invariance) are exactly zero and would otherwise be compared with noise
    numeric = [numeric_grad(loss_fn, p, h) for p in tensors]
    return relative_error(torch.cat([a.reshape(-1) for a in grads]),
                          torch.cat([n.reshape(-1) for n in numeric]))


# -- end-to-end L_total -----------------------------------------------------

def tiny_encoder_config(seed=3):
    from cfmr.encoders import EncoderConfig
    return EncoderConfig(hidden_dim=8, layers=1, heads=2, max_video_len=6, max_query_len=4,
                         n_concepts=2, video_dim=3, text_dim=8, vocab_size=12, seed=seed)


def e2e_case(seed, batch_size=3):
    """Tiny model, random point batch and a deterministic ``L_total`` closure."""
    import numpy as np
    from cfmr.model import ConceptModel
    from cfmr.training import TrainConfig, batch_losses
    from conftest import random_point_samples

    enc = tiny_encoder_config(seed)
    cfg = TrainConfig(encoder=enc, v_max=0.5, seed=seed)
    model = ConceptModel(enc)
    gen = torch.Generator().manual_seed(seed + 20_000)
    with torch.no_grad():
        # zero biases under a dead ReLU row give all-zero concepts, where cosine is singular
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    batch = random_point_samples(enc, batch_size, seed=seed)
    params = list(model.parameters())
    # a fresh generator per call keeps the masking identical across evaluations
    return params, lambda: batch_losses(model, batch, cfg, np.random.default_rng(seed))["total"]


def e2e_directional_error(seed, per_tensor=False):
    """Relative error between ``grad . u`` and the central difference along ``u``.

    One random direction over all parameters, or with ``per_tensor`` one
    direction per parameter tensor (worst case returned).
    """
    params, loss_fn = e2e_case(seed)
    grads = analytic_grads(loss_fn, params)
    gen = torch.Generator().manual_seed(seed + 777)
    dirs = [torch.randn(p.shape, generator=gen, dtype=torch.float64) for p in params]
    if not per_tensor:
        analytic = sum((g * u).sum().item() for g, u in zip(grads, dirs))
        numeric = smooth_directional_derivative(loss_fn, params, dirs)
        return relative_error(analytic, numeric)
    worst = 0.0
    scale = max(g.abs().max().item() for g in grads)
    for p, g, u in zip(params, grads, dirs):
        numeric = smooth_directional_derivative(loss_fn, [p], [u])
        # tensors whose true gradient is exactly zero are judged on the global scale
        worst = max(worst, relative_error((g * u).sum().item(), numeric, floor=scale))
    return worst


def e2e_entrywise_error(seed, h=1e-6):
    params, loss_fn = e2e_case(seed)
    grads = analytic_grads(loss_fn, params)
    numeric = [numeric_grad(loss_fn, p, h) for p in params]
    return relative_error(torch.cat([g.reshape(-1) for g in grads]),
                          torch.cat([n.reshape(-1) for n in numeric]))


# -- recall oracle ------------------------------------------------------------

def recall_oracle(predictions, truths, k, m):
    # independent nested-loop evaluation
    hits = 0
    for preds, (ts, te) in zip(predictions, truths):
        found = False
        for rank, (ps, pe) in enumerate(preds):
            if rank >= k:
                break
            inter = min(pe, te) - max(ps, ts)
            if inter <= 0:
                continue
            union = max(pe, te) - min(ps, ts)
            if inter / union >= m:
                found = True
        hits += found
    return hits / len(truths)


def random_recall_case(rng):
    n = rng.randint(1, 6)
    truths, preds = [], []
    for _ in range(n):
        # integer grid endpoints make exact IoU ties with m likely
        s = rng.randint(0, 9)
        truths.append((float(s), float(rng.randint(s + 1, 10))))
        lst = []
        for _ in range(rng.randint(0, 7)):
            a = rng.randint(0, 9)
            lst.append((float(a), float(rng.randint(a + 1, 10))))
        preds.append(lst)
    return preds, truths, rng.randint(1, 6), rng.choice([0.1, 0.3, 0.5, 0.7, 0.9, 1.0])


# roughly 3M parameters, the size reported for the Charades model
def _reference_scale():
    from cfmr.encoders import EncoderConfig
    return EncoderConfig(hidden_dim=192, layers=2, heads=8, max_video_len=200, max_query_len=20,
                         n_concepts=7, video_dim=1024, text_dim=300, vocab_size=1200,
                         ff_mult=2, decoder_layers=1)


REFERENCE_SCALE = _reference_scale()
