"""Concept similarity and the alignment / total objectives."""

from __future__ import annotations

import torch

SIM_MODES = ("rowwise", "flat")


def sim(a: torch.Tensor, b: torch.Tensor, mode: str = "rowwise", eps: float = 1e-12) -> torch.Tensor:
    """Similarity of concept sets ``(..., l_C, d_h)``.

    ``rowwise``: mean over concept index of the per-row cosine.
    ``flat``: cosine of the flattened sets. Zero vectors score 0.
    """
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(f"concept shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if mode == "flat":
        a = a.flatten(-2)[..., None, :]
        b = b.flatten(-2)[..., None, :]
    elif mode != "rowwise":
        raise ValueError(f"unknown similarity mode {mode!r}")
    dot = (a * b).sum(-1)
    norms = (a.norm(dim=-1) * b.norm(dim=-1)).clamp_min(eps)
    return (dot / norms).mean(-1)


def cma_loss(c_optimal, c_negative, c_whole, c_query, alpha3: float = 0.1, alpha4: float = 0.2,
             mode: str = "rowwise", sim_negative=None, has_negative=None):
    """Hinges on concept similarity plus MSE between optimal-anchor and query concepts.

    ``c_negative`` is a list of negative concept sets; an empty list drops
    the first hinge. Batched callers pass the precomputed mean negative
    similarity as ``sim_negative`` and a boolean ``has_negative`` mask.
    """
    s_opt = sim(c_optimal, c_query, mode)
    s_whole = sim(c_whole, c_query, mode)
    if sim_negative is None and c_negative:
        sim_negative = torch.stack([sim(c, c_query, mode) for c in c_negative]).mean(0)
    loss = torch.zeros_like(s_opt)
    if sim_negative is not None:
        neg = torch.relu(sim_negative - s_opt + alpha3)
        if has_negative is not None:
            neg = torch.where(torch.as_tensor(has_negative), neg, torch.zeros_like(neg))
        loss = loss + neg
    loss = loss + torch.relu(s_whole - s_opt + alpha4)
    return loss + ((c_optimal - c_query) ** 2).mean(dim=(-2, -1))


def total_loss(conc, cma, rec, pcl, beta1: float = 1.0, beta2: float = 1.0):
    return conc + cma + beta1 * rec + beta2 * pcl
