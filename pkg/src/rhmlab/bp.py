"""Exact sum-product inference on the grammar tree.

The tree is the fixed s-ary topology of the grammar: one variable per node,
one factor per internal node scoring (parent, children-tuple) as 1/m when the
tuple is a production of the parent and 0 otherwise, plus a uniform 1/v root
prior. Given per-leaf likelihood vectors this computes exact conditional
marginals of every node, the exact log evidence, and exact posterior samples —
the Bayes-optimal denoiser for corrupted strings.

Messages are renormalized at every node (posterior masses shrink like
m**-depth otherwise) with the log normalizers accumulated into the evidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corruption import NoiseSpec, leaf_likelihoods
from .grammar import Derivation, RuleSet


class ImpossibleEvidenceError(ValueError):
    """No derivation is compatible with the supplied evidence."""


@dataclass
class BeliefState:
    """Per-level messages and posteriors; index 0 = leaves, depth = root.

    Every row of every array is normalized to sum 1; ``log_evidence`` is the
    log of the summed likelihood of the evidence under the grammar.
    """

    upward: list[np.ndarray]
    downward: list[np.ndarray]
    marginals: list[np.ndarray]
    log_evidence: float


def _check_evidence(rs: RuleSet, lik: np.ndarray) -> np.ndarray:
    p = rs.params
    lik = np.asarray(lik, dtype=np.float64)
    if lik.shape != (p.seq_len, p.vocab_size):
        raise ValueError(f"evidence must have shape {(p.seq_len, p.vocab_size)}")
    if np.any(lik < 0):
        raise ValueError("likelihoods must be nonnegative")
    return lik


def _upward_pass(rs: RuleSet, lik: np.ndarray):
    """Returns (normalized upward messages per level, per-production products
    per level, accumulated log normalizer)."""
    p = rs.params
    norms = lik.sum(axis=1)
    if np.any(norms <= 0):
        raise ImpossibleEvidenceError("a leaf has an all-zero likelihood")
    log_z = float(np.log(norms).sum())
    upward = [lik / norms[:, None]]
    prods_by_level = []
    s, m = p.branching, p.n_synonyms
    for lvl in range(1, p.depth + 1):
        width = p.level_width(lvl)
        child = upward[-1].reshape(width, s, p.vocab_size)
        table = rs.rules_at(lvl)  # (v, m, s)
        # gathered[n, mu, k, i] = message of child i at value table[mu, k, i]
        gathered = child[:, np.arange(s)[None, None, :], table]
        prods = gathered.prod(axis=3)  # (width, v, m)
        up = prods.sum(axis=2) / m
        z = up.sum(axis=1)
        if np.any(z <= 0):
            raise ImpossibleEvidenceError(
                f"evidence admits no grammatical completion at level {lvl}"
            )
        log_z += float(np.log(z).sum())
        upward.append(up / z[:, None])
        prods_by_level.append(prods)
    return upward, prods_by_level, log_z


def bp_marginals(rs: RuleSet, evidence: np.ndarray) -> BeliefState:
    """Exact conditional marginals of every node given leaf likelihoods."""
    p = rs.params
    lik = _check_evidence(rs, evidence)
    upward, _, log_z = _upward_pass(rs, lik)
    v, m, s = p.vocab_size, p.n_synonyms, p.branching

    # Root prior is uniform, so it cancels after normalization; its mass is
    # still part of the evidence.
    log_z += float(np.log(upward[p.depth][0].sum() / v))  # = -log v
    downward: list[np.ndarray | None] = [None] * (p.depth + 1)
    downward[p.depth] = np.full((1, v), 1.0 / v)
    for lvl in range(p.depth, 0, -1):
        width = p.level_width(lvl)
        child = upward[lvl - 1].reshape(width, s, v)
        table = rs.rules_at(lvl)
        gathered = child[:, np.arange(s)[None, None, :], table]
        down_msg = np.empty((width * s, v))
        node_idx = np.arange(width)[:, None, None]
        for i in range(s):
            excl = np.ones((width, v, m))
            for j in range(s):
                if j != i:
                    excl *= gathered[..., j]
            contrib = downward[lvl][:, :, None] * excl / m
            msg = np.zeros((width, v))
            tgt = np.broadcast_to(table[None, :, :, i], contrib.shape)
            np.add.at(msg, (np.broadcast_to(node_idx, contrib.shape), tgt), contrib)
            z = msg.sum(axis=1)
            if np.any(z <= 0):
                raise ImpossibleEvidenceError("zero downward message")
            down_msg[i::s] = msg / z[:, None]
        downward[lvl - 1] = down_msg
    marginals = []
    for lvl in range(p.depth + 1):
        post = upward[lvl] * downward[lvl]
        z = post.sum(axis=1)
        if np.any(z <= 0):
            raise ImpossibleEvidenceError("zero posterior mass")
        marginals.append(post / z[:, None])
    return BeliefState(
        upward=upward,
        downward=[d for d in downward],
        marginals=marginals,
        log_evidence=log_z,
    )


def _categorical_rows(prob_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a (n, k) probability matrix."""
    cdf = np.cumsum(prob_rows, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((prob_rows.shape[0], 1))
    return (u > cdf).sum(axis=1).astype(np.int32)


def bp_posterior_sample_batch(
    rs: RuleSet, evidence: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """``n`` i.i.d. exact posterior draws of the visible string (one upward
    pass shared, then batched top-down ancestral sampling).

    Returns the (n, seq_len) leaf strings; use :func:`bp_posterior_sample` when
    the full derivation is needed.
    """
    p = rs.params
    lik = _check_evidence(rs, evidence)
    upward, prods_by_level, _ = _upward_pass(rs, lik)
    root_post = upward[p.depth][0] / upward[p.depth][0].sum()
    symbols = _categorical_rows(np.tile(root_post, (n, 1)), rng).reshape(n, 1)
    for lvl in range(p.depth, 0, -1):
        width = p.level_width(lvl)
        prods = prods_by_level[lvl - 1]  # (width, v, m)
        node_idx = np.broadcast_to(np.arange(width)[None, :], symbols.shape)
        weights = prods[node_idx, symbols]  # (n, width, m)
        flat = weights.reshape(-1, p.n_synonyms)
        bad = flat.sum(axis=1) <= 0
        if np.any(bad):
            raise ImpossibleEvidenceError("conditioned node has no valid production")
        ks = _categorical_rows(flat, rng).reshape(symbols.shape)
        symbols = rs.rules_at(lvl)[symbols, ks].reshape(n, width * p.branching)
    return symbols


def bp_posterior_sample(
    rs: RuleSet, evidence: np.ndarray, rng: np.random.Generator
) -> Derivation:
    """One exact draw from the posterior over derivations given the evidence."""
    p = rs.params
    lik = _check_evidence(rs, evidence)
    upward, prods_by_level, _ = _upward_pass(rs, lik)
    root_post = upward[p.depth][0] / upward[p.depth][0].sum()
    levels: list[np.ndarray] = [None] * (p.depth + 1)  # type: ignore[list-item]
    choices: list[np.ndarray] = [None] * p.depth  # type: ignore[list-item]
    levels[p.depth] = np.array([rng.choice(p.vocab_size, p=root_post)], dtype=np.int32)
    for lvl in range(p.depth, 0, -1):
        parents = levels[lvl]
        prods = prods_by_level[lvl - 1]
        weights = prods[np.arange(parents.shape[0]), parents]
        if np.any(weights.sum(axis=1) <= 0):
            raise ImpossibleEvidenceError("conditioned node has no valid production")
        ks = _categorical_rows(weights, rng)
        choices[lvl - 1] = ks
        levels[lvl - 1] = rs.rules_at(lvl)[parents, ks].reshape(-1)
    return Derivation(levels=levels, choices=choices)


def denoise_expectation(
    rs: RuleSet, noisy: np.ndarray, spec: NoiseSpec
) -> np.ndarray:
    """Exact conditional expectation of each clean one-hot token given the
    corrupted string: the per-leaf posterior marginals."""
    lik = leaf_likelihoods(np.asarray(noisy), spec, rs.params.vocab_size)
    return bp_marginals(rs, lik).marginals[0]
