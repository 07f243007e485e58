"""Label models: majority vote, accuracy-weighted vote and Dawid-Skene EM.

All aggregators consume a weak-label vote matrix with entries in
{0..C-1} | {ABSTAIN} and produce row-stochastic per-instance class
distributions plus a coverage mask.

The EM model factors each LF's behavior into a per-class vote propensity
(how often it fires given the true class) and a confusion matrix
conditioned on voting (which label it emits when it fires). The propensity
factor is essential: LFs built from keyword/pattern matches emit only their
own target class, so the identity of a vote carries no information and the
whole signal lives in who fires on what.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import Dataset
from .labelfns import ABSTAIN


@dataclass
class ProbLabels:
    probs: np.ndarray  # (n, C), each covered row sums to 1
    covered: np.ndarray  # (n,) bool
    instance_ids: Optional[list] = None

    @property
    def n(self):
        return self.probs.shape[0]

    @property
    def n_classes(self):
        return self.probs.shape[1]

    def hard_labels(self) -> np.ndarray:
        """Argmax labels, ties broken toward the lowest class index."""
        return self.probs.argmax(axis=1)

    def to_records(self):
        ids = self.instance_ids if self.instance_ids is not None else list(range(self.n))
        for i, iid in enumerate(ids):
            yield {"id": iid, "probs": [float(p) for p in self.probs[i]], "covered": bool(self.covered[i])}


@dataclass
class LabelModelKind:
    variant: str = "dawid_skene"  # majority | weighted | dawid_skene
    em_max_iters: int = 100
    em_tol: float = 1e-6
    smoothing: float = 1.0
    em_restarts: int = 3  # perturbed-init restarts on top of the majority-vote init

    def __post_init__(self):
        if self.em_max_iters < 1:
            raise ValueError("em_max_iters must be >= 1")
        if self.em_tol <= 0:
            raise ValueError("em_tol must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")


def _vote_counts(entries: np.ndarray, n_classes: int) -> np.ndarray:
    n = entries.shape[0]
    counts = np.zeros((n, n_classes))
    for c in range(n_classes):
        counts[:, c] = (entries == c).sum(axis=1)
    return counts


def majority_vote(entries: np.ndarray, n_classes: int, instance_ids=None) -> ProbLabels:
    """Vote-fraction distribution over non-abstain votes per instance."""
    counts = _vote_counts(entries, n_classes)
    totals = counts.sum(axis=1)
    covered = totals > 0
    probs = np.full((entries.shape[0], n_classes), 1.0 / n_classes)
    probs[covered] = counts[covered] / totals[covered, None]
    return ProbLabels(probs=probs, covered=covered, instance_ids=instance_ids)


def weighted_vote(entries: np.ndarray, n_classes: int, lf_accuracies, instance_ids=None) -> ProbLabels:
    """Accuracy-weighted voting.

    Each LF votes with log-odds weight ln(a*(C-1)/(1-a)) after clipping its
    accuracy into [0.05, 0.95]; row distributions are the softmax of the
    accumulated per-class weights over classes that received at least one vote.
    """
    n, m = entries.shape
    if len(lf_accuracies) != m:
        raise ValueError("expected %d LF accuracies, got %d" % (m, len(lf_accuracies)))
    acc = np.clip(np.asarray(lf_accuracies, dtype=float), 0.05, 0.95)
    weights = np.log(acc * (n_classes - 1) / (1.0 - acc))
    scores = np.zeros((n, n_classes))
    voted = np.zeros((n, n_classes), dtype=bool)
    for j in range(m):
        votes = entries[:, j]
        active = votes != ABSTAIN
        scores[active, votes[active]] += weights[j]
        voted[active, votes[active]] = True
    covered = voted.any(axis=1)
    probs = np.full((n, n_classes), 1.0 / n_classes)
    for i in np.nonzero(covered)[0]:
        mask = voted[i]
        z = scores[i, mask]
        z = np.exp(z - z.max())
        row = np.zeros(n_classes)
        row[mask] = z / z.sum()
        probs[i] = row
    return ProbLabels(probs=probs, covered=covered, instance_ids=instance_ids)


def em_log_likelihood(entries, prior, confusions, propensities, smoothing):
    """Penalized observed-data log-likelihood at the given parameters.

    Per LF and instance the likelihood factor is
    propensity[k] * confusion[k, vote] when the LF voted and
    1 - propensity[k] when it abstained. The penalty is the Dirichlet/Beta
    term matching additive smoothing in the M-step; at smoothing 0 this is
    the plain log-likelihood. Returns (objective, per-instance class
    log-likelihood matrix).
    """
    n, m = entries.shape
    n_classes = prior.shape[0]
    active = (entries != ABSTAIN).astype(float)
    log_like = np.tile(np.log(prior), (n, 1))
    log_like += active @ np.log(propensities)
    log_like += (1.0 - active) @ np.log(1.0 - propensities)
    for c in range(n_classes):
        log_like += (entries == c).astype(float) @ np.log(confusions[:, :, c])
    row_max = log_like.max(axis=1)
    ll = float((row_max + np.log(np.exp(log_like - row_max[:, None]).sum(axis=1))).sum())
    if smoothing > 0:
        ll += smoothing * float(np.log(prior).sum())
        ll += smoothing * float(np.log(confusions).sum())
        ll += smoothing * float(np.log(propensities).sum())
        ll += smoothing * float(np.log(1.0 - propensities).sum())
    return ll, log_like


def _em_mstep(entries, posteriors, n_classes, smoothing):
    n, m = entries.shape
    prior = (posteriors.sum(axis=0) + smoothing) / (n + n_classes * smoothing)
    counts = np.empty((m, n_classes, n_classes))  # [j, k, c] = mass of class k voting c
    for c in range(n_classes):
        counts[:, :, c] = (entries == c).astype(float).T @ posteriors
    totals = counts.sum(axis=2, keepdims=True)
    confusions = (counts + smoothing) / (totals + n_classes * smoothing)
    class_mass = posteriors.sum(axis=0)
    propensities = (totals[:, :, 0] + smoothing) / (class_mass[None, :] + 2 * smoothing)
    return prior, confusions, propensities


def _em_run(entries, init_posteriors, kind: LabelModelKind):
    """EM on a matrix whose every row has at least one vote."""
    n_classes = init_posteriors.shape[1]
    posteriors = init_posteriors
    history = []
    prior = confusions = propensities = None
    for _ in range(kind.em_max_iters):
        prior, confusions, propensities = _em_mstep(entries, posteriors, n_classes,
                                                    kind.smoothing)
        objective, log_like = em_log_likelihood(entries, prior, confusions, propensities,
                                                kind.smoothing)
        # E-step: posterior over the latent class given the votes
        row_max = log_like.max(axis=1, keepdims=True)
        unnorm = np.exp(log_like - row_max)
        posteriors = unnorm / unnorm.sum(axis=1, keepdims=True)
        history.append(objective)
        if len(history) >= 2 and history[-1] - history[-2] < kind.em_tol:
            break
    return posteriors, prior, confusions, propensities, history


@dataclass
class DawidSkeneResult:
    problabels: ProbLabels
    confusions: np.ndarray  # (m, C, C); row k = P(vote | true class k, LF voted)
    prior: np.ndarray
    propensities: np.ndarray  # (m, C); P(LF votes | true class)
    objective_history: list  # penalized log-likelihood per EM iteration


def dawid_skene_em(entries: np.ndarray, n_classes: int, kind: Optional[LabelModelKind] = None,
                   instance_ids=None) -> DawidSkeneResult:
    """Abstain-aware Dawid-Skene EM.

    Initialized from majority-vote posteriors; a few deterministic perturbed
    restarts guard against symmetric fixed points, and the run with the best
    penalized log-likelihood wins (ties go to the plain majority-vote init).
    """
    if kind is None:
        kind = LabelModelKind()
    if entries.shape[1] < 1:
        raise ValueError("need at least one LF column")
    mv = majority_vote(entries, n_classes, instance_ids)
    covered = mv.covered
    if not covered.any():
        raise ValueError("no covered instance: every LF abstained everywhere")
    # Uncovered rows carry no evidence; EM runs on the covered submatrix.
    sub_entries = entries[covered]
    best = None
    rng = np.random.default_rng(12345)
    for r in range(kind.em_restarts + 1):
        init = mv.probs[covered].copy()
        if r > 0:
            noise = rng.uniform(0.0, 0.2, size=init.shape)
            init = init + noise
            init /= init.sum(axis=1, keepdims=True)
        result = _em_run(sub_entries, init, kind)
        if best is None or result[4][-1] > best[4][-1] + 1e-9:
            best = result
    sub_posteriors, prior, confusions, propensities, history = best
    posteriors = np.full((entries.shape[0], n_classes), 1.0 / n_classes)
    posteriors[covered] = sub_posteriors
    problabels = ProbLabels(probs=posteriors, covered=covered, instance_ids=instance_ids)
    return DawidSkeneResult(problabels=problabels, confusions=confusions,
                            prior=prior, propensities=propensities,
                            objective_history=history)


def resolve_training_labels(problabels: ProbLabels, dataset: Dataset):
    """Hard labels for downstream training.

    Covered instances take the argmax (ties to the lowest class index);
    uncovered instances take the dataset's default class when defined and are
    otherwise excluded. Returns a list of (instance id, class index).
    """
    ids = problabels.instance_ids
    if ids is None:
        ids = list(range(problabels.n))
    hard = problabels.hard_labels()
    out = []
    for i, iid in enumerate(ids):
        if problabels.covered[i]:
            out.append((iid, int(hard[i])))
        elif dataset.default_class is not None:
            out.append((iid, dataset.default_class))
    return out
