"""
purilab - membership inference and model inversion attacks.

Every attack reaches the target only through ``oracle.predict``.
"""

from __future__ import annotations

__all__ = [
    "MembershipAttackModel",
    "InversionModel",
    "sorted_confidences",
    "balanced_batches",
    "mlleaks_attack",
    "mlleaks_adaptive",
    "imitate_defense",
    "nsh_attack",
    "label_attack",
    "train_inversion_attack",
    "evaluate_membership",
    "reference_exposure",
]

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, replace

import numpy as np

from .backend.CONSTANTS import MEMBERSHIP_THRESHOLD
from .backend.error_handling import AttackError, EmptyDataError, InsufficientDataError, MembershipLabelError
from .backend.utilities import AttackConfig, DefenseSpec, PurifierHyper, TargetConfig, derive_rng
from .baselines import DefenseTransform
from .data import AttackDataView, LabeledDataset
from .nn_core import BranchNetwork, Network, forward, init_network, mlp_specs, train_network
from .purifier import ADVERSARY_HIDDEN, init_adversary, init_discriminator, train_purifier
from .target import ConfidenceOracle, train_target

logger = logging.getLogger(__name__)


def sorted_confidences(conf: np.ndarray, top_k: int | None = None) -> np.ndarray:
    """Each row sorted in descending order, optionally cut to its ``top_k`` largest entries."""
    ordered = -np.sort(-np.atleast_2d(conf), axis=1)
    return ordered if top_k is None else ordered[:, :top_k]


def _nsh_inputs(conf: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.concatenate([conf, np.eye(conf.shape[1])[labels]], axis=1)


@dataclass
class MembershipAttackModel:
    """
    A trained membership attack.

    ``kind`` is one of ``mlleaks``, ``mlleaks-a``, ``nsh`` or ``label``; the label attack has no network.
    """

    kind: str
    network: Network | BranchNetwork | None = None
    top_k: int | None = None

    def membership_scores(self, oracle: ConfidenceOracle, dataset: LabeledDataset) -> np.ndarray:
        """Membership probability in ``[0, 1]`` for every sample of ``dataset``."""
        conf = np.atleast_2d(oracle.predict(dataset.features))
        if self.kind == "label":
            return (np.argmax(conf, axis=1) == dataset.labels).astype(np.float64)
        if self.kind == "nsh":
            return forward(self.network, _nsh_inputs(conf, dataset.labels))[:, 0]  # type: ignore[arg-type]
        return forward(self.network, sorted_confidences(conf, self.top_k))[:, 0]  # type: ignore[arg-type]

    def predict_membership(self, oracle: ConfidenceOracle, dataset: LabeledDataset) -> np.ndarray:
        """Boolean member predictions at the fixed 0.5 threshold."""
        return self.membership_scores(oracle, dataset) >= MEMBERSHIP_THRESHOLD


@dataclass
class InversionModel:
    """Network mapping confidence vectors back to features in ``[0, 1]``."""

    network: Network

    def reconstruct(self, conf: np.ndarray) -> np.ndarray:
        return forward(self.network, np.atleast_2d(conf))

    def invert(self, oracle: ConfidenceOracle, features: np.ndarray) -> np.ndarray:
        """Query ``oracle`` on ``features`` and reconstruct them from its answers."""
        return self.reconstruct(oracle.predict(np.atleast_2d(features)))


# =============================================================================
# Confidence-based attacks
# =============================================================================


def _shadow_split(view: AttackDataView, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if view.has_membership_labels:
        raise MembershipLabelError("the shadow-model attack must not see membership labels")
    if view.pool is None or len(view.pool) < 4:
        raise InsufficientDataError("the shadow-model attack needs at least 4 attacker samples")
    order = derive_rng(seed, "mlleaks", "shadow_split").permutation(len(view.pool))
    half = len(order) // 2
    return view.pool.subset(order[:half]), view.pool.subset(order[half:])


def _train_attack_net(
    member_conf: np.ndarray, nonmember_conf: np.ndarray, cfg: AttackConfig, seed: int, name: str
) -> Network:
    inputs = sorted_confidences(np.concatenate([member_conf, nonmember_conf]), cfg.mlleaks_top_k)
    targets = np.concatenate([np.ones(len(member_conf)), np.zeros(len(nonmember_conf))]).reshape(-1, 1)
    net = init_network(
        mlp_specs([inputs.shape[1], cfg.attack_hidden, 1], "relu", "sigmoid"), derive_rng(seed, name, "init")
    )
    train_network(
        net,
        inputs,
        targets,
        "binary_cross_entropy",
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        rng=derive_rng(seed, name, "batches"),
        name=name,
        log_every=cfg.log_every,
    )
    return net


def mlleaks_attack(
    oracle: ConfidenceOracle, view: AttackDataView, shadow_cfg: TargetConfig, cfg: AttackConfig, seed: int
) -> MembershipAttackModel:
    """
    Shadow-model attack on sorted confidence vectors.

    One shadow model with the target's architecture is trained on half of the attacker's pool;
    its confidences on that half (members) and on the other half (non-members) train a binary
    attack network. The oracle itself is never queried during training.

    Parameters
    ----------
    oracle :
        The target; unused in training and accepted for interface symmetry.
    view :
        Unlabeled attacker pool, see :meth:`Splits.attacker_view`.
    shadow_cfg :
        Architecture and schedule of the shadow model.
    cfg :
        Attack-network settings.
    seed :
        Experiment seed.

    Raises
    ------
    MembershipLabelError
        If ``view`` carries membership labels.
    InsufficientDataError
        If the pool is too small to split.
    """
    shadow_in, shadow_out = _shadow_split(view, seed)
    shadow = train_target(shadow_in, replace(shadow_cfg, seed=seed), name="mlleaks_shadow")
    member_conf, nonmember_conf = forward(shadow, shadow_in.features), forward(shadow, shadow_out.features)
    net = _train_attack_net(member_conf, nonmember_conf, cfg, seed, "mlleaks")
    return MembershipAttackModel("mlleaks", net, cfg.mlleaks_top_k)


def _surrogate_hyper(defense: DefenseSpec, cfg: AttackConfig) -> PurifierHyper:
    known = defense.purifier or PurifierHyper()
    if cfg.adaptive_surrogate == "defender" and cfg.adaptive_knows_hyper:
        return known
    lam = known.lam if cfg.adaptive_knows_hyper else PurifierHyper().lam
    return replace(known, lam=lam, alpha=0.0, beta=0.0, mode="base")


def imitate_defense(defense: DefenseSpec | None, seed: int) -> DefenseTransform:
    """
    The attacker's copy of a closed-form defense.

    Random noise is drawn from the attacker's own stream; the defender's noise seed stays secret.
    """
    if defense is None or defense.kind == "none":
        return DefenseTransform("none")
    if defense.kind == "purifier":
        raise AttackError("a purifier cannot be imitated in closed form; train a surrogate instead")
    noise_seed = int(derive_rng(seed, "mlleaks_a", "noise").integers(2**31))
    return DefenseTransform(defense.kind, defense.magnitude, seed=noise_seed)


def mlleaks_adaptive(
    oracle: ConfidenceOracle,
    view: AttackDataView,
    reference: LabeledDataset,
    shadow_cfg: TargetConfig,
    cfg: AttackConfig,
    seed: int,
    defense: DefenseSpec | None = None,
) -> MembershipAttackModel:
    """
    Shadow-model attack that imitates the deployed defense before training its attack network.

    Against a purifier the attacker trains a surrogate purifier on its shadow model's confidences
    over ``reference`` (D2) and trains on the surrogate-purified vectors. Against a closed-form
    defense it applies its own copy of the transform (:func:`imitate_defense`) to the shadow's
    outputs. Without a defense it reduces to :func:`mlleaks_attack` with its own seed streams.

    Parameters
    ----------
    defense :
        What the attacker knows about the deployed defense. Whether the purifier's exact weights
        are used is governed by ``cfg.adaptive_surrogate`` and ``cfg.adaptive_knows_hyper``.
    """
    shadow_in, shadow_out = _shadow_split(view, seed)
    shadow = train_target(shadow_in, replace(shadow_cfg, seed=seed), name="mlleaks_a_shadow")
    member_conf, nonmember_conf = forward(shadow, shadow_in.features), forward(shadow, shadow_out.features)

    if defense is not None and defense.kind == "purifier":
        hyper = _surrogate_hyper(defense, cfg)
        logger.info("adaptive attacker trains surrogate %s on %d reference samples", hyper.label, len(reference))
        bundle = train_purifier(shadow, reference, hyper, seed, name="surrogate_purifier")
        transform = DefenseTransform("purifier", bundle=bundle)
    else:
        transform = imitate_defense(defense, seed)

    member_conf = transform.apply(member_conf, shadow_in.features)
    nonmember_conf = transform.apply(nonmember_conf, shadow_out.features)
    net = _train_attack_net(member_conf, nonmember_conf, cfg, seed, "mlleaks_a")
    return MembershipAttackModel("mlleaks-a", net, cfg.mlleaks_top_k)


def balanced_batches(
    n_members: int, n_nonmembers: int, batch_size: int, rng: np.random.Generator
) -> Iterator[np.ndarray]:
    """
    Yield index batches over ``[members; non-members]`` that are exactly half members.

    The smaller side is cycled so that every sample of the larger side is seen once per epoch.
    """
    half = max(1, batch_size // 2)
    n_batches = int(np.ceil(max(n_members, n_nonmembers) / half))

    def cycled(n: int) -> np.ndarray:
        repeats = int(np.ceil(n_batches * half / n))
        return np.concatenate([rng.permutation(n) for _ in range(repeats)])[: n_batches * half]

    members, nonmembers = cycled(n_members), cycled(n_nonmembers) + n_members
    for b in range(n_batches):
        window = slice(b * half, (b + 1) * half)
        yield np.concatenate([members[window], nonmembers[window]])


def nsh_attack(
    oracle: ConfidenceOracle,
    view: AttackDataView,
    cfg: AttackConfig,
    seed: int,
    widths: dict[str, Sequence[int]] | None = None,
) -> MembershipAttackModel:
    """
    Attack on ``(confidence vector, one-hot true label)`` pairs queried directly from the oracle.

    The network has a confidence branch, a label branch and a combiner; every training batch
    holds as many members (D_A) as non-members (D'_A).

    Parameters
    ----------
    widths :
        Optional ``confidence_branch``/``label_branch``/``combiner`` overrides.

    Raises
    ------
    MembershipLabelError
        If either membership class is missing from ``view``.
    """
    if view.members is None or view.nonmembers is None or len(view.members) == 0 or len(view.nonmembers) == 0:
        raise MembershipLabelError("the NSH attack needs both members and non-members")
    members, nonmembers = view.members, view.nonmembers
    inputs = np.concatenate(
        [
            _nsh_inputs(np.atleast_2d(oracle.predict(members.features)), members.labels),
            _nsh_inputs(np.atleast_2d(oracle.predict(nonmembers.features)), nonmembers.labels),
        ]
    )
    targets = np.concatenate([np.ones(len(members)), np.zeros(len(nonmembers))]).reshape(-1, 1)

    net = init_discriminator(oracle.num_classes, derive_rng(seed, "nsh", "init"), **(widths or {}))
    train_network(
        net,
        inputs,
        targets,
        "binary_cross_entropy",
        epochs=cfg.nsh_epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.nsh_learning_rate,
        rng=derive_rng(seed, "nsh", "batches"),
        batches=lambda rng: balanced_batches(len(members), len(nonmembers), cfg.batch_size, rng),
        name="nsh",
        log_every=cfg.log_every,
    )
    return MembershipAttackModel("nsh", net)


def label_attack(oracle: ConfidenceOracle, dataset: LabeledDataset) -> np.ndarray:
    """Predict member exactly when the oracle classifies the sample correctly; no training."""
    return MembershipAttackModel("label").predict_membership(oracle, dataset)


# =============================================================================
# Inversion
# =============================================================================


def train_inversion_attack(
    oracle: ConfidenceOracle,
    auxiliary: LabeledDataset,
    cfg: AttackConfig,
    seed: int,
    hidden: Sequence[int] = ADVERSARY_HIDDEN,
) -> InversionModel:
    """
    Train a black-box inversion model on ``MSE(x, Inv(oracle(x)))`` over the auxiliary set.

    The architecture mirrors the purifier's adversary H.

    Raises
    ------
    EmptyDataError
        If the auxiliary set is empty.
    DivergenceError
        If the loss becomes non-finite.
    """
    if len(auxiliary) == 0:
        raise EmptyDataError("the inversion attack needs auxiliary data")
    conf = np.atleast_2d(oracle.predict(auxiliary.features))
    net = init_adversary(conf.shape[1], auxiliary.feature_dim, derive_rng(seed, "inversion", "init"), hidden)
    train_network(
        net,
        conf,
        auxiliary.features,
        "mse",
        epochs=cfg.inversion_epochs,
        batch_size=cfg.inversion_batch_size,
        learning_rate=cfg.inversion_learning_rate,
        rng=derive_rng(seed, "inversion", "batches"),
        name="inversion",
        log_every=cfg.log_every,
    )
    return InversionModel(net)


# =============================================================================
# Evaluation
# =============================================================================


def evaluate_membership(
    attack: MembershipAttackModel, oracle: ConfidenceOracle, members: LabeledDataset, nonmembers: LabeledDataset
) -> float:
    """
    Inference accuracy on a balanced member/non-member set at threshold 0.5.

    The larger set is truncated to the size of the smaller one.

    Raises
    ------
    EmptyDataError
        If either set is empty.
    """
    n = min(len(members), len(nonmembers))
    if n == 0:
        raise EmptyDataError("membership evaluation needs members and non-members")
    first = np.arange(n)
    hits_in = attack.predict_membership(oracle, members.subset(first))
    hits_out = ~attack.predict_membership(oracle, nonmembers.subset(first))
    return float((hits_in.sum() + hits_out.sum()) / (2 * n))


def reference_exposure(
    attack: MembershipAttackModel, oracle: ConfidenceOracle, reference: LabeledDataset, nonmembers: LabeledDataset
) -> float:
    """Inference accuracy when the purifier's reference set (D2) plays the member role against D3 non-members."""
    return evaluate_membership(attack, oracle, reference, nonmembers)
