"""Created on Oct 19 13:31:05 2026."""

from .utilities import PurifierHyper

__all__ = [
    "base_purifier",
    "inversion_purifier",
    "membership_purifier",
    "joint_purifier",
    "bp",
    "ip",
    "mp",
    "jp",
]


def base_purifier(lam: float = 1.0, epochs: int = 50, bs: int = 128, lr_g: float = 0.0001, **kwargs) -> PurifierHyper:
    """
    Create hyperparameters for a purifier trained on reconstruction and label loss only.

    Parameters
    ----------
    lam :
        Weight of the label (cross-entropy) loss.
    epochs :
        Number of training epochs.
    bs :
        Mini-batch size.
    lr_g :
        Learning rate of the purifier.
    **kwargs :
        Any other ``PurifierHyper`` field, e.g. ``reference="d1"``.

    Returns
    -------
    PurifierHyper
        Validated hyperparameters with ``mode="base"``.
    """
    return PurifierHyper(lam=lam, mode="base", epochs=epochs, batch_size=bs, lr_generator=lr_g, **kwargs).validate()


def inversion_purifier(
    lam: float = 1.0,
    alpha: float = 0.1,
    epochs: int = 50,
    bs: int = 128,
    lr_g: float = 0.0001,
    lr_h: float = 0.0002,
    **kwargs,
) -> PurifierHyper:
    """
    Create hyperparameters for a purifier trained against an adversarial inversion model.

    Parameters
    ----------
    lam :
        Weight of the label (cross-entropy) loss.
    alpha :
        Weight of the inversion term.
    epochs :
        Number of training epochs.
    bs :
        Mini-batch size.
    lr_g :
        Learning rate of the purifier.
    lr_h :
        Learning rate of the adversarial model.
    **kwargs :
        Any other ``PurifierHyper`` field.

    Returns
    -------
    PurifierHyper
        Validated hyperparameters with ``mode="inv"``.
    """
    return PurifierHyper(
        lam=lam, alpha=alpha, mode="inv", epochs=epochs, batch_size=bs, lr_generator=lr_g, lr_adversary=lr_h, **kwargs
    ).validate()


def membership_purifier(
    lam: float = 1.0,
    beta: float = 5.0,
    epochs: int = 50,
    bs: int = 128,
    lr_g: float = 0.0001,
    lr_i: float = 0.0002,
    **kwargs,
) -> PurifierHyper:
    """
    Create hyperparameters for a purifier trained against a discriminator.

    Parameters
    ----------
    lam :
        Weight of the label (cross-entropy) loss.
    beta :
        Weight of the discriminator term.
    epochs :
        Number of training epochs.
    bs :
        Mini-batch size.
    lr_g :
        Learning rate of the purifier.
    lr_i :
        Learning rate of the discriminator.
    **kwargs :
        Any other ``PurifierHyper`` field.

    Returns
    -------
    PurifierHyper
        Validated hyperparameters with ``mode="mem"``.
    """
    return PurifierHyper(
        lam=lam,
        beta=beta,
        mode="mem",
        epochs=epochs,
        batch_size=bs,
        lr_generator=lr_g,
        lr_discriminator=lr_i,
        **kwargs,
    ).validate()


def joint_purifier(
    lam: float = 1.0,
    alpha: float = 0.1,
    beta: float = 5.0,
    epochs: int = 50,
    bs: int = 128,
    lr_g: float = 0.0001,
    lr_h: float = 0.0002,
    lr_i: float = 0.0002,
    **kwargs,
) -> PurifierHyper:
    """
    Create hyperparameters for the jointly trained purifier (both adversaries).

    The defaults ``(1, 0.1, 5)`` are the joint setting used by ``configs/desk.yaml``.

    Returns
    -------
    PurifierHyper
        Validated hyperparameters with ``mode="both"``.
    """
    return PurifierHyper(
        lam=lam,
        alpha=alpha,
        beta=beta,
        mode="both",
        epochs=epochs,
        batch_size=bs,
        lr_generator=lr_g,
        lr_adversary=lr_h,
        lr_discriminator=lr_i,
        **kwargs,
    ).validate()


bp = base_purifier
ip = inversion_purifier
mp = membership_purifier
jp = joint_purifier
