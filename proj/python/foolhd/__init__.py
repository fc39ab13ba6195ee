"""Adversarial audio toolkit: MDCT-domain perceptual attacks on a speaker
classifier, with the transforms, metrics and toy corpus behind them.

The heavy lifting lives in the C++ extension module ``foolhd._core``; this
package re-exports its functions.
"""

from foolhd._core import (
    attack,
    imdct,
    log_spectral_distance,
    mdct,
    mfcc,
    mfcc_cosine_distance,
    perceptual_loss,
    predict,
    read_wav,
    segmental_snr,
    synth_corpus,
    train,
    write_wav,
)

__all__ = [
    "attack",
    "imdct",
    "log_spectral_distance",
    "mdct",
    "mfcc",
    "mfcc_cosine_distance",
    "perceptual_loss",
    "predict",
    "read_wav",
    "segmental_snr",
    "synth_corpus",
    "train",
    "write_wav",
]
