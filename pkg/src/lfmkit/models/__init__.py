"""Mechanistic model families: transcription-factor ODEs, ballistic reentry,
and satellite orbit dynamics with RTN-decomposed latent forces."""

from . import ballistic, orbit, tf

__all__ = ["ballistic", "orbit", "tf"]
