"""Kinetic equations for a harmonic oscillator coupled to a thermal bath.

Fock-space master equations (:mod:`moyalkin.lindblad`), generalized Wigner
fields (:mod:`moyalkin.wigner`), phase-space Fokker-Planck operators
(:mod:`moyalkin.fpde`), bath correlation functions (:mod:`moyalkin.bath`)
and a classical chain simulator (:mod:`moyalkin.chain`).
"""

__version__ = "0.1.0"
