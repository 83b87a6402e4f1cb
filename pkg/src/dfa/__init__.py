"""Director field analysis of orientation distribution function fields.

Submodules: ``director`` (director algebra), ``sphere`` (spherical
harmonics, tensor ODFs, peaks), ``order`` (orientational order and
dispersion), ``frames`` (local orthogonal frames), ``distortion`` (splay,
bend, twist indices), ``tfa`` (tensor field analysis), ``synth``
(synthetic fields), ``nifti`` (volume I/O) and ``cli``.
"""

__version__ = "0.1.0"
