"""A2Net temporal action localization on a small numpy autodiff core.

Submodules: ``numcore`` (autodiff, optimiser, checkpoints), ``geometry``,
``targets``, ``network``, ``losses``, ``inference``, ``evaluation``,
``data``, ``config``, ``training``, ``pipeline``, ``experiments`` and ``cli``.
"""

__version__ = "0.1.0"
