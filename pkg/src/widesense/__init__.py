"""Sub-Nyquist wideband spectrum sensing and modulation classification.

Pipeline: :mod:`sigsynth` builds sparse multiband frames, :mod:`sampler`
takes multi-coset measurements, :mod:`recon` reconstructs bands,
:mod:`neuralcore` and :mod:`learning` provide the CNN sensing and
classification models, :mod:`datasets` builds the training sets and
:mod:`harness` runs experiments and the CLI.
"""

__version__ = "0.1.0"
