"""Layer-wise trained probabilistic mixture models on graphs.

The package builds unsupervised vertex and graph embeddings by stacking
independently trained probabilistic layers (EM-trained mixtures with
fixed state counts, or nonparametric Gibbs-trained layers that choose
their own), then feeds them to small standalone classifiers under a
stratified nested evaluation protocol.
"""

__version__ = "0.1.0"
