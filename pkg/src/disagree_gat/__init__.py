"""Entity-conditioned sentiment + graph attention pipeline for stance classification.

Subpackage layout:

- ``corpus``     ingestion and validation of comment-reply pairs and entity lists
- ``featurize``  entity mention detection, context windows, sentiment and embeddings
- ``graph``      feature rows -> node tensors, edges, splits, oversampling, class weights
- ``nncore``     reverse-mode autodiff tape, RNG, optimizer, numeric kernels
- ``gat``        attention layers, the two-layer model, checkpoint (de)serialization
- ``train``      training loop with early stopping and deterministic re-draws
- ``evaluation`` metrics, ablation harness, attention and entity reports
- ``cli``        argparse command line entry points
"""

__version__ = "0.1.0"
