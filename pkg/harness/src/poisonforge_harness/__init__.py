"""Trainer harness for the poisonforge pipeline.

Closes the loop for toy-scale demonstrations: pretrains a small model on a
benign dataset to emit the per-epoch prediction log, and trains on a
poisoned dataset to emit the clean/triggered test prediction CSVs. Talks
to the poisonforge tool only through its CLI and file formats.
"""

__version__ = "0.1.0"
