"""Next-utterance selection toolkit.

Rank candidate responses to a multi-turn dialogue context. Ships corpus
ingestion, a skip-gram word2vec trainer, a pretrained/task-trained embedding
combiner, an ESIM-style matching model with character-composed embeddings on
a small reverse-mode autodiff engine, retrieval metrics, and a cosine
baseline, wired together behind the ``dialrank`` command.
"""

__version__ = "0.1.0"
