from .beliefio import BeliefDataset, read_beliefs, write_beliefs
from .idx import ImageDataset, load_idx, load_mnist
from .rng import counter_rng
from .samplers import PairDataset, make_ranked_pairs, sample_negative_labels
from .synth import (
    CoarseScene,
    SyntheticSceneSpec,
    TextureScene,
    gen_blob_points,
    gen_coarse_scene,
    gen_texture_scene,
)
from .trigram import TRIGRAM_DIM, TextCorpus, gen_text_corpus, trigram_featurize

__all__ = [
    "ImageDataset",
    "load_idx",
    "load_mnist",
    "counter_rng",
    "PairDataset",
    "sample_negative_labels",
    "make_ranked_pairs",
    "SyntheticSceneSpec",
    "TextureScene",
    "CoarseScene",
    "gen_texture_scene",
    "gen_coarse_scene",
    "gen_blob_points",
    "TRIGRAM_DIM",
    "TextCorpus",
    "gen_text_corpus",
    "trigram_featurize",
    "BeliefDataset",
    "read_beliefs",
    "write_beliefs",
]
