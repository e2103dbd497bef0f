from .dataset import DatasetError, load_pair_dir, save_pairs, stack, train_val_split
from .pnm import PnmError, read_pnm, write_pnm
from .synth import SamplePair, SpecError, SynthSpec, gen_dataset, gen_pair

__all__ = [
    "DatasetError",
    "PnmError",
    "SamplePair",
    "SpecError",
    "SynthSpec",
    "gen_dataset",
    "gen_pair",
    "load_pair_dir",
    "read_pnm",
    "save_pairs",
    "stack",
    "train_val_split",
    "write_pnm",
]
