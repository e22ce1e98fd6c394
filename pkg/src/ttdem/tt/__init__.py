from .core import (TtMatrix, TtTensor, tt_add, tt_decompose_full, tt_matrix_add,
                   tt_matrix_round, tt_ones, tt_random, tt_round)
from .cross import CrossStats, OracleCounter, tt_cross_compress, tt_cross_matrix
from .als import AlsStats, tt_invert_als, tt_solve_als

__all__ = [
    "TtMatrix", "TtTensor", "tt_add", "tt_decompose_full", "tt_matrix_add",
    "tt_matrix_round", "tt_ones", "tt_random", "tt_round",
    "CrossStats", "OracleCounter", "tt_cross_compress", "tt_cross_matrix",
    "AlsStats", "tt_invert_als", "tt_solve_als",
]
