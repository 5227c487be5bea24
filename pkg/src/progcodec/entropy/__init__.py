from .likelihood import P_FLOOR, bits, gaussian_bin_likelihood, quantize
from .prior import FactorizedPrior, factorized_bin_likelihood
from .rangecoder import RangeCoderError, ideal_bits, range_decode, range_encode
from .tables import EntropyTables, build_tables, default_scale_table, quantize_pmf

__all__ = [
    "P_FLOOR",
    "EntropyTables",
    "FactorizedPrior",
    "RangeCoderError",
    "bits",
    "build_tables",
    "default_scale_table",
    "factorized_bin_likelihood",
    "gaussian_bin_likelihood",
    "ideal_bits",
    "quantize",
    "quantize_pmf",
    "range_decode",
    "range_encode",
]
