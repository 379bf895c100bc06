"""Static detector for fake-transfer vulnerabilities in EOSIO WASM contracts."""

__version__ = "0.1.0"

from .names import decode_name, encode_name, is_valid_name  # noqa: E402,F401
from .loader import parse_module, find_export, import_index_of  # noqa: E402,F401
from .cfg import build_cfg, reachable_blocks  # noqa: E402,F401
from .detectors import (  # noqa: E402,F401
    Whitelist,
    detect_fake_eos_transfer,
    detect_fake_notice,
    locate_handlers,
)
from .report import AnalysisReport, analyze  # noqa: E402,F401
