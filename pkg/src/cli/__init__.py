# Command-line surface: subcommands, run manifests and oracle suites
from src.cli.manifest import RunManifest, read_manifest, write_manifest
from src.cli.verify import SuiteResult, run_verify

__all__ = [
    "RunManifest",
    "SuiteResult",
    "read_manifest",
    "run_verify",
    "write_manifest",
]
