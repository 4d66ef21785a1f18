#!/usr/bin/env python3
"""
ItinBench - Startup Script

With no arguments this starts the HTTP scoring service.
Any arguments are passed to the pipeline CLI, e.g.:

    python run.py gen-queries --seeds 0-499 --output runs/queries.json
    python run.py solve --pool runs/pool.json --queries runs/queries.json --solver heldkarp
"""

import sys

from itinbench.cli import main as cli_main
from itinbench.config import config


def main():
    if len(sys.argv) > 1:
        sys.exit(cli_main(sys.argv[1:]))

    print("""
    ╔═══════════════════════════════════════════════════════════╗
    ║         ITINBENCH SCORING SERVICE                         ║
    ╠═══════════════════════════════════════════════════════════╣
    ║  Server starting...                                       ║
    ║                                                           ║
    ║  API available at:                                        ║
    ║    • http://{host}:{port:<5}/api/health                    ║
    ║                                                           ║
    ║  Press Ctrl+C to stop the server                          ║
    ╚═══════════════════════════════════════════════════════════╝
    """.format(host=config.HOST, port=config.PORT))

    config_args = ["--config", str(config.EXAMPLE_CONFIG_FILE)] if config.EXAMPLE_CONFIG_FILE.exists() else []
    sys.exit(cli_main(["serve", *config_args]))


if __name__ == "__main__":
    main()
