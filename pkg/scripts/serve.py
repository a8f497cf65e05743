"""Boot the session gateway over HTTP.

Usage: python scripts/serve.py [--host H] [--port P] [--config cfg.json]
"""

import argparse

import uvicorn

from bankchat import AppConfig, build_registry
from bankchat.gateway import SessionGateway, create_app


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--config", default=None, help="JSON config overlay")
    args = parser.parse_args()

    config = AppConfig.from_json(args.config) if args.config else AppConfig()
    registry = build_registry(config)
    gateway = SessionGateway(registry, config.gateway, history_cap=config.history_cap)
    uvicorn.run(create_app(gateway), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
