# src/mrkd/main.py
import asyncio
import logging
import sys
from typing import Optional, Sequence

from .handlers import common, data, evaluation, training
from .handlers.common import Dispatcher
from .logging_config import setup_logging


def build_dispatcher() -> Dispatcher:
    dp = Dispatcher()
    dp.include_router(common.router)
    dp.include_router(data.router)
    dp.include_router(training.router)
    dp.include_router(evaluation.router)
    return dp


async def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    logger = logging.getLogger(__name__)

    dp = build_dispatcher()
    code = await dp.dispatch(argv)
    logger.debug("Finished with exit code %d", code)
    return code


def run() -> None:
    sys.exit(asyncio.run(main()))


if __name__ == "__main__":
    run()
