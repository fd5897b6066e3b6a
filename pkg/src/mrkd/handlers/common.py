# src/mrkd/handlers/common.py
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, Tuple

from .. import texts
from ..config import RunConfig, get_settings
from ..data.manifest import DatasetManifest, load_manifest
from ..errors import ConfigError, MissingPrerequisiteError, MrkdError
from ..logging_config import setup_logging
from ..workspace import Workspace, get_workspace

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, RunConfig], Awaitable[int]]
Argument = Tuple[Tuple[str, ...], Dict[str, Any]]


def arg(*flags: str, **kwargs: Any) -> Argument:
    return flags, kwargs


@dataclass
class Command:
    name: str
    handler: Handler
    help: str = ""
    arguments: List[Argument] = field(default_factory=list)
    needs_manifest: bool = True
    provenance: bool = True


class Router:
    """Группа команд CLI; handler регистрируется декоратором @router.command(...)."""

    def __init__(self, name: str = "") -> None:
        self.name = name
        self.commands: List[Command] = []

    def command(
        self,
        name: str,
        help: str = "",
        arguments: Sequence[Argument] = (),
        needs_manifest: bool = True,
        provenance: bool = True,
    ) -> Callable[[Handler], Handler]:
        def decorator(handler: Handler) -> Handler:
            self.commands.append(
                Command(
                    name=name,
                    handler=handler,
                    help=help,
                    arguments=list(arguments),
                    needs_manifest=needs_manifest,
                    provenance=provenance,
                )
            )
            return handler

        return decorator


def _global_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, default=None, help="TOML-файл эксперимента")
    parent.add_argument("--work-dir", default=None, help="рабочий каталог (перекрывает конфиг и MRKD_WORK_DIR)")
    parent.add_argument("--seed", type=int, default=None, help="seed набора данных и веток")
    parent.add_argument("--workers", type=int, default=None, help="число параллельных веток/клипов")
    parent.add_argument("--desk-scale", action="store_true", help="пресет: 40 эпох, Q = 20, b = d = 1")
    parent.add_argument("--dry-run", action="store_true", help="только проверить конфиг и предусловия")
    return parent


class Dispatcher:
    def __init__(self) -> None:
        self.routers: List[Router] = []

    def include_router(self, router: Router) -> None:
        self.routers.append(router)

    @property
    def commands(self) -> Dict[str, Command]:
        return {cmd.name: cmd for router in self.routers for cmd in router.commands}

    def build_parser(self) -> argparse.ArgumentParser:
        parent = _global_flags()
        parser = argparse.ArgumentParser(
            prog="mrkd",
            description=texts.CLI_DESCRIPTION,
            epilog=texts.CLI_EPILOG,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sub = parser.add_subparsers(dest="command", required=True, metavar="command")
        for cmd in self.commands.values():
            cmd_parser = sub.add_parser(cmd.name, help=cmd.help, parents=[parent])
            for flags, kwargs in cmd.arguments:
                cmd_parser.add_argument(*flags, **kwargs)
        return parser

    async def dispatch(self, argv: Optional[Sequence[str]] = None) -> int:
        parser = self.build_parser()
        args = parser.parse_args(argv)
        cmd = self.commands[args.command]
        try:
            settings = settings_from_args(args)
            # заданный явно манифест проверяется сразу; путь по умолчанию появится после gen-synthetic
            settings.validate(require_manifest=cmd.needs_manifest and settings.dataset.manifest is not None)
            _configure_logging(settings, args)
            if cmd.provenance and not args.dry_run:
                get_workspace(settings).write_resolved_config(settings, cmd.name)
            logger.info("Running %s (work dir %s)", cmd.name, settings.work_dir)
            return await cmd.handler(args, settings)
        except MrkdError as exc:
            return report_error(exc)
        except OSError as exc:
            logger.error("I/O error in %s: %s", cmd.name, exc)
            print(texts.ERROR_TEMPLATE.format(header=texts.ERROR_HEADERS[4], category="io", message=exc), file=sys.stderr)
            return 4
        except Exception as exc:
            logger.exception("Unexpected error in %s: %s", cmd.name, exc)
            print(texts.UNEXPECTED_ERROR.format(message=exc), file=sys.stderr)
            return 1


# ---------- Общие помощники ----------


def settings_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Dict[str, Any]] = {
        "output": {"work_dir": args.work_dir, "workers": args.workers},
        "dataset": {"seed": args.seed},
    }
    overrides = {section: {k: v for k, v in values.items() if v is not None} for section, values in overrides.items()}
    return get_settings(args.config, overrides=overrides, desk_scale=args.desk_scale)


def _configure_logging(settings: RunConfig, args: argparse.Namespace) -> None:
    log_file = None
    if settings.output.log_file and not args.dry_run:
        log_file = Workspace(settings.work_dir).run_log_path()
    setup_logging(settings.output.log_level, log_file=log_file)


def report_error(exc: MrkdError) -> int:
    header = texts.ERROR_HEADERS.get(exc.exit_code, texts.ERROR_HEADERS[1])
    logger.error("%s: %s", exc.category, exc)
    print(texts.ERROR_TEMPLATE.format(header=header, category=exc.category, message=exc), file=sys.stderr)
    return exc.exit_code


def workspace_for(settings: RunConfig) -> Workspace:
    return get_workspace(settings)


def manifest_for(settings: RunConfig) -> DatasetManifest:
    path = settings.manifest_path
    if not path.is_file():
        raise MissingPrerequisiteError(f"manifest {path}", "gen-synthetic")
    return load_manifest(path)


def select_branches(settings: RunConfig, requested: Optional[List[str]]):
    if not requested:
        return list(settings.branches)
    known = {b.branch_id: b for b in settings.branches}
    unknown = [b for b in requested if b not in known]
    if unknown:
        raise ConfigError([f"unknown branch id {b!r}; configured: {', '.join(known)}" for b in unknown])
    return [known[b] for b in requested]


def dry_run_done() -> int:
    print(texts.DRY_RUN_OK)
    return 0


router = Router("common")


@router.command("version", help="версия пакета", needs_manifest=False, provenance=False)
async def cmd_version(args: argparse.Namespace, settings: RunConfig) -> int:
    from .. import __version__

    print(f"mrkd {__version__}")
    return 0
