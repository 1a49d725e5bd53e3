"""
Command routing for the CLI
Handlers register subcommands on a CommandRouter; the dispatcher collects routers
in priority order, builds the argparse parser and runs the selected handler.
"""

import argparse
import logging
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Dict, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace], Awaitable[int]]


@dataclass(frozen=True)
class Argument:
    """Positional and keyword arguments for argparse's add_argument."""

    flags: Tuple[str, ...]
    options: Dict = field(default_factory=dict)


def argument(*flags: str, **options) -> Argument:
    return Argument(tuple(flags), options)


@dataclass
class Command:
    name: str
    help: str
    handler: Handler
    arguments: List[Argument]


class CommandRouter:
    """Collection of subcommands contributed by one handler module."""

    def __init__(self, name: Optional[str] = None):
        self.name = name or 'router'
        self.commands: List[Command] = []

    def command(self, name: str, help: str = '', arguments: Sequence[Argument] = ()):
        def register(handler: Handler) -> Handler:
            self.commands.append(Command(name, help, handler, list(arguments)))
            return handler
        return register


class CommandDispatcher:
    """Owns the parser; the first router to register a name wins."""

    def __init__(self, prog: str = 'main.py', description: str = ''):
        self.parser = argparse.ArgumentParser(prog=prog, description=description)
        self.subparsers = self.parser.add_subparsers(dest='command', metavar='command')
        self.subparsers.required = True
        self.commands: Dict[str, Command] = {}

    def include_router(self, router: CommandRouter):
        for command in router.commands:
            if command.name in self.commands:
                logger.warning(f"Command '{command.name}' from {router.name} already registered, skipped")
                continue
            parser = self.subparsers.add_parser(command.name, help=command.help, description=command.help)
            for item in command.arguments:
                parser.add_argument(*item.flags, **item.options)
            parser.set_defaults(handler=command.handler)
            self.commands[command.name] = command
        logger.debug(f"Included {router.name} with {len(router.commands)} command(s)")

    def parse(self, argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
        return self.parser.parse_args(argv)

    async def dispatch(self, args: argparse.Namespace) -> int:
        return await args.handler(args)
