"""
Lab Plugin Base - Command plugins for the speech pre-training lab

Every subcommand (extract, kmeans, pretrain, finetune, decode, score, compare,
synth) is owned by a plugin. Plugins declare their commands, the manager maps
commands to plugins and dispatches a CommandContext, turning failures into
stable exit codes.
"""

import argparse
import importlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type

from core.errors import EXIT_OK, EXIT_RUNTIME, LabError


@dataclass
class CommandContext:
    """Everything a plugin needs to run one command"""

    command: str
    args: argparse.Namespace = field(default_factory=argparse.Namespace)
    config: Optional[Any] = None  # core.config.RunConfig, loaded lazily by the CLI
    seed: int = 0
    deterministic: bool = False
    out_dir: Optional[Path] = None
    steps: Optional[int] = None

    def get_arg(self, name: str, default: Any = None) -> Any:
        return getattr(self.args, name, default)

    @property
    def has_config(self) -> bool:
        return self.config is not None

    @property
    def run_dir(self) -> Path:
        """--out if given, else <run.out_dir>/<run.name> from the config"""
        if self.out_dir is not None:
            return Path(self.out_dir)
        if self.config is not None:
            return Path(self.config.run.out_dir) / self.config.run.name
        return Path("runs") / self.command


@dataclass
class CommandOutcome:
    message: str
    exit_code: int = EXIT_OK

    @property
    def ok(self) -> bool:
        return self.exit_code == EXIT_OK


class LabPlugin:
    """Base class for all command plugins"""

    def __init__(self, name: str, logger: Optional[logging.Logger] = None):
        self.name = name
        self.version = "1.0.0"
        self.description = ""
        self.enabled = True
        self.logger = logger

        if not self.logger:
            self.logger = logging.getLogger(f"lab.{self.name}")

    async def initialize(self) -> bool:
        """Prepare plugin resources, return False to stay unloaded"""
        return True

    def get_commands(self) -> List[str]:
        """Return list of commands this plugin handles"""
        return []

    async def handle_command(self, context: CommandContext) -> Optional[str]:
        """Run a command and return a human-readable summary"""
        raise NotImplementedError

    async def cleanup(self):
        """Cleanup when plugin is unloaded"""
        self.logger.info(f"{self.name} plugin cleanup completed")


DEFAULT_PLUGIN_MODULES = (
    "signal_frontend.plugin",
    "labeler.plugin",
    "trainer.plugin",
    "finetune.plugin",
    "profiler.plugin",
    "synth.plugin",
)


class PluginManager:
    """Loads plugins and routes commands to them"""

    def __init__(self, module_names: Sequence[str] = DEFAULT_PLUGIN_MODULES,
                 logger: Optional[logging.Logger] = None):
        self.module_names = list(module_names)
        self.logger = logger or logging.getLogger("lab.plugins")
        self.plugins: Dict[str, LabPlugin] = {}
        self.failed_plugins: Dict[str, str] = {}

    def _discover(self, module_name: str) -> List[Type[LabPlugin]]:
        module = importlib.import_module(module_name)
        return [
            obj for obj in vars(module).values()
            if isinstance(obj, type) and issubclass(obj, LabPlugin) and obj is not LabPlugin
            and obj.__module__ == module.__name__
        ]

    async def load_plugins(self) -> int:
        for module_name in self.module_names:
            try:
                for plugin_cls in self._discover(module_name):
                    plugin = plugin_cls()
                    if await plugin.initialize():
                        self.plugins[plugin.name] = plugin
                        self.logger.debug(f"✅ Loaded plugin {plugin.name} v{plugin.version}")
                    else:
                        self.failed_plugins[plugin.name] = "initialize() returned False"
            except Exception as e:
                self.logger.error(f"❌ Failed to load plugin module {module_name}: {e}")
                self.failed_plugins[module_name] = str(e)
        return len(self.plugins)

    def get_all_commands(self) -> Dict[str, str]:
        """Map of command -> owning plugin name"""
        commands = {}
        for name, plugin in self.plugins.items():
            if not plugin.enabled:
                continue
            for cmd in plugin.get_commands():
                commands[cmd] = name
        return commands

    def get_plugin_status(self) -> Dict[str, Any]:
        return {
            "loaded": {
                name: {
                    "version": plugin.version,
                    "description": plugin.description,
                    "enabled": plugin.enabled,
                    "commands": plugin.get_commands(),
                }
                for name, plugin in self.plugins.items()
            },
            "failed": dict(self.failed_plugins),
            "total_loaded": len(self.plugins),
            "total_failed": len(self.failed_plugins),
        }

    async def dispatch(self, context: CommandContext) -> CommandOutcome:
        owner = self.get_all_commands().get(context.command)
        if owner is None:
            return CommandOutcome(f"❌ Unknown command: {context.command}", EXIT_RUNTIME)

        plugin = self.plugins[owner]
        self.logger.info(f"Handling {context.command} command with {plugin.name} plugin")
        try:
            message = await plugin.handle_command(context)
            return CommandOutcome(message or f"✅ {context.command} finished")
        except LabError as e:
            self.logger.error(f"❌ {context.command} failed: {e}", exc_info=e.exit_code == EXIT_RUNTIME)
            return CommandOutcome(f"❌ {context.command} failed: {e}", e.exit_code)
        except Exception as e:
            self.logger.error(f"Error handling {context.command} command: {str(e)}", exc_info=True)
            return CommandOutcome(f"❌ Error processing {context.command} command: {e}", EXIT_RUNTIME)

    async def cleanup(self):
        for plugin in self.plugins.values():
            try:
                await plugin.cleanup()
            except Exception as e:
                self.logger.warning(f"⚠️ Cleanup of {plugin.name} failed: {e}")
