"""
Profiler Plugin - side-by-side timing of two training configs

`compare` pre-trains both configs for the same number of steps on the same
data with the same seed, optionally several times, and reports median
per-component times, reductions and the end-to-end speedup as JSON, an
aligned text table, CSV and an SVG proportion chart.
"""

import asyncio
import json
import logging
from pathlib import Path
from typing import List, Optional

from core.config import RunConfig, load_run_config
from core.errors import ValidationError
from core.manifest import Manifest
from core.plugin import CommandContext, LabPlugin
from core.runtime import write_run_metadata
from profiler.render import (
    comparison_table, median_report, proportion_table, render_proportions_svg, write_csv,
)
from profiler.timing import TimingReport
from trainer.pretrain import pretrain_loop


def same_data(a: RunConfig, b: RunConfig) -> bool:
    """Both configs train on the same utterances from the same audio files"""
    ma, mb = Manifest.load(a.data.train_manifest), Manifest.load(b.data.train_manifest)
    return [(e.utt_id, e.path.resolve()) for e in ma] == [(e.utt_id, e.path.resolve()) for e in mb]


class ProfilerPlugin(LabPlugin):
    def __init__(self, logger: Optional[logging.Logger] = None):
        super().__init__("profiler", logger=logger)
        self.description = "Per-component timing comparison of two training configs"
        self.default_steps = 200

    def get_commands(self) -> List[str]:
        return ["compare"]

    async def handle_command(self, context: CommandContext) -> Optional[str]:
        if context.command == "compare":
            return await self._handle_compare(context)
        return f"Unknown command: {context.command}"

    def _load(self, path: str, context: CommandContext, steps: int) -> RunConfig:
        overrides = dict(context.get_arg("config_overrides") or {})
        overrides.setdefault("run", {})["seed"] = context.seed
        overrides.setdefault("profiler", {})["window_steps"] = steps
        overrides["profiler"]["enabled"] = True
        return load_run_config(path, overrides)

    async def _handle_compare(self, context: CommandContext) -> str:
        path_a, path_b = context.get_arg("config_a"), context.get_arg("config_b")
        if not path_a or not path_b:
            raise ValidationError("compare: two config files are required")
        steps = context.steps or self.default_steps
        repeats = context.get_arg("repeats") or 1
        config_a, config_b = self._load(path_a, context, steps), self._load(path_b, context, steps)
        if not same_data(config_a, config_b):
            raise ValidationError(f"compare: {path_a} and {path_b} use different training manifests "
                                  f"({config_a.data.train_manifest} vs {config_b.data.train_manifest})")

        name_a, name_b = Path(path_a).stem, Path(path_b).stem
        if name_a == name_b:
            name_a, name_b = f"{name_a}_a", f"{name_b}_b"
        run_dir = context.run_dir
        write_run_metadata(run_dir, "compare", None, context.seed,
                           {"configs": {name_a: config_a.config_hash(), name_b: config_b.config_hash()},
                            "steps": steps, "repeats": repeats})

        runs = {name_a: [], name_b: []}
        for repeat in range(repeats):
            for name, config in ((name_a, config_a), (name_b, config_b)):
                self.logger.info(f"⏱️ {name}: run {repeat + 1}/{repeats}, {steps} steps")
                runs[name].append(await self._measure(config, run_dir / f"{name}_{repeat}", steps))

        base, new = median_report(runs[name_a]), median_report(runs[name_b])
        table = comparison_table(base, new, (name_a, name_b))
        compared = new.with_baseline(base)
        reports = {name_a: base, name_b: new}

        (run_dir / "compare.txt").write_text(table + "\n\n" + proportion_table(reports) + "\n")
        (run_dir / "compare.json").write_text(json.dumps({
            "baseline": name_a,
            "new": name_b,
            "steps": steps,
            "repeats": repeats,
            "report": compared.to_dict(),
            "runs": {name: [r.to_dict() for r in reps] for name, reps in runs.items()},
        }, indent=2, sort_keys=True))
        write_csv(run_dir / "compare.csv", reports)
        render_proportions_svg(run_dir / "proportions.svg", reports)
        self.logger.info("\n" + table)
        return f"✅ compare: {name_b} is {compared.speedup():.2f}x {name_a} end to end ({run_dir})\n{table}"

    async def _measure(self, config: RunConfig, run_dir: Path, steps: int) -> TimingReport:
        result = await asyncio.to_thread(pretrain_loop, config, run_dir, steps, None, False)
        return result.profiler.total_report()
