import os
import json
import random
import logging
import tempfile
import subprocess
from datetime import datetime
from typing import Callable, Dict, List, Optional

import numpy as np

from utils.constants import IMAGE_EXTENSIONS


class FileHelper:
    @staticmethod
    def atomic_write(path: str, writer: Callable[[str], None]):
        """Write through a temp file in the target directory, then rename over the target"""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        # no leading dot: torch.save derives the archive record name from the stem
        suffix = os.path.splitext(path)[1] or '.tmp'
        fd, tmp_path = tempfile.mkstemp(prefix='tmp_', suffix=suffix, dir=directory)
        os.close(fd)
        try:
            writer(tmp_path)
            os.replace(tmp_path, path)
            logging.debug(f"Atomically wrote {path}")
        except Exception:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise

    @staticmethod
    def atomic_write_json(path: str, payload: Dict, indent: Optional[int] = 2):
        def _write(tmp_path):
            with open(tmp_path, 'w', encoding='utf-8') as f:
                json.dump(payload, f, indent=indent)
        FileHelper.atomic_write(path, _write)

    @staticmethod
    def list_images(directory: str) -> List[str]:
        """Sorted image filenames in a directory"""
        if not os.path.isdir(directory):
            raise FileNotFoundError(f"Directory not found: {directory}")
        return sorted(name for name in os.listdir(directory)
                      if os.path.splitext(name)[1].lower() in IMAGE_EXTENSIONS)

    @staticmethod
    def find_pair(directory: str, filename: str) -> Optional[str]:
        """Find a file with the same stem in another directory (any image extension)"""
        stem = os.path.splitext(filename)[0]
        exact = os.path.join(directory, filename)
        if os.path.isfile(exact):
            return exact
        for ext in IMAGE_EXTENSIONS:
            candidate = os.path.join(directory, stem + ext)
            if os.path.isfile(candidate):
                return candidate
        return None


class RunHelper:
    @staticmethod
    def seed_everything(seed: int, deterministic: bool = False):
        """Seed python, numpy and torch generators"""
        import torch

        random.seed(seed)
        np.random.seed(seed)
        torch.manual_seed(seed)
        if deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        logging.debug(f"Seeded all generators with {seed}")

    @staticmethod
    def git_describe() -> Optional[str]:
        """git describe of the working tree, or None outside a repository"""
        try:
            result = subprocess.run(
                ['git', 'describe', '--always', '--dirty', '--tags'],
                cwd=os.path.dirname(os.path.abspath(__file__)),
                capture_output=True, text=True, timeout=5
            )
            return result.stdout.strip() or None if result.returncode == 0 else None
        except (OSError, subprocess.SubprocessError):
            return None

    @staticmethod
    def write_run_record(run_dir: str, command: str, config: Dict, seed: int) -> str:
        """Record config, code version and seed for a subcommand under run_dir/run.json"""
        record = {
            'command': command,
            'started_at': datetime.now().isoformat(),
            'git_describe': RunHelper.git_describe(),
            'seed': seed,
            'config': config
        }
        path = os.path.join(run_dir, 'run.json')
        FileHelper.atomic_write_json(path, record)
        logging.info(f"Run record written to {path}")
        return path
