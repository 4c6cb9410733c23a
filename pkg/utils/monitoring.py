import os
import time
import json
import logging
import functools
from datetime import datetime
from typing import Dict, Optional


class PerformanceMonitor:
    @staticmethod
    def monitor_stage(stage_name: str):
        """Decorator to log how long a pipeline stage takes"""
        def decorator(func):
            @functools.wraps(func)
            def wrapper(*args, **kwargs):
                start_time = time.time()
                try:
                    result = func(*args, **kwargs)
                    execution_time = time.time() - start_time
                    logging.info(f"Stage {stage_name} finished in {execution_time:.3f}s")
                    return result
                except Exception as e:
                    execution_time = time.time() - start_time
                    logging.error(f"Stage {stage_name} failed after {execution_time:.3f}s: {str(e)}")
                    raise
            return wrapper
        return decorator


class ApplicationMetrics:
    @staticmethod
    def track_patch_manifest(image_count: int, counts: Dict[str, int], skipped: int,
                             processing_time: float):
        """Log patch-set construction metrics"""
        metrics = {
            'timestamp': datetime.now().isoformat(),
            'operation': 'build_manifest',
            'images': image_count,
            'counts': counts,
            'skipped_images': skipped,
            'processing_time': round(processing_time, 3)
        }
        logging.info(f"PATCH_METRICS: {json.dumps(metrics)}")

    @staticmethod
    def track_epoch(epoch: int, steps: int, mean_losses: Dict[str, float], epoch_time: float):
        """Log a per-epoch training summary"""
        metrics = {
            'timestamp': datetime.now().isoformat(),
            'operation': 'train_epoch',
            'epoch': epoch,
            'steps': steps,
            'mean_losses': {k: round(v, 6) for k, v in mean_losses.items()},
            'epoch_time': round(epoch_time, 3),
            'steps_per_second': steps / epoch_time if epoch_time > 0 else 0
        }
        logging.info(f"TRAIN_METRICS: {json.dumps(metrics)}")

    @staticmethod
    def track_evaluation(protocol: str, item_count: int, scores: Dict[str, Optional[float]],
                         evaluation_time: float):
        """Log evaluation summary metrics"""
        metrics = {
            'timestamp': datetime.now().isoformat(),
            'operation': 'evaluation',
            'protocol': protocol,
            'items': item_count,
            'scores': scores,
            'evaluation_time': round(evaluation_time, 3)
        }
        logging.info(f"EVAL_METRICS: {json.dumps(metrics)}")


class TrainingLog:
    """Append-only JSON-lines log of per-step loss breakdowns"""

    FIELDS = ('step', 'epoch', 'l_mat', 'l_sm', 'l_bd', 'l_adv', 'l_total', 'd_loss')

    def __init__(self, path: str, append: bool = False):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._handle = open(path, 'a' if append else 'w', encoding='utf-8')

    def write(self, record: Dict):
        line = {key: record.get(key) for key in self.FIELDS}
        self._handle.write(json.dumps(line) + '\n')
        self._handle.flush()

    def close(self):
        if not self._handle.closed:
            self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()

    @staticmethod
    def read(path: str):
        """Load a training log back as a list of dicts"""
        with open(path, 'r', encoding='utf-8') as f:
            return [json.loads(line) for line in f if line.strip()]
