import sys
import json
import logging
from functools import wraps
from typing import Tuple, Optional


class ShadowPatchError(Exception):
    """Base error carrying a machine-readable error code"""
    error_code = 'SHADOWPATCH_ERROR'


class ArgumentError(ShadowPatchError, ValueError):
    error_code = 'ARGUMENT_ERROR'


class ImageFormatError(ShadowPatchError, ValueError):
    error_code = 'FORMAT_ERROR'


class ConfigurationError(ShadowPatchError):
    error_code = 'CONFIGURATION_ERROR'


class CheckpointError(ShadowPatchError):
    error_code = 'CHECKPOINT_ERROR'


class TrainingStepError(ShadowPatchError):
    error_code = 'TRAINING_STEP_ERROR'

    def __init__(self, message: str, component: Optional[str] = None, step: Optional[int] = None):
        super().__init__(message)
        self.component = component
        self.step = step


class ErrorHandler:
    @staticmethod
    def handle_argument_error(error: Exception, context: str) -> Tuple[dict, int]:
        """Handle bad arguments and malformed inputs"""
        logging.error(f"Argument error in {context}: {str(error)}")
        return {
            'success': False,
            'message': f"Invalid input: {str(error)}",
            'error_code': getattr(error, 'error_code', 'ARGUMENT_ERROR'),
            'context': context
        }, 2

    @staticmethod
    def handle_file_error(error: Exception, context: str) -> Tuple[dict, int]:
        """Handle missing or unreadable files"""
        logging.error(f"File error in {context}: {str(error)}")
        return {
            'success': False,
            'message': f"File operation failed: {str(error)}",
            'error_code': 'FILE_ERROR',
            'context': context,
            'filename': getattr(error, 'filename', None)
        }, 1

    @staticmethod
    def handle_training_error(error: TrainingStepError, context: str) -> Tuple[dict, int]:
        """Handle non-finite losses and other step failures"""
        logging.error(f"Training error in {context}: {str(error)}")
        return {
            'success': False,
            'message': str(error),
            'error_code': error.error_code,
            'context': context,
            'component': error.component,
            'step': error.step
        }, 1

    @staticmethod
    def handle_runtime_error(error: Exception, context: str) -> Tuple[dict, int]:
        """Handle configuration, checkpoint and unexpected errors"""
        logging.error(f"Error during {context}: {str(error)}")
        return {
            'success': False,
            'message': str(error),
            'error_code': getattr(error, 'error_code', 'INTERNAL_ERROR'),
            'context': context
        }, 1


def emit_error_line(payload: dict):
    """Write a structured error as one JSON line on stderr"""
    sys.stderr.write(json.dumps(payload) + '\n')
    sys.stderr.flush()


def handle_errors(operation_name: str):
    """Decorator turning subcommand exceptions into structured stderr lines and exit codes"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                result = func(*args, **kwargs)
                return 0 if result is None else result
            except TrainingStepError as te:
                payload, code = ErrorHandler.handle_training_error(te, operation_name)
            except (ArgumentError, ImageFormatError, ConfigurationError) as ve:
                payload, code = ErrorHandler.handle_argument_error(ve, operation_name)
            except (FileNotFoundError, IsADirectoryError, PermissionError) as fe:
                payload, code = ErrorHandler.handle_file_error(fe, operation_name)
            except Exception as e:
                payload, code = ErrorHandler.handle_runtime_error(e, operation_name)
            emit_error_line(payload)
            return code
        return wrapper
    return decorator
