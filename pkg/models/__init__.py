"""
Persistent entities: patch manifests, networks and checkpoints
"""

from .manifest import PatchRecord, PatchManifest

__all__ = ['PatchRecord', 'PatchManifest']
