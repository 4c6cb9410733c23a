"""
Shared constants, errors, validation, monitoring and file helpers
"""
