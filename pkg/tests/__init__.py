"""
Author: Perry Radau
Date: 2025-01-27
Brief description: Test package for personal finance tracker
"""
