#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
PushMix - Launcher Script

Runs the pushmix command line from the repository root without installing
the package.

Usage:
    python launch.py synth --spec example_synthetic_spec.json --out-dir output/synth

Or with validation first:
    python launch.py --validate train --examples output/synth/examples.jsonl --out output/model.json
"""

import sys
from pathlib import Path


def main():
    """Main launcher function."""
    src_dir = Path(__file__).parent / "src"
    if str(src_dir) not in sys.path:
        sys.path.insert(0, str(src_dir))

    argv = [arg for arg in sys.argv[1:] if arg not in ("--validate", "-v")]

    if len(argv) < len(sys.argv) - 1:
        print("🔍 Running validation check...")
        try:
            from utils.validation import run_validation
            results = run_validation()
            if not results.get('overall', {}).get('success', False):
                print("\n❌ Validation failed! Please fix issues before running.")
                return 1
            if not argv:
                return 0
            print("\n🚀 Validation passed! Running pushmix...")
        except ImportError as e:
            print(f"❌ Could not import validation module: {e}")
            return 1

    try:
        from main import main as app_main
        return app_main(argv or ["--help"])
    except ImportError as e:
        print(f"❌ Error importing pushmix: {e}")
        print("💡 Make sure you're in the correct directory and dependencies are installed:")
        print("   pip install -r src/requirements.txt")
        return 1
    except SystemExit as e:
        return e.code


if __name__ == "__main__":
    sys.exit(main())
