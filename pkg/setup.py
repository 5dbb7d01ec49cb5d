#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
PushMix - Setup Script

Installs dependencies, prepares the working directories and makes sure the
example schema exists.
"""

import sys
import subprocess
from pathlib import Path

SRC_DIR = Path(__file__).parent / "src"


def check_python_version():
    """Check if Python version is compatible."""
    min_version = (3, 8)
    current_version = sys.version_info[:2]

    if current_version < min_version:
        print(f"❌ Python {'.'.join(map(str, min_version))} or higher is required")
        print(f"   Currently running Python {'.'.join(map(str, current_version))}")
        return False

    print(f"✅ Python {'.'.join(map(str, current_version))} - Compatible")
    return True


def install_dependencies():
    """Install required dependencies."""
    requirements_file = SRC_DIR / "requirements.txt"

    if not requirements_file.exists():
        print(f"❌ Requirements file not found: {requirements_file}")
        return False

    print("📦 Installing dependencies...")
    result = subprocess.run(
        [sys.executable, "-m", "pip", "install", "-r", str(requirements_file)],
        capture_output=True, text=True,
    )
    if result.returncode != 0:
        print("❌ Failed to install dependencies:")
        print(result.stderr)
        return False

    print("✅ Dependencies installed successfully")
    return True


def create_directories():
    """Create the output and log directories."""
    print("📁 Creating directories...")
    for directory in ("output", "logs"):
        try:
            Path(directory).mkdir(exist_ok=True)
            print(f"  ✅ {directory}/")
        except OSError as e:
            print(f"  ❌ Failed to create {directory}/: {e}")
            return False
    return True


def setup_environment():
    """Copy .env.example to .env when no .env exists yet."""
    env_example_path = Path(".env.example")
    env_path = Path(".env")

    if env_path.exists() or not env_example_path.exists():
        return True

    print("⚙️  Setting up environment configuration...")
    try:
        env_path.write_text(env_example_path.read_text())
        print(f"  ✅ Created {env_path}")
        return True
    except OSError as e:
        print(f"  ❌ Failed to create {env_path}: {e}")
        return False


def write_example_schema():
    """Regenerate example_schema.json from the default schema if it is missing."""
    sys.path.insert(0, str(SRC_DIR))
    try:
        from config.settings import DEFAULT_SCHEMA_FILE
        from models.schema import default_schema, save_schema
    except ImportError as e:
        print(f"  ❌ Could not import schema module: {e}")
        return False

    if Path(DEFAULT_SCHEMA_FILE).exists():
        return True
    schema = default_schema()
    save_schema(schema, DEFAULT_SCHEMA_FILE)
    print(f"  ✅ Wrote {Path(DEFAULT_SCHEMA_FILE).name} (m={schema.assignment_dims}, n={schema.prediction_dims})")
    return True


def run_validation():
    """Run validation check."""
    print("🔍 Running validation check...")
    sys.path.insert(0, str(SRC_DIR))

    try:
        from utils.validation import run_validation as validate
        results = validate()
        return results.get('overall', {}).get('success', False)
    except Exception as e:
        print(f"❌ Validation failed: {e}")
        return False


def main():
    """Main setup function."""
    print("🚀 PushMix - Setup")
    print("=" * 40)

    if not check_python_version():
        return 1
    if not create_directories():
        return 1
    if not install_dependencies():
        return 1

    setup_environment()
    write_example_schema()

    print("\n" + "=" * 40)
    if run_validation():
        print("\n✅ SETUP COMPLETED SUCCESSFULLY!")
        print("\n🎯 Next steps:")
        print("   1. Generate a synthetic shop: python launch.py synth --spec example_synthetic_spec.json --out-dir output/synth")
        print("   2. Fit a model: python launch.py train --examples output/synth/examples.jsonl --out output/model.json")
        print("   3. Read documentation/quick_start_guide.md for the full pipeline")
        return 0

    print("\n❌ SETUP COMPLETED WITH ISSUES")
    print("\n💡 Please check the validation results above")
    return 1


if __name__ == "__main__":
    sys.exit(main())
