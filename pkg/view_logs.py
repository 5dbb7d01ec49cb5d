#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Log Viewer for PushMix

View pipeline logs from outside a running command, e.g. to watch a long
EM fit or a policy study while it runs.

Usage:
    python view_logs.py                  # View latest log file
    python view_logs.py --follow         # Follow log file in real-time (like tail -f)
    python view_logs.py --list           # List all available log files
    python view_logs.py --level WARNING  # Only warnings and errors
    python view_logs.py --restarts       # Only per-restart EM summaries
"""

import sys
import time
import argparse
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "src"))

from config.settings import LOGGING_CONFIG

LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


def logs_directory() -> Path:
    return Path(LOGGING_CONFIG["log_dir"])


def log_files():
    """All pipeline log files, newest first."""
    logs_dir = logs_directory()
    if not logs_dir.exists():
        return []
    files = list(logs_dir.glob(f"{LOGGING_CONFIG['file_prefix']}_*.log"))
    files.sort(key=lambda f: f.stat().st_mtime, reverse=True)
    return files


def find_latest_log():
    """Find the most recent log file, preferring the latest.log pointer."""
    logs_dir = logs_directory()
    if not logs_dir.exists():
        print("❌ No logs directory found. Run a pushmix command first to generate logs.")
        return None

    latest_log = logs_dir / "latest.log"
    if latest_log.exists():
        try:
            if latest_log.is_symlink():
                return latest_log.resolve()
            return Path(latest_log.read_text().strip())
        except OSError:
            pass

    files = log_files()
    if not files:
        print("❌ No log files found.")
        return None
    return files[0]


def list_log_files():
    """List all available log files."""
    files = log_files()
    if not files:
        print("❌ No log files found.")
        return

    print("📝 Available log files:")
    print("=" * 50)
    for i, log_file in enumerate(files):
        size = log_file.stat().st_size
        size_str = f"{size:,} bytes" if size < 1024 else f"{size / 1024:.1f} KB"
        marker = "🟢 (latest)" if i == 0 else "  "
        print(f"{marker} {log_file.name}")
        print(f"     Created: {time.ctime(log_file.stat().st_mtime)}")
        print(f"     Size: {size_str}")
        print()


def make_filter(min_level=None, restarts_only=False):
    """Build a line predicate for the requested level and EM filters."""
    allowed = set(LEVELS[LEVELS.index(min_level):]) if min_level else None

    def keep(line: str) -> bool:
        if allowed is not None and not any(f" - {level} - " in line for level in allowed):
            return False
        if restarts_only and "core.mixture" not in line:
            return False
        if restarts_only and not ("Restart " in line or "Best restart" in line or "Fitting M=" in line):
            return False
        return True

    return keep


def view_log_file(log_file, follow=False, lines=50, keep=None):
    """Print the tail of a log file, optionally following it."""
    if not log_file.exists():
        print(f"❌ Log file not found: {log_file}")
        return
    keep = keep or (lambda line: True)

    print(f"📖 Viewing: {log_file}")
    print(f"📝 Size: {log_file.stat().st_size:,} bytes")
    print("=" * 80)

    try:
        with open(log_file, "r", encoding="utf-8") as f:
            content = [line.rstrip() for line in f.readlines() if keep(line)]
            for line in (content[-lines:] if lines > 0 else content):
                print(line)

            if follow:
                print("🔄 Following log file (Ctrl+C to stop)...")
                while True:
                    line = f.readline()
                    if not line:
                        time.sleep(0.1)
                    elif keep(line):
                        print(line.rstrip())
    except KeyboardInterrupt:
        print("\n🛑 Stopped following log file.")
    except OSError as e:
        print(f"❌ Error reading log file: {e}")


def main():
    parser = argparse.ArgumentParser(
        description="View PushMix pipeline logs",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python view_logs.py                    # View last 50 lines of latest log
  python view_logs.py -f                 # Follow latest log in real-time
  python view_logs.py --lines 0          # View the entire latest log
  python view_logs.py --restarts         # Per-restart EM log-likelihoods
  python view_logs.py --file pushmix_20260101_120000.log
        """,
    )
    parser.add_argument("--follow", "-f", action="store_true", help="Follow log file in real-time")
    parser.add_argument("--lines", "-n", type=int, default=50, help="Number of lines to show (0 = all)")
    parser.add_argument("--file", type=str, help="Specific log file to view")
    parser.add_argument("--list", "-l", action="store_true", help="List all available log files")
    parser.add_argument("--level", choices=LEVELS, help="Minimum level to show")
    parser.add_argument("--restarts", action="store_true", help="Only show EM fit and restart summaries")
    args = parser.parse_args()

    if args.list:
        list_log_files()
        return

    log_file = logs_directory() / args.file if args.file else find_latest_log()
    if not log_file:
        return

    view_log_file(log_file, follow=args.follow, lines=args.lines,
                  keep=make_filter(args.level, args.restarts))


if __name__ == "__main__":
    main()
