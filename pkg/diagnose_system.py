#!/usr/bin/env python3
"""
paver - System Diagnostic Tool
Checks dependencies, configuration and the bundled specifications.
"""

import importlib
import os
import sys
from datetime import datetime
from pathlib import Path

HERE = Path(__file__).resolve().parent


def print_header(title):
    """Print a formatted header."""
    print("\n" + "=" * 60)
    print(f"🔍 {title}")
    print("=" * 60)


def check_dependencies():
    """Check if all required dependencies are installed."""
    print_header("DEPENDENCY CHECK")

    dependencies = {
        'lark': 'Specification grammar',
        'networkx': 'Graph analyses',
        'numpy': 'Random number generation',
        'pandas': 'Trace tables',
        'dotenv': 'Environment configuration',
    }

    missing = []
    for package, description in dependencies.items():
        try:
            module = importlib.import_module(package)
            version = getattr(module, '__version__', 'unknown')
            print(f"✅ {package:12} {version:10} - {description}")
        except ImportError:
            missing.append(package)
            print(f"❌ {package:12} {'MISSING':10} - {description}")

    if missing:
        print(f"\n⚠️ Missing dependencies: {', '.join(missing)}")
        print("💡 Run: pip install -r requirements.txt")
    else:
        print("\n🎉 All dependencies are installed!")
    return not missing


def check_project_files():
    """Check that configuration and bundled specifications exist."""
    print_header("PROJECT FILES CHECK")

    required_files = {
        'config.json': 'Main configuration file',
        'ucp.paver': 'Utopian communication protocol',
        'ucp-spec.paver': 'Desired external behaviour',
        'abp.paver': 'Alternating bit protocol',
        'requirements.txt': 'Python dependencies list',
    }

    missing = []
    for file, description in required_files.items():
        path = HERE / file
        if path.exists():
            print(f"✅ {file:20} ({path.stat().st_size:,} bytes) - {description}")
        else:
            print(f"❌ {file:20} {'MISSING':>12}  - {description}")
            missing.append(file)

    env_file = HERE / '.env'
    print(f"\n{'✅' if env_file.exists() else '⚪'} .env {'found' if env_file.exists() else 'not found (optional)'}")
    if os.getenv('PAVER_CONFIG'):
        print(f"📄 PAVER_CONFIG points to {os.getenv('PAVER_CONFIG')}")
    return not missing


def check_configuration():
    """Show the effective configuration values."""
    print_header("CONFIGURATION CHECK")
    try:
        from config_local import config
    except Exception as e:
        print(f"❌ Could not load configuration: {e}")
        return False
    print(f"📄 Config file: {config.config_file}")
    for key in ('expansion.state_limit', 'equivalence.default_mode', 'simulation.runs',
                'simulation.step_cap', 'simulation.seed', 'logging.level'):
        print(f"   {key:26} {config.get(key)}")
    limit = config.get('expansion.state_limit')
    if not isinstance(limit, int) or limit < 1:
        print("❌ expansion.state_limit must be a positive integer")
        return False
    return True


def check_bundled_specifications():
    """Parse and expand every bundled specification."""
    print_header("BUNDLED SPECIFICATION CHECK")
    try:
        from paver_errors import PaverError
        from protocols import load_bundled
        from semantics import expand
    except ImportError as e:
        print(f"❌ Import failed: {e}")
        return False

    ok = True
    for name in ('ucp', 'ucp-spec', 'abp'):
        try:
            pts = expand(load_bundled(name))
            print(f"✅ {name:10} parses and expands to {pts.num_states} states")
        except (PaverError, OSError) as e:
            print(f"❌ {name:10} {e}")
            ok = False
    return ok


def generate_report():
    """Generate a comprehensive diagnostic report."""
    print_header("SYSTEM DIAGNOSTIC REPORT")
    print(f"🕒 Scan Time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"🐍 Python Version: {sys.version}")
    print(f"📁 Working Directory: {os.getcwd()}")

    checks = {
        "Dependencies": check_dependencies(),
        "Project Files": check_project_files(),
        "Configuration": check_configuration(),
    }
    checks["Bundled Specifications"] = checks["Dependencies"] and check_bundled_specifications()

    print_header("DIAGNOSTIC SUMMARY")
    passed = sum(checks.values())
    total = len(checks)
    for check_name, result in checks.items():
        print(f"{'✅ PASS' if result else '❌ FAIL'} {check_name}")
    print(f"\n📊 Overall Score: {passed}/{total} ({passed/total*100:.1f}%)")

    if passed == total:
        print("\n🎉 SYSTEM READY!")
        print("\n🚀 Next Steps:")
        print("   python quick_start.py")
    else:
        print("\n⚠️ ISSUES DETECTED")
        print("\n💡 Common Solutions:")
        print("   • Install missing dependencies: pip install -r requirements.txt")
        print("   • Restore the bundled .paver files next to paver_cli.py")
    return passed == total


if __name__ == "__main__":
    sys.exit(0 if generate_report() else 1)
