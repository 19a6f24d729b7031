#!/usr/bin/env python3
"""
System test script - Verify the environment can run the attack lab
"""
import sys
import importlib.util
from pathlib import Path

def check_python_version():
    """Check Python version"""
    version = sys.version_info
    if version.major >= 3 and version.minor >= 9:
        print("✅ Python version:", f"{version.major}.{version.minor}.{version.micro}")
        return True
    else:
        print("❌ Python 3.9+ required. You have:", f"{version.major}.{version.minor}.{version.micro}")
        return False

def check_package(package_name, import_name=None):
    """Check if a Python package is installed"""
    if import_name is None:
        import_name = package_name

    spec = importlib.util.find_spec(import_name)
    if spec is not None:
        print(f"✅ {package_name} is installed")
        return True
    else:
        print(f"❌ {package_name} is NOT installed")
        return False

def check_numpy_version():
    """The conv kernels need numpy's sliding_window_view"""
    try:
        import numpy as np
        if hasattr(np.lib.stride_tricks, "sliding_window_view"):
            print(f"✅ numpy {np.__version__} has sliding_window_view")
            return True
        print(f"❌ numpy {np.__version__} is too old (need 1.20+)")
        return False
    except ImportError:
        return False

def check_backend_imports():
    """Import every backend package once"""
    sys.path.insert(0, str(Path(__file__).resolve().parent / "backend"))
    try:
        from attacks.engine import attack  # noqa: F401
        from evaluation.harness import transfer_matrix  # noqa: F401
        from models.zoo import build_model, forward
        from utils.config import load_run_config  # noqa: F401
        import numpy as np

        model = build_model("ConvNetA", 10, (3, 32, 32), seed=0)
        logits = forward(model, np.zeros((3, 32, 32)))
        print(f"✅ Backend imports work ({model.name} gives {logits.shape[0]} logits)")
        return True
    except Exception as e:
        print(f"❌ Backend import failed: {e}")
        return False

def main():
    """Run all system checks"""
    print("="*60)
    print("ADVLAB - SYSTEM CHECK")
    print("="*60)
    print()

    checks = []

    # Python checks
    print("🐍 Python Environment:")
    checks.append(check_python_version())

    print("\n📦 Python Packages:")
    required_packages = [
        ("numpy", "numpy"),
        ("pydantic", "pydantic"),
        ("python-dotenv", "dotenv"),
        ("pillow", "PIL"),
        ("pytest", "pytest"),
    ]

    for package_name, import_name in required_packages:
        checks.append(check_package(package_name, import_name))
    checks.append(check_numpy_version())

    print("\n🧠 Backend:")
    checks.append(check_backend_imports())

    # Summary
    print("\n" + "="*60)
    passed = sum(checks)
    total = len(checks)

    if passed == total:
        print(f"✨ ALL CHECKS PASSED ({passed}/{total})")
        print("\nNext steps:")
        print("  1. Train:  python backend/main.py --config configs/default_run.json train")
        print("  2. Attack: python backend/main.py --config configs/default_run.json attack "
              "--surrogate convnet_a --attack dtmi-ce-li")
        print("  3. Eval:   python backend/main.py --config configs/default_run.json eval")
        print("\nOr use the startup script: ./start.sh")
    else:
        print(f"⚠️  SOME CHECKS FAILED ({passed}/{total} passed)")
        print("\nRun ./fix_dependencies.sh, then try again.")

    print("="*60)

    return passed == total

if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
