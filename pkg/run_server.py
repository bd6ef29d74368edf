#!/usr/bin/env python3
"""Start the API dev server and keep it running"""
import os
import subprocess
import sys
import time

PORT = os.getenv("PORT", "8005")

if __name__ == "__main__":
    print(f"Starting FastAPI dev server on port {PORT}...")
    proc = subprocess.Popen(
        [sys.executable, "-m", "uvicorn", "app.main:app", "--host", "0.0.0.0", "--port", PORT],
        cwd=os.path.dirname(os.path.abspath(__file__)),
    )

    # Give it time to start
    time.sleep(3)

    print(f"Server process PID: {proc.pid}")
    print(f"Server should be running on http://localhost:{PORT}")
    print("Press Ctrl+C to stop...")

    try:
        proc.wait()
    except KeyboardInterrupt:
        print("\nShutting down server...")
        proc.terminate()
        proc.wait()

    sys.exit(0)
