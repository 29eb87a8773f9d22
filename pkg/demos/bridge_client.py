"""Drive the NDJSON bridge from a separate process, as an external
simulator would, and show the first few replies.

    python3 demos/bridge_client.py
"""

import subprocess
import sys
import tempfile
from pathlib import Path

import socnavsim
from socnavsim.bridge import Client, drive_scripted

DATA = Path(socnavsim.__file__).parent / "data"


class Tracing(Client):
    shown = 0

    def request(self, msg):
        reply = super().request(msg)
        if self.shown < 4:
            self.shown += 1
            print(">>", {k: v for k, v in msg.items() if k != "scenario"})
            print("<<", reply)
        return reply


def main():
    out = Path(tempfile.mkdtemp(prefix="socnavsim_bridge_"))
    proc = subprocess.Popen([sys.executable, "-m", "socnavsim", "serve", "--stdio", "--out", str(out)],
                            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    try:
        fin = drive_scripted(Tracing(proc.stdout, proc.stdin),
                             (DATA / "warehouse_workers.yaml").read_text(), base_dir=DATA,
                             duration=30.0, record=[(5.0, 25.0)])
    finally:
        proc.stdin.close()
        proc.wait()
    print("...")
    print("report:", fin["report"])


if __name__ == "__main__":
    main()
