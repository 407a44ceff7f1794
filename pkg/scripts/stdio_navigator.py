"""Toy external navigator for ``--policy remote:cmd:...``: always takes the first listed viewpoint.

    navpruner eval --world w.json --policy "remote:cmd:python scripts/stdio_navigator.py" --out runs/remote
"""

import re

from navpruner.remote import serve

_NAV = re.compile(r"Navigable: (\S+) \(")


def handle(request: dict) -> dict:
    ids = _NAV.findall(request["prompt"].split("### Observation", 1)[-1])
    if request["step"] >= 6 or not ids:
        return {"action": "finished", "thought": "Stopping."}
    return {"action": ids[0], "thought": f"Taking the first option, {ids[0]}."}


if __name__ == "__main__":
    serve(handle)
