"""Record a cassette for a curriculum run against the deterministic stub model.

    python3 scripts/record_cassette.py --config tests/data/acceptance_config.json \
        --seeds 0,1,2 --cassette tests/data/cassettes/acceptance.jsonl --out /tmp/rec

Each seed is run once in record mode; every request (the curriculum request
and each progress review) is appended to one cassette with its response.
Replaying the cassette with the same config and any of the seeds then makes
zero network calls.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from mobilecl.cli import RunConfig, parse_seeds, train_seed
from mobilecl.llm import Cassette, ChatSession, HttpChatClient, LlmProvider
from mobilecl.stub import StubModel


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", required=True)
    ap.add_argument("--seeds", type=parse_seeds, default=[0], help="e.g. 0,1,2")
    ap.add_argument("--cassette", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    rc = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
    stub = StubModel(rc.env, rc.encoding, **rc.scripted_kwargs())
    client = HttpChatClient("http://stub.invalid/v1", api_key="", transport=stub.transport())
    session = ChatSession(
        "record", client=client, cassette=Cassette(args.cassette, "record"), model=rc.llm.model, temperature=rc.llm.temperature
    )
    for seed in args.seeds:
        before = len(stub.requests)
        manifest = train_seed(rc, seed, Path(args.out) / f"seed_{seed}", provider=LlmProvider(session, rc.env, rc.encoding))
        print(f"seed {seed}: recorded {len(stub.requests) - before} requests; result: {manifest['result']}")


if __name__ == "__main__":
    main()
