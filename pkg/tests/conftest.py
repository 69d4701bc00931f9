from __future__ import annotations

import random

import pytest

from citychain import identity, ledger, workflows


@pytest.fixture(scope="session")
def keypairs():
    return [identity.keypair_from_material(f"test-wallet-{i}") for i in range(6)]


def build_seeded_chain(seed: int, num_blocks: int, keypairs, txs_per_block: int = 1) -> ledger.Chain:
    """Deterministic chain of energy-production transactions."""
    rng = random.Random(seed)
    chain = ledger.Chain.new()
    tick = 0
    for index in range(1, num_blocks + 1):
        txs = []
        for _ in range(txs_per_block):
            tick += 1
            kp = keypairs[rng.randrange(len(keypairs))]
            env = workflows.build_produce(
                kp.address, rng.choice(["solar", "wind", "other"]), rng.randint(1, 10_000)
            )
            txs.append(ledger.make_transaction(kp, env, tick))
        tick += 1
        proposer = keypairs[index % len(keypairs)]
        block = ledger.make_block(index, chain.tip.block_hash, txs, proposer.address, tick)
        chain = ledger.append_block(chain, block)
    return chain


@pytest.fixture(scope="session")
def seeded_chain(keypairs):
    return build_seeded_chain(2024, 50, keypairs, txs_per_block=2)
