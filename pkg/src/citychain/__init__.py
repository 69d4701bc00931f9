"""Desk-scale civic ledger: hash-chained blocks, majority-vote
replication, a JSON smart-contract access layer and four city
workflows, all deterministic under a seed."""

__version__ = "0.1.0"
