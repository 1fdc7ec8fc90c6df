"""Shared builders for the test modules."""
import os
from types import SimpleNamespace

from crypto import KeyRegistry
from pc_protocols import PcConfig, PcEngine, QuorumCertificate, Variant, VerifierPool, Vote, sign_prefixes
from scenario import execute, load_scenario
from simnet import DelayPolicy, run

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, f"{name}.toml")


def run_shipped(name: str, **overrides):
    """Execute a shipped scenario without writing artifacts"""
    return execute(load_scenario(scenario_path(name), **overrides), write=False)


def pc_run(n=4, f=1, L=3, variant=Variant.THREE_ROUND, inputs=None, adversary=None, policy=None, seed=0,
           prefix_signatures=False, codec=None):
    registry = KeyRegistry(n, seed=seed)
    cfg = PcConfig(n=n, f=f, L=L, variant=variant, prefix_signatures=prefix_signatures)
    pool = VerifierPool(registry)
    engines = {p: PcEngine(p, cfg, registry, pool.get(cfg)) for p in range(n)}
    if inputs is None:
        inputs = {p: tuple(f"e{k}".encode() for k in range(L)) for p in range(n)}
    return run(engines, policy or DelayPolicy.synchronized(1), inputs, adversary, codec, seed=seed,
               registry=registry)


def signed_vote(registry, cfg, round_, sender, value, qcs=()):
    """Vote signed with prefix and closing signatures"""
    value = tuple(value)
    signature, prefix_sigs = sign_prefixes(registry.signer(sender).sign_vector, cfg.tag(round_), value)
    return Vote(round_, cfg.instance, sender, value, signature, tuple(qcs), prefix_sigs)


def hand_built_certificates():
    """Three-round votes for n=4, f=1, L=3 wired by hand.

    Round 1 inputs are abc, abc, abd, abe. `qc1_c` certifies abc and `qc1_ab`
    certifies ab. `qc2_mixed` holds votes abc, ab, abc (mcp ab, one continuing
    and one terminal witness); `qc2_full` holds abc three times. `qc3` holds ab
    and abc twice, a range from ab to abc.
    """
    a, b, c, d, e = b"a", b"b", b"c", b"d", b"e"
    registry = KeyRegistry(4, seed=7)
    cfg = PcConfig(n=4, f=1, L=3, prefix_signatures=True)
    r1 = [signed_vote(registry, cfg, 1, p, v) for p, v in enumerate([(a, b, c), (a, b, c), (a, b, d), (a, b, e)])]
    qc1_c = QuorumCertificate(1, (r1[0], r1[1], r1[2]))
    qc1_ab = QuorumCertificate(1, (r1[1], r1[2], r1[3]))
    r2 = {
        0: signed_vote(registry, cfg, 2, 0, (a, b, c), (qc1_c,)),
        1: signed_vote(registry, cfg, 2, 1, (a, b), (qc1_ab,)),
        2: signed_vote(registry, cfg, 2, 2, (a, b, c), (qc1_c,)),
        3: signed_vote(registry, cfg, 2, 3, (a, b, c), (qc1_c,)),
    }
    qc2_mixed = QuorumCertificate(2, (r2[0], r2[1], r2[2]))
    qc2_full = QuorumCertificate(2, (r2[0], r2[2], r2[3]))
    r3 = (signed_vote(registry, cfg, 3, 0, (a, b), (qc2_mixed,)),
          signed_vote(registry, cfg, 3, 1, (a, b, c), (qc2_full,)),
          signed_vote(registry, cfg, 3, 2, (a, b, c), (qc2_full,)))
    return SimpleNamespace(registry=registry, cfg=cfg, qc1_c=qc1_c, qc1_ab=qc1_ab, qc2_mixed=qc2_mixed,
                           qc2_full=qc2_full, qc3=QuorumCertificate(3, r3))
