"""SID assignment, the two policy builders, equivalence-class reporting."""

import pytest

from branchland.asm import parse_program
from branchland.ir import SID_MAX, SID_MIN
from branchland.policy import (
    MODULE_REGION,
    AuthorizationPolicy,
    Granularity,
    PolicyError,
    assign_sids,
    build_cfg_policy,
    build_func_policy,
    ec_report,
)

from conftest import CALLBACK_TINY, TWO_CALLER


def test_granularity_validation():
    with pytest.raises(ValueError):
        Granularity("file")
    with pytest.raises(ValueError):
        Granularity("custom")  # needs groups
    with pytest.raises(ValueError):
        Granularity("function", groups={"a.entry": "g"})
    assert Granularity.custom({"a.entry": "g"}).groups == {"a.entry": "g"}


def test_assign_sids_function_granularity():
    p = parse_program(TWO_CALLER)
    sm = assign_sids(p, Granularity.function())
    # Declaration order, starting at 1.
    assert sm.region_to_sid == {"tgt": 1, "other": 2, "c_ok": 3, "c_bad": 4, "main": 5}
    assert sm.sid_of_block("main", "p1") == 5
    # Landing targets live in their own namespace, also from 1.
    assert sm.target_to_sid == {"tgt": 1, "other": 2}
    assert assign_sids(p, Granularity.function()).region_to_sid == sm.region_to_sid


def test_assign_sids_module_granularity():
    p = parse_program(TWO_CALLER)
    sm = assign_sids(p, Granularity.module())
    assert sm.region_to_sid == {MODULE_REGION: 1}
    assert sm.sid_of_block("c_bad", "ret") == 1


def test_assign_sids_basic_block_granularity():
    p = parse_program(TWO_CALLER)
    sm = assign_sids(p, Granularity.basic_block())
    assert sm.region_to_sid["tgt.entry"] == 1
    assert sm.region_to_sid["main.p2"] == 9
    assert len(sm.region_to_sid) == 9
    assert sm.sid_of_block("c_ok", "ret") == sm.region_to_sid["c_ok.ret"]


def test_assign_sids_targets_listed_after_taken():
    # Address-taken functions get target SIDs first, then listed-only names.
    p = parse_program(CALLBACK_TINY)
    sm = assign_sids(p, Granularity.function())
    assert sm.target_to_sid == {"on_even": 1, "on_odd": 2}


def test_custom_granularity():
    p = parse_program(TWO_CALLER)
    groups = {
        "tgt.entry": "lib", "other.entry": "lib",
        "c_ok.entry": "callers", "c_ok.ret": "callers",
        "c_bad.entry": "callers", "c_bad.ret": "callers",
        "main.entry": "app", "main.p1": "app", "main.p2": "app",
    }
    sm = assign_sids(p, Granularity.custom(groups))
    assert sm.region_to_sid == {"lib": 1, "callers": 2, "app": 3}
    assert sm.sid_of_block("c_bad", "ret") == 2


def test_custom_granularity_must_cover_all_blocks():
    p = parse_program(TWO_CALLER)
    with pytest.raises(PolicyError):
        assign_sids(p, Granularity.custom({"main.entry": "app"}))


def test_sids_stay_in_range():
    from branchland.evaluate import build_policy, load_program

    for name in ("switch_120", "sig_family"):
        p = load_program(name)
        for kind in ("func", "cfg"):
            sm, pol = build_policy(p, kind)
            for sid in list(sm.region_to_sid.values()) + list(sm.target_to_sid.values()):
                assert SID_MIN <= sid <= SID_MAX


def test_func_policy_callback_tiny():
    p = parse_program(CALLBACK_TINY)
    sm = assign_sids(p, Granularity.function())
    pol = build_func_policy(p, sm)
    assert pol.kind == "func_type"
    # Only the address-taken handler is protected; on_odd is merely listed.
    assert pol.target_sids == {"on_even": 1}
    (site,) = pol.protected_sites()
    assert site.function == "main" and site.kind == "indirect_call"
    # The site may reach every address-taken int(int), which is just on_even.
    assert pol.site_targets[site] == ("on_even",)
    assert pol.allowed_sources == {1: {sm.region_to_sid["main"]}}


def test_cfg_policy_callback_tiny():
    p = parse_program(CALLBACK_TINY)
    sm = assign_sids(p, Granularity.function())
    pol = build_cfg_policy(p, sm)
    assert pol.kind == "cfg"
    assert set(pol.target_sids) == {"on_even", "on_odd"}
    src = sm.region_to_sid["main"]
    assert pol.allowed_sources == {1: {src}, 2: {src}}


TAKEN_UNLISTED = """\
.entry main

.func used(int(int))
entry:
    addi a0, a0, 1
    jalr zero, ra, 0

.func orphan(int(int))
entry:
    addi a0, a0, 2
    jalr zero, ra, 0

.func main(void())
entry:
    la t0, used
    la t1, orphan
    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[used]
fin:
    addi a0, zero, 0
    ecall 0
"""


def test_cfg_unlisted_taken_gets_empty_set():
    p = parse_program(TAKEN_UNLISTED)
    sm = assign_sids(p, Granularity.function())
    pol = build_cfg_policy(p, sm)
    # orphan's address escapes but nobody declares it a target: its landing
    # stays protected with an empty source set, so every arrival fails.
    assert pol.allowed_sources[sm.target_to_sid["orphan"]] == set()
    assert pol.allowed_sources[sm.target_to_sid["used"]] == {sm.region_to_sid["main"]}


def test_func_policy_groups_by_signature():
    p = parse_program(TAKEN_UNLISTED)
    sm = assign_sids(p, Granularity.function())
    pol = build_func_policy(p, sm)
    (site,) = pol.protected_sites()
    # Both taken functions share int(int), so the type policy allows both.
    assert set(pol.site_targets[site]) == {"used", "orphan"}
    src = sm.region_to_sid["main"]
    assert pol.allowed_sources[sm.target_to_sid["used"]] == {src}
    assert pol.allowed_sources[sm.target_to_sid["orphan"]] == {src}


JUMP_ONLY = """\
.entry main

.func main(void())
entry:
    la t0, main.fin
    jalr zero, t0, 0  @indirect kind=jump targets=[main.fin]
fin:
    addi a0, zero, 0
    ecall 0
"""


def test_jump_sites_cfg_only():
    p = parse_program(JUMP_ONLY)
    sm = assign_sids(p, Granularity.function())
    f = build_func_policy(p, sm)
    assert f.protected_sites() == []
    assert f.target_sids == {}
    c = build_cfg_policy(p, sm)
    (site,) = c.protected_sites()
    assert site.kind == "indirect_jump"
    assert c.target_sids == {"main.fin": sm.target_to_sid["main.fin"]}


def test_cfg_policy_dedupes_listed_targets():
    text = TAKEN_UNLISTED.replace("targets=[used]", "targets=[used,used]")
    p = parse_program(text)
    pol = build_cfg_policy(p, assign_sids(p, Granularity.function()))
    (site,) = pol.protected_sites()
    assert pol.site_targets[site] == ("used",)


MISSING_SIG = """\
.entry main

.func f(int(int))
entry:
    addi a0, a0, 1
    jalr zero, ra, 0

.func main(void())
entry:
    la t0, f
    jalr ra, t0, 0  @indirect kind=call targets=[f]
fin:
    addi a0, zero, 0
    ecall 0
"""


def test_call_without_signature():
    p = parse_program(MISSING_SIG)
    sm = assign_sids(p, Granularity.function())
    with pytest.raises(PolicyError):
        build_func_policy(p, sm)
    # The declared-target policy never consults signatures.
    pol = build_cfg_policy(p, sm)
    assert len(pol.protected_sites()) == 1


TWO_SITE = """\
.entry main

.func fa(int(int))
entry:
    addi a0, a0, 1
    jalr zero, ra, 0

.func fb(int(int))
entry:
    addi a0, a0, 2
    jalr zero, ra, 0

.func main(void())
entry:
    addi sp, sp, -8
    sd ra, 0(sp)
    la t0, fa
    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[fa]
s2:
    la t0, fb
    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[fb]
fin:
    ld ra, 0(sp)
    addi sp, sp, 8
    addi a0, zero, 0
    ecall 0
"""


def test_ec_report_hand_case():
    p = parse_program(TWO_SITE)
    sm = assign_sids(p, Granularity.function())
    f = build_func_policy(p, sm)
    c = build_cfg_policy(p, sm)
    rf = ec_report(f)
    assert (rf.sites, rf.avg_ec, rf.max_ec) == (2, 2.0, 2)
    rc = ec_report(c, baseline=f)
    assert (rc.sites, rc.avg_ec, rc.max_ec) == (2, 1.0, 1)
    assert rc.reduction_pct == pytest.approx(50.0)
    d = rc.to_json()
    assert d == {"sites": 2, "avg_ec": 1.0, "max_ec": 1, "reduction_pct": 50.0}


def test_ec_report_mixed_classes():
    # One two-way site plus one one-way site: average lands between.
    text = TAKEN_UNLISTED.replace(
        "    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[used]\nfin:",
        "    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[used]\ns2:\n"
        "    jalr ra, t1, 0  @indirect kind=call sig=int(int) targets=[orphan]\nfin:",
    )
    p = parse_program(text)
    sm = assign_sids(p, Granularity.function())
    rf = ec_report(build_func_policy(p, sm))
    assert (rf.sites, rf.avg_ec, rf.max_ec) == (2, 2.0, 2)
    rc = ec_report(build_cfg_policy(p, sm), baseline=build_func_policy(p, sm))
    assert rc.avg_ec == 1.0 and rc.reduction_pct == pytest.approx(50.0)


def test_ec_report_excludes_jumps():
    p = parse_program(JUMP_ONLY)
    sm = assign_sids(p, Granularity.function())
    r = ec_report(build_cfg_policy(p, sm))
    assert (r.sites, r.avg_ec, r.max_ec) == (0, 0.0, 0)
    assert r.reduction_pct is None


def test_ec_report_empty_baseline():
    p = parse_program(JUMP_ONLY)
    sm = assign_sids(p, Granularity.function())
    c = build_cfg_policy(p, sm)
    f = build_func_policy(p, sm)
    assert ec_report(c, baseline=f).reduction_pct is None


def test_policy_json_shape():
    p = parse_program(CALLBACK_TINY)
    sm = assign_sids(p, Granularity.function())
    d = build_cfg_policy(p, sm).to_json()
    assert d["schema"] == "policy-v1"
    assert d["kind"] == "cfg"
    assert d["granularity"] == "function"
    assert d["regions"]["main"] == 4
    assert d["targets"] == {"on_even": 1, "on_odd": 2}
    assert d["allowed_sources"] == {"1": [4], "2": [4]}
    (site,) = d["sites"]
    assert site["possible_targets"] == ["on_even", "on_odd"]
    assert site["targets"] == ["on_even", "on_odd"]
    assert site["signature"] == "int(int)"
    assert site["sid"] == 4

    sd = sm.to_json()
    assert sd["schema"] == "policy-v1"
    assert sd["groups"] is None
    assert sd["regions"] == {"on_even": 1, "on_odd": 2, "attacker_goal": 3, "main": 4}
