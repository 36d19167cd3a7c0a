"""Methodology tests: constraint derivation, exact grouping vs brute force,
evaluation counts and the step-4 decision rule."""

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicesim.catalog import (
    BBDefinition, DEFAULT_CROSS_BB_THRESHOLD, EvolutionCycle, FunctionalDomain,
    GroupingReport, Optionality, Originator, Placement, ProcedureSpec,
    RefinementAction, Reusability, SeparationConstraint, SeparationCriterion,
    SFCatalog, SFDescriptor, derive_separation_constraints, evaluate_grouping,
    group_into_bbs, load_catalog, refine, render_grouping,
)
from slicesim.errors import (
    DuplicateSfError, MissingAttributeError, SchemaError, UnassignedSfError,
)

from conftest import reference_catalog_text


def make_sf(sf_id, domain=FunctionalDomain.CONNECTIVITY,
            placement=Placement.CORE, reusability=Reusability.MULTI_SERVICE,
            optionality=Optionality.ALL_USE_CASES,
            evolution=EvolutionCycle.SLOW):
    return SFDescriptor(
        sf_id=sf_id, name=sf_id, description="", originator=Originator.THREE_GPP,
        functional_domain=domain, placement=placement, reusability=reusability,
        optionality=optionality, evolution_cycle=evolution)


def catalog_of(sfs, procedures=()):
    return SFCatalog(sfs={sf.sf_id: sf for sf in sfs},
                     procedures={p.procedure_id: p for p in procedures})


# -- independent oracles ------------------------------------------------------

def all_partitions(items):
    """Every set partition of `items`, generated independently of the solver."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partition in all_partitions(rest):
        for i, block in enumerate(partition):
            yield partition[:i] + [block + [first]] + partition[i + 1:]
        yield partition + [[first]]


def oracle_feasible(partition, catalog, constraints):
    forbidden = {frozenset((c.sf_a, c.sf_b)) for c in constraints}
    for block in partition:
        domains = {catalog.sfs[sf].functional_domain for sf in block}
        if len(domains) > 1:
            return False
        for a, b in itertools.combinations(block, 2):
            if frozenset((a, b)) in forbidden:
                return False
    return True


def oracle_score(partition, procedures):
    owner = {sf: i for i, block in enumerate(partition) for sf in block}
    pairs = set()
    for proc in procedures:
        for producer, consumer in proc.steps:
            if owner[producer] != owner[consumer]:
                pairs.add(frozenset((owner[producer], owner[consumer])))
    return len(pairs)


def oracle_best_score(catalog, constraints):
    best = None
    for partition in all_partitions(list(catalog.sfs)):
        if not oracle_feasible(partition, catalog, constraints):
            continue
        score = oracle_score(partition, catalog.procedures.values())
        if best is None or score < best:
            best = score
    return best


# -- loading -------------------------------------------------------------------

class TestLoadCatalog:
    def test_reference_catalog_loads(self):
        cat = load_catalog(reference_catalog_text())
        assert len(cat.sfs) == 23
        assert len(cat.procedures) == 6

    def test_empty_document_is_a_valid_empty_catalog(self):
        cat = load_catalog("")
        assert cat.sfs == {} and cat.procedures == {}

    def test_duplicate_sf_id_rejected(self):
        text = """
sf device-paging
  name: a
  domain: mobility
  originator: 3gpp
  placement: core
  reusability: multi_service
  optionality: all_use_cases
  evolution: slow
end
sf device-paging
  name: b
  domain: mobility
  originator: 3gpp
  placement: core
  reusability: multi_service
  optionality: all_use_cases
  evolution: slow
end
"""
        with pytest.raises(DuplicateSfError):
            load_catalog(text)

    def test_missing_separation_attribute_rejected(self):
        text = """
sf x
  name: x
  domain: mobility
  originator: 3gpp
  placement: core
  reusability: multi_service
  optionality: all_use_cases
end
"""
        with pytest.raises(MissingAttributeError):
            load_catalog(text)

    def test_malformed_document_rejected(self):
        with pytest.raises(SchemaError):
            load_catalog("sf x\n  name: x\n")  # unterminated block

    def test_procedure_with_unknown_sf_rejected(self):
        with pytest.raises(SchemaError):
            load_catalog("procedure p\n  step a -> b\nend\n")


# -- step 2 ---------------------------------------------------------------------

class TestSeparationConstraints:
    def test_fast_vs_slow_evolution_separates(self):
        auth = make_sf("authentication", domain=FunctionalDomain.SECURITY,
                       evolution=EvolutionCycle.FAST)
        session = make_sf("session-management", evolution=EvolutionCycle.SLOW)
        constraints = derive_separation_constraints(catalog_of([auth, session]))
        assert SeparationConstraint(
            "authentication", "session-management",
            SeparationCriterion.EVOLUTION_CYCLE) in constraints

    def test_identical_attributes_produce_no_constraint(self):
        a = make_sf("policy-control", optionality=Optionality.USE_CASE_SPECIFIC)
        b = make_sf("handover-management", optionality=Optionality.USE_CASE_SPECIFIC)
        assert derive_separation_constraints(catalog_of([a, b])) == frozenset()

    def test_either_placement_conflicts_with_nothing(self):
        edge = make_sf("a", placement=Placement.EDGE)
        either = make_sf("b", placement=Placement.EITHER)
        core = make_sf("c", placement=Placement.CORE)
        constraints = derive_separation_constraints(catalog_of([edge, either, core]))
        placement_pairs = {frozenset((c.sf_a, c.sf_b)) for c in constraints
                           if c.criterion is SeparationCriterion.PLACEMENT}
        assert placement_pairs == {frozenset(("a", "c"))}

    def test_reference_constraints_match_exhaustive_pairwise_scan(self):
        cat = load_catalog(reference_catalog_text())
        got = derive_separation_constraints(cat)
        expected = set()
        for a, b in itertools.combinations(sorted(cat.sfs.values(), key=lambda s: s.sf_id), 2):
            if {a.placement, b.placement} == {Placement.EDGE, Placement.CORE}:
                expected.add(SeparationConstraint(a.sf_id, b.sf_id, SeparationCriterion.PLACEMENT))
            if a.reusability != b.reusability:
                expected.add(SeparationConstraint(a.sf_id, b.sf_id, SeparationCriterion.REUSABILITY))
            if a.optionality != b.optionality:
                expected.add(SeparationConstraint(a.sf_id, b.sf_id, SeparationCriterion.OPTIONALITY))
            if a.evolution_cycle != b.evolution_cycle:
                expected.add(SeparationConstraint(a.sf_id, b.sf_id, SeparationCriterion.EVOLUTION_CYCLE))
        assert got == frozenset(expected)

    def test_constraint_symmetry_is_structural(self):
        c1 = SeparationConstraint("b", "a", SeparationCriterion.REUSABILITY)
        c2 = SeparationConstraint("a", "b", SeparationCriterion.REUSABILITY)
        assert c1 == c2


# -- step 3 ---------------------------------------------------------------------

TABLE_GROUPS = {
    "AF": {"dplane-control", "an-management", "cn-access-control", "path-record"},
    "CM": {"network-access-control", "access-functions-control",
           "session-management", "slice-management", "roaming-management"},
    "MM": {"mobility-policy-enforcement", "device-location-tracking",
           "device-paging", "mobility-assistance"},
    "SAM": {"identity-management", "authentication", "single-sign-on",
            "security-monitoring"},
    "FM": {"forwarding-monitoring", "path-definition", "flow-decision"},
    "CGHF": {"pubsub-management", "context-generation", "context-management"},
}


class TestGrouping:
    def test_reference_catalog_reproduces_the_six_blocks(self):
        cat = load_catalog(reference_catalog_text())
        bbs = group_into_bbs(cat, derive_separation_constraints(cat))
        assert {bb.bb_id: set(bb.sf_set) for bb in bbs} == TABLE_GROUPS

    def test_single_sf_catalog_yields_one_block(self):
        cat = catalog_of([make_sf("only")])
        bbs = group_into_bbs(cat, frozenset())
        assert len(bbs) == 1 and bbs[0].sf_set == frozenset({"only"})

    def test_toy_catalog_matches_partition_enumeration_oracle(self):
        # 4 SFs, 2 domains, 1 constraint, 2 procedures.
        sfs = [
            make_sf("a1", domain=FunctionalDomain.MOBILITY),
            make_sf("a2", domain=FunctionalDomain.MOBILITY,
                    evolution=EvolutionCycle.FAST),
            make_sf("b1", domain=FunctionalDomain.SECURITY),
            make_sf("b2", domain=FunctionalDomain.SECURITY),
        ]
        procs = [
            ProcedureSpec("p1", "p1", (("a1", "a2"), ("a2", "b1"))),
            ProcedureSpec("p2", "p2", (("b1", "b2"), ("a1", "b2"))),
        ]
        cat = catalog_of(sfs, procs)
        constraints = derive_separation_constraints(cat)
        bbs = group_into_bbs(cat, constraints)
        report = evaluate_grouping(bbs, procs)
        assert report.total_inter_bb_interfaces == oracle_best_score(cat, constraints)
        # the constrained pair is split
        for bb in bbs:
            assert not {"a1", "a2"} <= bb.sf_set

    def test_grouping_never_mixes_domains_or_colocates_constraints(self):
        cat = load_catalog(reference_catalog_text())
        constraints = derive_separation_constraints(cat)
        forbidden = {frozenset((c.sf_a, c.sf_b)) for c in constraints}
        for bb in group_into_bbs(cat, constraints):
            domains = {cat.sfs[sf].functional_domain for sf in bb.sf_set}
            assert len(domains) == 1
            for a, b in itertools.combinations(sorted(bb.sf_set), 2):
                assert frozenset((a, b)) not in forbidden

    def test_grouping_is_deterministic_under_input_shuffling(self):
        cat = load_catalog(reference_catalog_text())
        baseline = None
        for seed in range(3):
            rng = random.Random(seed)
            ids = list(cat.sfs)
            rng.shuffle(ids)
            shuffled = SFCatalog(
                sfs={i: cat.sfs[i] for i in ids},
                procedures=dict(reversed(list(cat.procedures.items()))))
            constraints = derive_separation_constraints(shuffled)
            rendered = render_grouping(
                group_into_bbs(shuffled, constraints),
                evaluate_grouping(group_into_bbs(shuffled, constraints),
                                  shuffled.procedures.values()))
            if baseline is None:
                baseline = rendered
            assert rendered == baseline


@st.composite
def small_catalogs(draw):
    n = draw(st.integers(min_value=1, max_value=6))
    ids = [f"sf{i}" for i in range(n)]
    domains = [draw(st.sampled_from([FunctionalDomain.MOBILITY,
                                     FunctionalDomain.SECURITY,
                                     FunctionalDomain.CONTEXT])) for _ in ids]
    sfs = [make_sf(
        sf_id, domain=domains[i],
        placement=draw(st.sampled_from(list(Placement))),
        reusability=draw(st.sampled_from(list(Reusability))),
        optionality=draw(st.sampled_from(list(Optionality))),
        evolution=draw(st.sampled_from(list(EvolutionCycle))),
    ) for i, sf_id in enumerate(ids)]
    n_procs = draw(st.integers(min_value=0, max_value=3))
    procs = []
    for p in range(n_procs):
        steps = draw(st.lists(
            st.tuples(st.sampled_from(ids), st.sampled_from(ids)),
            min_size=1, max_size=5))
        procs.append(ProcedureSpec(f"p{p}", f"p{p}", tuple(steps)))
    return catalog_of(sfs, procs)


class TestGroupingProperties:
    @settings(max_examples=60, deadline=None)
    @given(small_catalogs())
    def test_score_is_optimal_on_small_instances(self, cat):
        constraints = derive_separation_constraints(cat)
        bbs = group_into_bbs(cat, constraints)
        report = evaluate_grouping(bbs, cat.procedures.values())
        assert report.total_inter_bb_interfaces == oracle_best_score(cat, constraints)

    @settings(max_examples=60, deadline=None)
    @given(small_catalogs())
    def test_partition_soundness(self, cat):
        constraints = derive_separation_constraints(cat)
        forbidden = {frozenset((c.sf_a, c.sf_b)) for c in constraints}
        bbs = group_into_bbs(cat, constraints)
        seen = set()
        for bb in bbs:
            assert len({cat.sfs[sf].functional_domain for sf in bb.sf_set}) == 1
            for a, b in itertools.combinations(sorted(bb.sf_set), 2):
                assert frozenset((a, b)) not in forbidden
            assert not seen & bb.sf_set
            seen |= bb.sf_set
        assert seen == set(cat.sfs)


# -- step 4 ---------------------------------------------------------------------

def two_block_grouping():
    return (
        BBDefinition("X", "X", frozenset({"a", "b"}),
                     frozenset({FunctionalDomain.MOBILITY})),
        BBDefinition("Y", "Y", frozenset({"c"}),
                     frozenset({FunctionalDomain.SECURITY})),
    )


class TestEvaluation:
    def test_single_block_grouping_has_zero_cross(self):
        bbs = (BBDefinition("X", "X", frozenset({"a", "b", "c"}),
                            frozenset({FunctionalDomain.MOBILITY})),)
        proc = ProcedureSpec("p", "p", (("a", "b"), ("b", "c"), ("c", "a")))
        report = evaluate_grouping(bbs, [proc])
        assert report.cross_bb == {"p": 0}
        assert report.intra_bb == {"p": 3}
        assert report.total_inter_bb_interfaces == 0

    def test_attachment_chain_hand_count(self):
        # 5-step chain: auth->SAM handled in one block, slice-select and
        # path-define cross blocks.  Hand count: steps 2, 4 and 5 cross.
        bbs = (
            BBDefinition("SAM", "SAM", frozenset({"auth", "identity"}),
                         frozenset({FunctionalDomain.SECURITY})),
            BBDefinition("CM", "CM", frozenset({"slice-select", "session"}),
                         frozenset({FunctionalDomain.CONNECTIVITY})),
            BBDefinition("FM", "FM", frozenset({"path-define"}),
                         frozenset({FunctionalDomain.FLOW_CONTROL})),
        )
        proc = ProcedureSpec("attach", "attach", (
            ("auth", "identity"),        # intra SAM
            ("auth", "slice-select"),    # SAM -> CM
            ("slice-select", "session"), # intra CM
            ("session", "path-define"),  # CM -> FM
            ("path-define", "auth"),     # FM -> SAM
        ))
        report = evaluate_grouping(bbs, [proc])
        assert report.cross_bb == {"attach": 3}
        assert report.intra_bb == {"attach": 2}
        assert report.total_inter_bb_interfaces == 3
        assert report.cross_bb["attach"] + report.intra_bb["attach"] == len(proc.steps)

    def test_empty_procedure_list(self):
        report = evaluate_grouping(two_block_grouping(), [])
        assert report.cross_bb == {} and report.intra_bb == {}
        assert report.total_inter_bb_interfaces == 0

    def test_unassigned_sf_rejected(self):
        proc = ProcedureSpec("p", "p", (("a", "zz"),))
        with pytest.raises(UnassignedSfError):
            evaluate_grouping(two_block_grouping(), [proc])


class TestRefine:
    @pytest.mark.parametrize("count,action,offending", [
        (3, RefinementAction.ACCEPT, ()),
        (7, RefinementAction.REVISIT_STEP3, ()),
        (11, RefinementAction.REVISIT_STEP1, ("attach",)),
    ])
    def test_threshold_rules(self, count, action, offending):
        report = GroupingReport(cross_bb={"attach": count}, intra_bb={"attach": 0},
                                total_inter_bb_interfaces=1,
                                communicating_pairs=frozenset())
        decision = refine(two_block_grouping(), report, threshold=5)
        assert decision.action is action
        assert decision.offending_procedures == offending

    def test_default_threshold(self):
        report = GroupingReport(cross_bb={"p": DEFAULT_CROSS_BB_THRESHOLD},
                                intra_bb={"p": 0}, total_inter_bb_interfaces=1,
                                communicating_pairs=frozenset())
        assert refine(two_block_grouping(), report).action is RefinementAction.ACCEPT
