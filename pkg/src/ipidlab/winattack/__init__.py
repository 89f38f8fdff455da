"""Windows key extraction: plans, the two phases, and device identification."""

from .phase1 import (Phase1Result, PreparedPlan, detect_global_counter, gap_configurations,
                     merge_results, phase1_extract, phase1_extract_batch, prepare_plan, slot_offsets)
from .phase2 import WindowsExtraction, pair_equation_sides, phase2_extract, t15
from .plan import (MeasurementPlan, ScreeningReport, build_coefficient_matrix, choose_parameters,
                   random_phase1_ips, random_plan, validate_ip_set)
from .tracking import (WindowsDeviceId, abstract_scheme_fingerprint, derive_device_id,
                       extraction_record, fast_track_candidates, fast_track_match, load_records,
                       append_records, predict_counter, record_extraction, verify_extraction_9bit)


def extract_windows(phase1_ipids, pair_ipids, plan, prepared=None, try_permutations=False,
                    max_gap=0, both_orders=False):
    """Run both phases; returns ``(phase1 survivors, sorted extractions)``."""
    prep = prepared or prepare_plan(plan)
    p1 = phase1_extract(phase1_ipids, plan, prep, try_permutations=try_permutations, max_gap=max_gap)
    out = set()
    for cand in p1:
        out.update(phase2_extract(cand, pair_ipids, plan, prep, both_orders=both_orders, max_gap=max_gap))
    return p1, sorted(out)
