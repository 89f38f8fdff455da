"""Linux key recovery: collision collection, key search, KASLR recovery and parameter analysis."""

from .analysis import (MonteCarloResult, ParameterChoice, best_nu, binom_tail, estimate_attack_time,
                       expected_pairs, optimal_parameters, parameter_table, prob_fn, prob_fp,
                       prob_fp_given, run_sessions, simulate_fp_fn)
from .collect import (BURST_LABELS, CHROME_OFFSETS, BurstObservation, CandidatePairSet, CollisionSet,
                      RetestSignal, collect_candidates, intersect_bursts, select_bursts, split_bursts,
                      window_bound)
from .kaslr import LinuxDeviceId, device_id_from_key, reconstruct_kernel_base
from .search import (AcceptedKey, CachedResult, InsufficientCollisions, KeySearchConfig, SearchResult,
                     accepted_report, append_reports, build_probe_set, cached_search, count_matches,
                     exhaustive_search, load_cache, merge_accepted, nested_search, partition,
                     report_index, search_range, search_range_reference, targeted_reidentify,
                     thread_count)
