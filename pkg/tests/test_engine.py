import math

import pytest

from adaptersim.engine import (
    CostModel,
    LinkState,
    Simulation,
    SimulationInvariantError,
    simulate,
)
from adaptersim.metrics import write_records_csv
from adaptersim.model import (
    CostModelParams,
    HardwareProfile,
    RequestSpec,
    config_from_dict,
    US_PER_SEC,
)


def cfg_with(**sections):
    return config_from_dict(sections)


def state_like(input_tokens, generated, adapter="r8-0", rid=0):
    from adaptersim.model import RequestState

    spec = RequestSpec(rid, 0, input_tokens, max(generated + 1, 1), adapter)
    st = RequestState(spec, predicted_output_tokens=1)
    st.tokens_generated = generated
    return st


RANKS = {"r8-0": 8, "r128-0": 128}


# -- step duration ----------------------------------------------------------------


def test_step_duration_single_decoder_fixture():
    cost = CostModel(
        CostModelParams(
            prefill_base_us=0,
            prefill_per_token_us=0,
            decode_base_us=2000,
            decode_per_token_us=1,
            adapter_compute_per_rank_token_us=0,
        )
    )
    decoder = state_like(90, 10)  # 100 active tokens
    assert cost.step_duration([], [decoder], RANKS) == 2100


def test_step_duration_linear_in_tokens():
    cost = CostModel(
        CostModelParams(
            prefill_base_us=0,
            prefill_per_token_us=10,
            decode_base_us=0,
            decode_per_token_us=4,
            adapter_compute_per_rank_token_us=0,
        )
    )
    one = cost.step_duration([state_like(50, 0)], [state_like(30, 10)], RANKS)
    two = cost.step_duration([state_like(100, 0)], [state_like(60, 20)], RANKS)
    assert two == 2 * one


def test_step_duration_rank_difference_is_adapter_term():
    params = CostModelParams(adapter_compute_per_rank_token_us=0.5)
    cost = CostModel(params)
    small = cost.step_duration([state_like(100, 0, "r8-0")], [], RANKS)
    large = cost.step_duration([state_like(100, 0, "r128-0")], [], RANKS)
    assert large - small == round(0.5 * (128 - 8) * 100)


# -- link ------------------------------------------------------------------------


def test_transfer_timing_rank128_idle_link():
    link = LinkState(HardwareProfile())
    done = link.enqueue(268_435_456, now=0)
    assert done == 500 + 16_778  # fixed latency + ceil(bytes/bandwidth)
    assert done == pytest.approx(17_280, abs=5)


def test_back_to_back_transfers_serialize():
    link = LinkState(HardwareProfile())
    first = link.enqueue(67_108_864, now=0)
    second = link.enqueue(67_108_864, now=0)
    assert first == 500 + 4195
    assert second == 4195 + 500 + 4195
    assert link.cumulative_bytes == 2 * 67_108_864


def test_zero_byte_transfer_costs_fixed_latency():
    link = LinkState(HardwareProfile())
    assert link.enqueue(0, now=123) == 123 + 500


# -- single-request runs ------------------------------------------------------------


def one_request_cfg():
    return cfg_with(
        workload={"arrival_rate": 1.0, "duration_s": 5.0, "seed": 1},
        scheduler={"policy": "fifo"},
    )


def single_spec(input_tokens=512, output_tokens=4, adapter="r32-0"):
    return [RequestSpec(0, 1000, input_tokens, output_tokens, adapter)]


def test_ttft_with_resident_adapter_is_prefill_step():
    cfg = one_request_cfg()
    sim = Simulation(cfg, specs=single_spec())
    sim.cache.set_capacity(10_000, set(), 0)
    sim.cache.begin_load("r32-0", 0)
    sim.cache.finish_load("r32-0", 0)
    result = sim.run()
    record = result.records[0]
    expected = sim.cost.prefill_step_us(512, 32)
    assert record.ttft_us == expected
    assert record.adapter_hit


def test_ttft_with_cold_adapter_adds_transfer():
    cfg = one_request_cfg()
    sim_cold = Simulation(cfg, specs=single_spec(adapter="r128-0"))
    cold = sim_cold.run().records[0]
    sim_warm = Simulation(cfg, specs=single_spec(adapter="r128-0"))
    sim_warm.cache.set_capacity(10_000, set(), 0)
    sim_warm.cache.begin_load("r128-0", 0)
    sim_warm.cache.finish_load("r128-0", 0)
    warm = sim_warm.run().records[0]
    assert cold.ttft_us - warm.ttft_us == 500 + 16_778
    assert not cold.adapter_hit


def test_zero_requests_zero_records_zero_bytes():
    cfg = cfg_with(workload={"duration_s": 0.0})
    result = simulate(cfg)
    assert result.records == []
    assert result.bytes_transferred == 0


def test_solo_request_slowdown_is_exactly_one():
    cfg = one_request_cfg()
    result = Simulation(cfg, specs=single_spec(output_tokens=40)).run()
    assert result.records[0].slowdown == pytest.approx(1.0)


# -- isolated time -------------------------------------------------------------------


def test_isolated_time_minimal_output():
    cfg = one_request_cfg()
    sim = Simulation(cfg, specs=[])
    spec = RequestSpec(0, 0, 100, 1, "r32-0")
    expected = sim.link.transfer_us(67_108_864) + sim.cost.prefill_step_us(100, 32)
    assert sim.isolated_time(spec) == expected


def test_isolated_time_output_scaling_with_flat_decode():
    cfg = cfg_with(cost={"decode_per_token_us": 0.0})
    sim = Simulation(cfg, specs=[])
    base = sim.isolated_time(RequestSpec(0, 0, 100, 10, "r32-0"))
    double = sim.isolated_time(RequestSpec(0, 0, 100, 20, "r32-0"))
    per_step = round(
        cfg.cost.decode_base_us + cfg.cost.adapter_compute_per_rank_token_us * 32
    )
    assert double - base == 10 * per_step


def test_isolated_time_golden_value_default_config():
    sim = Simulation(one_request_cfg(), specs=[])
    # Frozen from the default cost model: (512 in, 128 out, rank 32).
    assert sim.isolated_time(RequestSpec(0, 0, 512, 128, "r32-0")) == 2_212_973


# -- determinism and conservation ------------------------------------------------------


def busy_cfg(policy="mlq", cache="cost-aware", seed=3):
    return cfg_with(
        workload={"arrival_rate": 1.0, "duration_s": 120.0, "seed": seed},
        scheduler={"policy": policy, "refresh_us": 20 * US_PER_SEC},
        cache={"policy": cache},
        hardware={"total_token_slots": 9000, "link_bandwidth_bytes_per_sec": 100_000_000},
    )


def test_identical_runs_are_byte_identical(tmp_path):
    paths = []
    for i in (1, 2):
        result = simulate(busy_cfg())
        path = tmp_path / f"run{i}.csv"
        write_records_csv(result.records, str(path))
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_every_request_finishes_exactly_once():
    result = simulate(busy_cfg())
    ids = [r.request_id for r in result.records]
    assert len(ids) == len(set(ids))
    cfg = busy_cfg()
    sim = Simulation(cfg)
    expected = len(sim.specs)
    assert len(simulate(cfg).records) == expected


def test_final_memory_is_clean():
    cfg = busy_cfg()
    sim = Simulation(cfg)
    sim.run()
    assert sim.kv_actual == 0
    assert sim.kv_reserved == 0
    assert all(e.rc == 0 for e in sim.cache.entries.values())
    assert sim.cache.used_tokens == sim.cache.resident_tokens_recount()


def test_work_conservation_all_requests_admitted_under_load():
    # Bounded wait at moderate load: everything finishes within the run.
    for policy in ("fifo", "sjf", "mlq"):
        result = simulate(busy_cfg(policy=policy))
        assert result.records, policy
        assert max(r.ttft_us for r in result.records) < 300 * US_PER_SEC


def test_prefetch_modes_run_and_reduce_misses():
    base = busy_cfg()
    off = simulate(base)
    on = simulate(
        cfg_with(
            workload={"arrival_rate": 1.0, "duration_s": 120.0, "seed": 3},
            scheduler={"policy": "mlq", "refresh_us": 20 * US_PER_SEC},
            cache={"policy": "cost-aware", "prefetch": "queue-driven"},
            hardware={
                "total_token_slots": 9000,
                "link_bandwidth_bytes_per_sec": 100_000_000,
            },
        )
    )
    assert on.adapter_hits >= off.adapter_hits


# -- bypass and squash --------------------------------------------------------------


def squash_scenario():
    """Deterministic bypass-then-squash fixture.

    One running request pins adapter A in a cache sized for a single
    rank-128 adapter. The queue head needs adapter B (blocked on adapter
    memory); a later request for A bypasses it, overruns its prediction
    while the head is still waiting, and must be squashed and re-executed.
    """
    cfg = cfg_with(
        workload={
            "arrival_rate": 1.0,
            "duration_s": 10.0,
            "seed": 1,
            "num_adapters": 5,
            "rank_set": [128],
        },
        scheduler={"policy": "mlq", "refresh_us": 3600 * US_PER_SEC},
        cache={"policy": "cost-aware", "token_cap": 768},
        hardware={"total_token_slots": 8000},
    )
    specs = [
        RequestSpec(0, 1_000, 600, 520, "r128-0"),   # filler, pins A
        RequestSpec(1, 100_000, 400, 100, "r128-1"),  # head, blocked on B
        RequestSpec(2, 200_000, 100, 80, "r128-0"),   # bypass candidate on A
    ]
    sim = Simulation(cfg, specs=specs)
    predictions = {0: 500, 1: 300, 2: 50}
    for state in sim.states:
        state.predicted_output_tokens = predictions[state.request_id]
    return sim


def test_bypass_admits_and_squashes_overrunning_request():
    sim = squash_scenario()
    result = sim.run()
    by_id = {r.request_id: r for r in result.records}
    assert by_id[2].bypassed
    assert by_id[2].squashes == 1
    assert result.squash_events == 1
    # All three still finish exactly once.
    assert sorted(by_id) == [0, 1, 2]
    # The squashed request restarted: its first token came after the head
    # request was finally admitted and the filler finished.
    assert by_id[2].e2e_us > by_id[0].e2e_us - 200_000


def test_bypass_request_within_prediction_is_not_squashed():
    sim = squash_scenario()
    # Same scenario, but the candidate finishes within its prediction.
    sim.states[2].spec = RequestSpec(2, 200_000, 100, 45, "r128-0")
    result = sim.run()
    by_id = {r.request_id: r for r in result.records}
    assert by_id[2].bypassed
    assert by_id[2].squashes == 0
    assert result.squash_events == 0


def test_overrun_continues_when_victim_already_admitted():
    sim = squash_scenario()
    # Shrink the filler so the head unblocks before the candidate overruns.
    sim.states[0].spec = RequestSpec(0, 1_000, 600, 30, "r128-0")
    sim.states[0].predicted_output_tokens = 30
    result = sim.run()
    by_id = {r.request_id: r for r in result.records}
    assert by_id[2].bypassed
    assert by_id[2].squashes == 0


def test_deadlock_raises_invariant_error():
    cfg = cfg_with(
        workload={"arrival_rate": 1.0, "duration_s": 5.0, "seed": 1},
        scheduler={"policy": "fifo", "quota_fraction": 1.0},
        hardware={"total_token_slots": 4000},
    )
    specs = [RequestSpec(0, 0, 2000, 1990, "r32-0")]  # can never fit memory
    with pytest.raises(SimulationInvariantError, match="deadlock"):
        Simulation(cfg, specs=specs).run()
